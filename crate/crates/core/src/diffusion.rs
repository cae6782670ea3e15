//! Variance-exploding score-based diffusion with `sigma(t) = t`.
//!
//! Forward marginal `H_t = H_0 + t * eps`; the probability-flow ODE
//! `dH/dt = -t * score(H, t)` is integrated backward from `t = T` with
//! explicit Euler steps. Everything here works on flat `f64` tensors and is
//! agnostic to the denoiser behind the [`Denoiser`] trait.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::channel::GeometryCondition;
use crate::dataset::ChannelSample;
use crate::rng::standard_normal;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule {
    /// Horizon `T`; sampling starts from `N(0, T^2 I)`.
    pub horizon: f64,
    pub sigma_min: f64,
    /// Euler steps used by the sampler.
    pub n_steps: usize,
    pub grid: TimeGrid,
}

/// Spacing of the sampler's Euler grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeGrid {
    /// Equal steps in `t` (equivalently in `sigma`).
    #[default]
    Uniform,
    /// Equal ratios `t_{i+1} / t_i`.
    Geometric,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule {
            horizon: 10.0,
            sigma_min: 0.01,
            n_steps: 100,
            grid: TimeGrid::Uniform,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(Error::config("sigma_min", "must be positive"));
        }
        if !(self.horizon > self.sigma_min && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must exceed sigma_min"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Training noise level, log-uniform on `[sigma_min, T]`.
    pub fn sample_training_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (libm::log(self.sigma_min), libm::log(self.horizon));
        let u: f64 = rng.random();
        libm::exp(lo + u * (hi - lo)).clamp(self.sigma_min, self.horizon)
    }

    /// Decreasing grid `T = t_0 > .. > t_n = sigma_min`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = self.n_steps;
        let (hi, lo) = (self.horizon, self.sigma_min);
        (0..=n)
            .map(|i| {
                if i == n {
                    return lo;
                }
                let f = i as f64 / n as f64;
                match self.grid {
                    TimeGrid::Uniform => hi - (hi - lo) * f,
                    TimeGrid::Geometric => hi * libm::pow(lo / hi, f),
                }
            })
            .collect()
    }
}

/// A network (or oracle) predicting the clean tensor from a noisy one.
pub trait Denoiser {
    /// Flat tensor length the denoiser operates on.
    fn tensor_len(&self) -> usize;

    fn denoise(&self, noisy: &[f64], sigma: f64, condition: &GeometryCondition) -> Result<Vec<f64>>;
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// `h0 + sigma * eps`, `eps ~ N(0, I)`.
pub fn perturb<R: Rng + ?Sized>(h0: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    Ok(h0.iter().map(|&v| v + sigma * standard_normal(rng)).collect())
}

/// Training draw for one sample: `sigma` from the schedule's law, then the
/// unit-variance noise tensor (drawn in that order from `rng`).
pub fn draw_training_noise<R: Rng + ?Sized>(schedule: &DiffusionSchedule, len: usize, rng: &mut R) -> (f64, Vec<f64>) {
    let sigma = schedule.sample_training_sigma(rng);
    let eps = (0..len).map(|_| standard_normal(rng)).collect();
    (sigma, eps)
}

/// Per-entry mean square of `d - h0`.
pub fn mean_square_error(d: &[f64], h0: &[f64]) -> f64 {
    d.iter().zip(h0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / h0.len().max(1) as f64
}

fn loss_with<D, R, F>(denoiser: &D, batch: &[ChannelSample], rng: &mut R, mut sigma_of: F) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    if batch.is_empty() {
        return Err(Error::invalid("denoising loss needs a non-empty batch"));
    }
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let sigma = sigma_of(rng);
        let noisy = perturb(&sample.tensor, sigma, rng)?;
        let d = denoiser.denoise(&noisy, sigma, &sample.condition).map_err(|e| e.at_sample(i))?;
        if d.len() != sample.tensor.len() {
            return Err(Error::dims("denoiser output", sample.tensor.len(), d.len()).at_sample(i));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser output".into()).at_sample(i));
        }
        total += mean_square_error(&d, &sample.tensor);
    }
    Ok(total / batch.len() as f64)
}

/// Denoising score-matching loss: per-entry mean square of `D(H_t) - H_0`,
/// averaged over the batch, with `sigma` drawn from the training law.
pub fn denoising_loss<D, R>(denoiser: &D, batch: &[ChannelSample], schedule: &DiffusionSchedule, rng: &mut R) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    schedule.validate()?;
    loss_with(denoiser, batch, rng, |r| schedule.sample_training_sigma(r))
}

/// Same loss at one fixed noise level.
pub fn denoising_loss_at<D, R>(denoiser: &D, batch: &[ChannelSample], sigma: f64, rng: &mut R) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    check_sigma(sigma)?;
    loss_with(denoiser, batch, rng, |_| sigma)
}

/// `(d - h_t) / sigma^2`.
pub fn score_from_denoiser(d: &[f64], h_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("score needs sigma > 0, got {sigma}")));
    }
    if d.len() != h_t.len() {
        return Err(Error::dims("score operands", h_t.len(), d.len()));
    }
    let inv = 1.0 / (sigma * sigma);
    Ok(d.iter().zip(h_t).map(|(a, b)| (a - b) * inv).collect())
}

/// Posterior mean under the prior `N(mu, sigma_d^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    pub mu: Vec<f64>,
    pub sigma_d: f64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Vec<f64>, sigma_d: f64) -> Result<Self> {
        if !(sigma_d >= 0.0) || !sigma_d.is_finite() {
            return Err(Error::invalid(format!("prior std must be >= 0, got {sigma_d}")));
        }
        Ok(AnalyticGaussianDenoiser { mu, sigma_d })
    }

    /// Closed-form score of the perturbed marginal, `-(h - mu)/(sigma_d^2 + sigma^2)`.
    pub fn exact_score(&self, h: &[f64], sigma: f64) -> Vec<f64> {
        let v = self.sigma_d * self.sigma_d + sigma * sigma;
        h.iter().zip(&self.mu).map(|(x, m)| -(x - m) / v).collect()
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn tensor_len(&self) -> usize {
        self.mu.len()
    }

    fn denoise(&self, noisy: &[f64], sigma: f64, _condition: &GeometryCondition) -> Result<Vec<f64>> {
        if noisy.len() != self.mu.len() {
            return Err(Error::dims("analytic denoiser input", self.mu.len(), noisy.len()));
        }
        let sd2 = self.sigma_d * self.sigma_d;
        let s2 = sigma * sigma;
        if sd2 + s2 == 0.0 {
            return Ok(noisy.to_vec());
        }
        if !s2.is_finite() {
            return Ok(self.mu.clone());
        }
        Ok(noisy
            .iter()
            .zip(&self.mu)
            .map(|(h, m)| (sd2 * h + s2 * m) / (sd2 + s2))
            .collect())
    }
}

/// One probability-flow Euler step with `sigma(t) = t`, `d sigma/dt = 1`:
/// `h + dt * t * score`.
pub fn euler_step(h: &mut [f64], t: f64, score: &[f64], dt: f64) {
    for (x, s) in h.iter_mut().zip(score) {
        *x += dt * t * s;
    }
}

/// Integrates the probability-flow ODE from `N(0, T^2 I)` down to `sigma_min`.
pub fn euler_sample<D, R>(denoiser: &D, condition: &GeometryCondition, schedule: &DiffusionSchedule, rng: &mut R) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    schedule.validate()?;
    let mut h: Vec<f64> = (0..denoiser.tensor_len())
        .map(|_| schedule.horizon * standard_normal(rng))
        .collect();
    let grid = schedule.time_grid();
    for (step, w) in grid.windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let d = denoiser.denoise(&h, t, condition)?;
        let score = score_from_denoiser(&d, &h, t)?;
        euler_step(&mut h, t, &score, t - t_next);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler state after Euler step {step}")));
        }
    }
    Ok(h)
}

/// `shadow <- decay * shadow + (1 - decay) * current`.
pub fn ema_update(shadow: &mut [f64], current: &[f64], decay: f64) -> Result<()> {
    if shadow.len() != current.len() {
        return Err(Error::dims("EMA parameters", shadow.len(), current.len()));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid(format!("EMA decay {decay} outside [0, 1]")));
    }
    for (s, c) in shadow.iter_mut().zip(current) {
        *s = decay * *s + (1.0 - decay) * c;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::condition_vector;
    use crate::math::Vec3;
    use crate::rng::stream_rng;
    use alloc::vec;

    fn cond() -> GeometryCondition {
        condition_vector(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap()
    }

    fn sample(tensor: Vec<f64>) -> ChannelSample {
        ChannelSample { condition: cond(), tensor }
    }

    struct Identity(usize);
    impl Denoiser for Identity {
        fn tensor_len(&self) -> usize {
            self.0
        }
        fn denoise(&self, noisy: &[f64], _: f64, _: &GeometryCondition) -> Result<Vec<f64>> {
            Ok(noisy.to_vec())
        }
    }

    struct Zero(usize);
    impl Denoiser for Zero {
        fn tensor_len(&self) -> usize {
            self.0
        }
        fn denoise(&self, _: &[f64], _: f64, _: &GeometryCondition) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.0])
        }
    }

    /// Returns a fixed clean tensor regardless of input.
    struct Oracle(Vec<f64>);
    impl Denoiser for Oracle {
        fn tensor_len(&self) -> usize {
            self.0.len()
        }
        fn denoise(&self, _: &[f64], _: f64, _: &GeometryCondition) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn schedule_defaults_and_grid() {
        let s = DiffusionSchedule::default();
        s.validate().unwrap();
        let g = s.time_grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 10.0);
        assert_eq!(*g.last().unwrap(), 0.01);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        let steps: Vec<f64> = g.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(steps.iter().all(|d| (d - steps[0]).abs() < 1e-12));
        assert!(DiffusionSchedule { sigma_min: 0.0, ..s }.validate().is_err());
        assert!(DiffusionSchedule { horizon: 0.005, ..s }.validate().is_err());
        assert!(DiffusionSchedule { n_steps: 0, ..s }.validate().is_err());
    }

    #[test]
    fn geometric_grid_has_constant_ratio() {
        let s = DiffusionSchedule {
            grid: TimeGrid::Geometric,
            n_steps: 30,
            ..Default::default()
        };
        let g = s.time_grid();
        assert_eq!((g[0], *g.last().unwrap()), (10.0, 0.01));
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        assert!((r.powi(30) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn training_sigma_is_log_uniform() {
        let s = DiffusionSchedule::default();
        let mut rng = stream_rng(1, 0);
        let n = 20000;
        let logs: Vec<f64> = (0..n).map(|_| s.sample_training_sigma(&mut rng).ln()).collect();
        assert!(logs.iter().all(|l| (0.01f64.ln()..=10f64.ln()).contains(l)));
        let mean = logs.iter().sum::<f64>() / n as f64;
        let mid = 0.5 * (0.01f64.ln() + 10f64.ln());
        assert!((mean - mid).abs() < 0.05, "{mean} vs {mid}");
    }

    #[test]
    fn perturb_zero_sigma_and_variance() {
        let mut rng = stream_rng(2, 0);
        let h0 = vec![1.5, -2.0, 0.25];
        assert_eq!(perturb(&h0, 0.0, &mut rng).unwrap(), h0);
        assert!(perturb(&h0, -1.0, &mut rng).is_err());

        let zeros = vec![0.0; 100_000];
        let x = perturb(&zeros, 1.0, &mut rng).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((0.99..=1.01).contains(&var), "{var}");

        let (sa, sb) = (0.6, 1.3);
        let y = perturb(&perturb(&zeros, sa, &mut rng).unwrap(), sb, &mut rng).unwrap();
        let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        let expected = sa * sa + sb * sb;
        assert!((var / expected - 1.0).abs() < 0.02, "{var} vs {expected}");
    }

    #[test]
    fn loss_oracle_identity_and_zero() {
        let s = DiffusionSchedule::default();
        let h0 = vec![0.5, -1.0, 2.0, 0.0];
        let batch = vec![sample(h0.clone())];
        let mut rng = stream_rng(3, 0);
        assert_eq!(denoising_loss(&Oracle(h0.clone()), &batch, &s, &mut rng).unwrap(), 0.0);

        let sigma = 0.7;
        let many: Vec<ChannelSample> = (0..10_000).map(|_| sample(h0.clone())).collect();
        let loss = denoising_loss_at(&Identity(4), &many, sigma, &mut rng).unwrap();
        assert!((loss / (sigma * sigma) - 1.0).abs() < 0.03, "{loss}");

        let ms = h0.iter().map(|v| v * v).sum::<f64>() / 4.0;
        let loss = denoising_loss_at(&Zero(4), &batch, 1e-9, &mut rng).unwrap();
        assert!((loss - ms).abs() < 1e-12);
        assert!(denoising_loss(&Zero(4), &[], &s, &mut rng).is_err());
    }

    #[test]
    fn loss_surfaces_bad_output_with_index() {
        struct Nan;
        impl Denoiser for Nan {
            fn tensor_len(&self) -> usize {
                1
            }
            fn denoise(&self, _: &[f64], _: f64, _: &GeometryCondition) -> Result<Vec<f64>> {
                Ok(vec![f64::NAN])
            }
        }
        let batch = vec![sample(vec![1.0]), sample(vec![2.0])];
        let err = denoising_loss_at(&Nan, &batch, 0.1, &mut stream_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::AtSample { index: 0, .. }));
    }

    #[test]
    fn score_arithmetic_and_gaussian_consistency() {
        assert_eq!(score_from_denoiser(&[3.0], &[1.0], 2.0).unwrap(), vec![0.5]);
        assert_eq!(score_from_denoiser(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), vec![0.0, 0.0]);
        assert!(score_from_denoiser(&[1.0], &[1.0], 0.0).is_err());

        let mut rng = stream_rng(4, 0);
        let mu: Vec<f64> = (0..16).map(|_| standard_normal(&mut rng)).collect();
        let den = AnalyticGaussianDenoiser::new(mu, 0.8).unwrap();
        for &sigma in &[0.01, 0.3, 1.0, 7.0, 10.0] {
            let h: Vec<f64> = (0..16).map(|_| 3.0 * standard_normal(&mut rng)).collect();
            let d = den.denoise(&h, sigma, &cond()).unwrap();
            let s = score_from_denoiser(&d, &h, sigma).unwrap();
            for (a, b) in s.iter().zip(den.exact_score(&h, sigma)) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn analytic_denoiser_limits() {
        let den = AnalyticGaussianDenoiser::new(vec![2.0, -1.0], 0.5).unwrap();
        let h = [4.0, 3.0];
        assert_eq!(den.denoise(&h, 0.0, &cond()).unwrap(), h.to_vec());
        let far = den.denoise(&h, 1e12, &cond()).unwrap();
        assert!((far[0] - 2.0).abs() < 1e-12 && (far[1] + 1.0).abs() < 1e-12);
        let mid = den.denoise(&h, 0.5, &cond()).unwrap();
        assert_eq!(mid, vec![3.0, 1.0]);
        assert!(AnalyticGaussianDenoiser::new(vec![], -1.0).is_err());
    }

    #[test]
    fn single_euler_step() {
        let mut h = [2.0];
        euler_step(&mut h, 1.0, &[-0.5], 0.1);
        assert!((h[0] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn point_mass_prior_collapses() {
        let den = AnalyticGaussianDenoiser::new(vec![5.0; 64], 0.0).unwrap();
        let s = DiffusionSchedule::default();
        let out = euler_sample(&den, &cond(), &s, &mut stream_rng(5, 0)).unwrap();
        assert!(out.iter().all(|v| (v - 5.0).abs() < 0.05), "{out:?}");
    }

    #[test]
    fn sampler_is_reproducible() {
        let den = AnalyticGaussianDenoiser::new(vec![0.0; 8], 1.0).unwrap();
        let s = DiffusionSchedule { n_steps: 20, ..Default::default() };
        let a = euler_sample(&den, &cond(), &s, &mut stream_rng(6, 1)).unwrap();
        let b = euler_sample(&den, &cond(), &s, &mut stream_rng(6, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_reports_divergence_step() {
        struct Explode;
        impl Denoiser for Explode {
            fn tensor_len(&self) -> usize {
                1
            }
            fn denoise(&self, _: &[f64], _: f64, _: &GeometryCondition) -> Result<Vec<f64>> {
                Ok(vec![f64::INFINITY])
            }
        }
        let err = euler_sample(&Explode, &cond(), &DiffusionSchedule::default(), &mut stream_rng(0, 0)).unwrap_err();
        assert!(format!("{err}").contains("step 0"), "{err}");
    }

    #[test]
    fn ema_rules() {
        let mut s = vec![1.0, 2.0];
        ema_update(&mut s, &[5.0, 6.0], 0.0).unwrap();
        assert_eq!(s, vec![5.0, 6.0]);
        ema_update(&mut s, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s, vec![5.0, 6.0]);
        assert!(ema_update(&mut s, &[0.0], 0.5).is_err());
        assert!(ema_update(&mut s, &[0.0, 0.0], 1.5).is_err());

        let c = 3.0;
        let mut shadow = vec![0.0];
        for k in 1..=500 {
            ema_update(&mut shadow, &[c], 0.999).unwrap();
            let expected = c * (1.0 - 0.999f64.powi(k));
            assert!((shadow[0] - expected).abs() < 1e-12);
        }
    }
}
