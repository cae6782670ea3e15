use alloc::format;
use alloc::vec::Vec;

use crate::channel::ChannelMatrix;
use crate::math::{CMatrix, RealMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window (odd).
    pub window: usize,
    pub window_std: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            window_std: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    /// Default constants with the window shrunk (to the largest odd size) so
    /// that it fits a `rows x cols` input.
    pub fn fitted(rows: usize, cols: usize) -> Self {
        let mut w = SsimParams::default().window.min(rows).min(cols);
        if w % 2 == 0 {
            w = w.saturating_sub(1);
        }
        SsimParams {
            window: w.max(1),
            ..SsimParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::config("window", format!("{} must be odd and positive", self.window)));
        }
        if !(self.window_std > 0.0) {
            return Err(Error::config("window_std", "must be positive"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::config("k1", "stabilizers k1, k2 must be positive"));
        }
        Ok(())
    }

    /// Normalized Gaussian window weights, row-major `window x window`.
    pub fn weights(&self) -> Vec<f64> {
        let w = self.window;
        let c = (w / 2) as f64;
        let g: Vec<f64> = (0..w)
            .map(|i| {
                let x = i as f64 - c;
                libm::exp(-x * x / (2.0 * self.window_std * self.window_std))
            })
            .collect();
        let mut out: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
        out
    }
}

/// Mean SSIM over all fully contained windows. The dynamic range `L` is the
/// largest absolute entry over both inputs.
pub fn ssim(a: &RealMatrix, b: &RealMatrix, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::dims(
            "SSIM operands",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    let win = params.window;
    if a.rows() < win || a.cols() < win {
        return Err(Error::invalid(format!(
            "SSIM input {}x{} smaller than the {win}x{win} window",
            a.rows(),
            a.cols()
        )));
    }
    let l = a.max_abs().max(b.max_abs());
    if l == 0.0 {
        return Ok(1.0);
    }
    let c1 = (params.k1 * l) * (params.k1 * l);
    let c2 = (params.k2 * l) * (params.k2 * l);
    let w = params.weights();
    let (rows, cols) = (a.rows() - win + 1, a.cols() - win + 1);
    let mut total = 0.0;
    for r0 in 0..rows {
        for c0 in 0..cols {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let wt = w[i * win + j];
                    let (x, y) = (a.get(r0 + i, c0 + j), b.get(r0 + i, c0 + j));
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (rows * cols) as f64)
}

/// How a complex channel is turned into SSIM images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// SSIM of the entry magnitudes `|H|`.
    #[default]
    Magnitude,
    /// Average of the SSIMs of the real and imaginary parts.
    RealImag,
}

fn part(m: &CMatrix, f: impl Fn(num_complex::Complex64) -> f64) -> RealMatrix {
    RealMatrix::new(m.rows(), m.cols(), m.as_slice().iter().map(|z| f(*z)).collect()).expect("shape preserved")
}

pub fn channel_ssim(a: &ChannelMatrix, b: &ChannelMatrix, params: &SsimParams, mode: SsimMode) -> Result<f64> {
    if a.domain != b.domain {
        return Err(Error::WrongDomain {
            expected: a.domain.name(),
            found: b.domain.name(),
        });
    }
    match mode {
        SsimMode::Magnitude => ssim(&part(&a.matrix, |z| z.norm()), &part(&b.matrix, |z| z.norm()), params),
        SsimMode::RealImag => {
            let re = ssim(&part(&a.matrix, |z| z.re), &part(&b.matrix, |z| z.re), params)?;
            let im = ssim(&part(&a.matrix, |z| z.im), &part(&b.matrix, |z| z.im), params)?;
            Ok(0.5 * (re + im))
        }
    }
}

/// Empirical CDF of a set of SSIM values.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimCdf {
    /// Ascending SSIM values.
    pub values: Vec<f64>,
    /// `P(SSIM <= values[i]) = (i + 1) / n`.
    pub cdf: Vec<f64>,
    pub mean: f64,
}

impl SsimCdf {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("SSIM CDF needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SSIM values".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let cdf = (1..=sorted.len()).map(|i| i as f64 / n).collect();
        Ok(SsimCdf {
            values: sorted,
            cdf,
            mean,
        })
    }
}

/// SSIM of every `(generated, reference)` pair and their CDF.
pub fn ssim_cdf(pairs: &[(ChannelMatrix, ChannelMatrix)], params: &SsimParams, mode: SsimMode) -> Result<SsimCdf> {
    let values = pairs
        .iter()
        .enumerate()
        .map(|(i, (g, r))| channel_ssim(g, r, params, mode).map_err(|e| e.at_sample(i)))
        .collect::<Result<Vec<_>>>()?;
    SsimCdf::from_values(&values)
}
