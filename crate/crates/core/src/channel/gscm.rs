//! Lightweight geometry-based stochastic path generator.
//!
//! One line-of-sight path plus `n_clusters x rays_per_cluster` single-bounce
//! paths. Cluster centroids sit at a uniform radius from the Tx/Rx midpoint in
//! a direction uniform on the sphere; rays scatter around the centroid
//! direction with Laplacian azimuth/elevation offsets. Total power follows
//! `(lambda / 4 pi d)^2 * d^-(n - 2)` (free space for `n = 2`) and is split by
//! a lognormal Rician K-factor; cluster powers are exponential and shared
//! equally among their rays; reflection phases are uniform.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::geometry::ArrayGeometry;
use super::path::{Path, PathSet};
use crate::math::{sqrt, Angles, PI};
use crate::rng::{laplace, standard_normal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GscmConfig {
    pub n_clusters: usize,
    pub rays_per_cluster: usize,
    pub k_factor_mean_db: f64,
    pub k_factor_std_db: f64,
    /// Laplacian scale of ray azimuth offsets, radians.
    pub azimuth_spread: f64,
    /// Laplacian scale of ray elevation offsets, radians.
    pub elevation_spread: f64,
    pub path_loss_exponent: f64,
    /// Min/max distance of cluster centroids from the Tx-Rx midpoint, metres.
    pub scatterer_radius_range: (f64, f64),
}

impl Default for GscmConfig {
    fn default() -> Self {
        GscmConfig {
            n_clusters: 3,
            rays_per_cluster: 5,
            k_factor_mean_db: 10.0,
            k_factor_std_db: 3.0,
            azimuth_spread: 0.08,
            elevation_spread: 0.04,
            path_loss_exponent: 2.0,
            scatterer_radius_range: (1.0, 4.0),
        }
    }
}

impl GscmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::config("n_clusters", "must be at least 1"));
        }
        if self.rays_per_cluster == 0 {
            return Err(Error::config("rays_per_cluster", "must be at least 1"));
        }
        if !self.k_factor_mean_db.is_finite() {
            return Err(Error::config("k_factor_mean_db", "must be finite"));
        }
        if !(self.k_factor_std_db >= 0.0) || !self.k_factor_std_db.is_finite() {
            return Err(Error::config("k_factor_std_db", "must be finite and non-negative"));
        }
        if !(self.azimuth_spread > 0.0) || !self.azimuth_spread.is_finite() {
            return Err(Error::config("azimuth_spread", "must be positive"));
        }
        if !(self.elevation_spread > 0.0) || !self.elevation_spread.is_finite() {
            return Err(Error::config("elevation_spread", "must be positive"));
        }
        if !(self.path_loss_exponent > 0.0) || !self.path_loss_exponent.is_finite() {
            return Err(Error::config("path_loss_exponent", "must be positive"));
        }
        let (lo, hi) = self.scatterer_radius_range;
        if !(lo > 0.0) || !(lo < hi) || !hi.is_finite() {
            return Err(Error::config(
                "scatterer_radius_range",
                format!("need 0 < min < max, got ({lo}, {hi})"),
            ));
        }
        Ok(())
    }

    pub fn path_count(&self) -> usize {
        1 + self.n_clusters * self.rays_per_cluster
    }
}

pub fn draw_paths<R: Rng + ?Sized>(rng: &mut R, config: &GscmConfig, geometry: &ArrayGeometry) -> Result<PathSet> {
    config.validate()?;
    let tx = geometry.tx().origin;
    let rx = geometry.rx().origin;
    let d0 = tx.distance(&rx);
    if !(d0 > super::path::COINCIDENT) {
        return Err(Error::DegenerateGeometry(format!(
            "Tx and Rx origins coincide at {:?}",
            tx.0
        )));
    }
    let lambda = geometry.wavelength();
    let free_space = |d: f64| lambda / (4.0 * PI * d);
    let total_power = free_space(d0) * free_space(d0) * libm::pow(d0, -(config.path_loss_exponent - 2.0));

    let k_db = config.k_factor_mean_db + config.k_factor_std_db * standard_normal(rng);
    let k_lin = libm::pow(10.0, k_db / 10.0);
    let los_power = total_power * k_lin / (1.0 + k_lin);
    let scattered_power = total_power / (1.0 + k_lin);

    let mut paths = Vec::with_capacity(config.path_count());
    let mut los = Path::los(geometry)?;
    los.gain_magnitude = sqrt(los_power) / free_space(d0);
    paths.push(los);

    let cluster_weights: Vec<f64> = (0..config.n_clusters)
        .map(|_| -libm::log(1.0 - rng.random::<f64>()))
        .collect();
    let weight_sum: f64 = cluster_weights.iter().sum();
    let midpoint = (tx + rx).scale(0.5);
    let (r_lo, r_hi) = config.scatterer_radius_range;

    for w in cluster_weights {
        let radius = r_lo + (r_hi - r_lo) * rng.random::<f64>();
        let centroid_az = PI * (2.0 * rng.random::<f64>() - 1.0);
        let centroid_el = libm::asin(2.0 * rng.random::<f64>() - 1.0);
        let ray_power = scattered_power * (w / weight_sum) / config.rays_per_cluster as f64;
        for _ in 0..config.rays_per_cluster {
            let az = wrap_azimuth(centroid_az + laplace(rng, config.azimuth_spread));
            let el = (centroid_el + laplace(rng, config.elevation_spread)).clamp(-PI / 2.0, PI / 2.0);
            let phase = PI * (2.0 * rng.random::<f64>() - 1.0);
            let s = midpoint + Angles::new(az, el).unit_vector().scale(radius);
            let length = tx.distance(&s) + s.distance(&rx);
            let gain = sqrt(ray_power) / free_space(length);
            paths.push(Path::via(geometry, s, gain, phase)?);
        }
    }
    PathSet::new(paths)
}

fn wrap_azimuth(a: f64) -> f64 {
    let mut a = libm::remainder(a, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ArrayLayout;
    use crate::math::Vec3;
    use crate::rng::stream_rng;

    fn geometry() -> ArrayGeometry {
        let mut l = ArrayLayout::uniform(300e9, 16, 8, 2, 2);
        l.rx_origin = Vec3::new(3.0, 1.0, 0.2);
        ArrayGeometry::new(l).unwrap()
    }

    #[test]
    fn path_count_includes_los() {
        let cfg = GscmConfig {
            n_clusters: 3,
            rays_per_cluster: 5,
            ..GscmConfig::default()
        };
        let ps = draw_paths(&mut stream_rng(1, 0), &cfg, &geometry()).unwrap();
        assert_eq!(ps.len(), 16);
        assert!(ps.includes_los());
        assert!(ps.paths()[0].is_los());
    }

    #[test]
    fn same_seed_same_paths() {
        let cfg = GscmConfig::default();
        let a = draw_paths(&mut stream_rng(9, 4), &cfg, &geometry()).unwrap();
        let b = draw_paths(&mut stream_rng(9, 4), &cfg, &geometry()).unwrap();
        let c = draw_paths(&mut stream_rng(9, 5), &cfg, &geometry()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn coincident_origins_are_rejected() {
        let g = geometry().with_rx_origin(Vec3::ZERO).unwrap();
        assert!(matches!(
            draw_paths(&mut stream_rng(0, 0), &GscmConfig::default(), &g),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn invalid_configs_name_their_field() {
        let bad = [
            (GscmConfig { n_clusters: 0, ..Default::default() }, "n_clusters"),
            (GscmConfig { azimuth_spread: 0.0, ..Default::default() }, "azimuth_spread"),
            (GscmConfig { scatterer_radius_range: (3.0, 1.0), ..Default::default() }, "scatterer_radius_range"),
        ];
        for (cfg, name) in bad {
            match cfg.validate().unwrap_err() {
                Error::Config { field, .. } => assert_eq!(field, name),
                e => panic!("{e}"),
            }
        }
    }

    #[test]
    fn mean_channel_power_follows_path_loss_law() {
        let g = geometry();
        let cfg = GscmConfig::default();
        let d0 = g.rx().origin.norm();
        let expected = {
            let fs = g.wavelength() / (4.0 * PI * d0);
            fs * fs * (g.n_rx() * g.n_tx()) as f64
        };
        let mut rng = stream_rng(3, 0);
        let n = 400;
        let mut acc = 0.0;
        for _ in 0..n {
            let ps = draw_paths(&mut rng, &cfg, &g).unwrap();
            acc += crate::channel::swm_channel(&ps, &g).unwrap().matrix.frobenius_norm_sqr();
        }
        let ratio = acc / n as f64 / expected;
        assert!((ratio - 1.0).abs() < 0.1, "mean power ratio {ratio}");
    }

    #[test]
    fn azimuth_wrapping() {
        assert!((wrap_azimuth(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_azimuth(-PI), PI);
        assert!((wrap_azimuth(0.3) - 0.3).abs() < 1e-15);
    }
}
