//! Fidelity metrics for generated channels: windowed SSIM and its empirical
//! CDF, beamspace angular power profiles, and NMSE.

mod power;
mod ssim;

pub use power::{angular_power, compare_power, AngularPowerMap, PowerComparison, SideComparison};
pub use ssim::{channel_ssim, ssim, ssim_cdf, SsimCdf, SsimMode, SsimParams};

use crate::math::CMatrix;
use crate::{Error, Result};

/// `||a - b||_F^2 / ||b||_F^2`.
pub fn nmse(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    let denom = b.frobenius_norm_sqr();
    if !(denom > 0.0) {
        return Err(Error::invalid("NMSE reference has zero energy"));
    }
    Ok(a.sub(b)?.frobenius_norm_sqr() / denom)
}
