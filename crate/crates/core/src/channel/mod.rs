//! Physically grounded THz UM-MIMO channel synthesis.
//!
//! Angle convention: every AoD/AoA is the direction of *travel* of the wave
//! (Tx toward first bounce on the transmit side, last bounce toward Rx on the
//! receive side). With the `exp(-j k <r, u>)` steering convention this makes
//! the planar model the first-order expansion of the exact spherical model,
//! and a line-of-sight path has identical AoD and AoA.

mod condition;
mod geometry;
mod gscm;
mod path;
mod synth;

pub use condition::{condition_vector, GeometryCondition, CONDITION_DIM};
pub use geometry::{
    rayleigh_distance, steering_vector, ArrayGeometry, ArrayLayout, ArraySide, Side, Subarray,
    ARRAY_AXIS,
};
pub use gscm::{draw_paths, GscmConfig};
pub use path::{Path, PathSet};
pub use synth::{hpsm_channel, pwm_channel, swm_channel};

use crate::math::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Spatial,
    Beamspace,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Spatial => "spatial",
            Domain::Beamspace => "beamspace",
        }
    }
}

/// A complex `N_r x N_t` channel tagged with the domain it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub matrix: CMatrix,
    pub domain: Domain,
}

impl ChannelMatrix {
    pub fn spatial(matrix: CMatrix) -> Self {
        ChannelMatrix {
            matrix,
            domain: Domain::Spatial,
        }
    }

    pub fn beamspace(matrix: CMatrix) -> Self {
        ChannelMatrix {
            matrix,
            domain: Domain::Beamspace,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.cols()
    }

    pub(crate) fn expect_domain(&self, domain: Domain) -> crate::Result<()> {
        if self.domain != domain {
            return Err(crate::Error::WrongDomain {
                expected: domain.name(),
                found: self.domain.name(),
            });
        }
        Ok(())
    }
}
