use alloc::vec::Vec;

use super::geometry::ArrayGeometry;
use crate::math::{sqrt, Angles, Vec3, PI};
use crate::{Error, Result};

/// Below this many metres two points are treated as coincident.
pub(crate) const COINCIDENT: f64 = 1e-9;

/// One propagation path.
///
/// The planar model reads `gain_magnitude * exp(-j global_phase)` as the full
/// complex path gain and uses `aod`/`aoa` directly. The spherical and hybrid
/// models read `gain_magnitude` as a reflection gain on top of free-space
/// spreading and derive all distances and angles from the scatterer position
/// (`None` for line of sight).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain_magnitude: f64,
    pub global_phase: f64,
    pub scatterer: Option<Vec3>,
    pub aod: Angles,
    pub aoa: Angles,
}

impl Path {
    pub fn is_los(&self) -> bool {
        self.scatterer.is_none()
    }

    /// Line-of-sight path between the array origins with unit reflection gain.
    pub fn los(geometry: &ArrayGeometry) -> Result<Path> {
        let dir = direction(geometry.tx().origin, geometry.rx().origin)?;
        Ok(Path {
            gain_magnitude: 1.0,
            global_phase: 0.0,
            scatterer: None,
            aod: dir,
            aoa: dir,
        })
    }

    /// Single-bounce path through `scatterer` with full-array angles.
    pub fn via(geometry: &ArrayGeometry, scatterer: Vec3, gain_magnitude: f64, global_phase: f64) -> Result<Path> {
        Ok(Path {
            gain_magnitude,
            global_phase,
            scatterer: Some(scatterer),
            aod: direction(geometry.tx().origin, scatterer)?,
            aoa: direction(scatterer, geometry.rx().origin)?,
        })
    }
}

/// Travel direction from `from` to `to`.
pub(crate) fn direction(from: Vec3, to: Vec3) -> Result<Angles> {
    Angles::of_direction(&(to - from)).ok_or_else(|| {
        Error::DegenerateGeometry(alloc::format!("coincident points {:?} and {:?}", from.0, to.0))
    })
}

/// Planar description of a path between two reference points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PlanarTerm {
    pub amplitude: f64,
    pub phase: f64,
    pub aod: Angles,
    pub aoa: Angles,
}

/// Free-space amplitude and propagation phase of `path` between `tx_ref`
/// and `rx_ref`, scaled by `sqrt(n_rx n_tx)` so that unit-norm steering
/// vectors reproduce the per-element amplitude.
pub(crate) fn planar_term(
    path: &Path,
    tx_ref: Vec3,
    rx_ref: Vec3,
    wavelength: f64,
    n_rx: usize,
    n_tx: usize,
) -> Result<PlanarTerm> {
    let (length, aod, aoa) = match path.scatterer {
        None => {
            let d = tx_ref.distance(&rx_ref);
            let dir = direction(tx_ref, rx_ref)?;
            (d, dir, dir)
        }
        Some(s) => {
            let d1 = tx_ref.distance(&s);
            let d2 = s.distance(&rx_ref);
            (d1 + d2, direction(tx_ref, s)?, direction(s, rx_ref)?)
        }
    };
    let amplitude = path.gain_magnitude * wavelength / (4.0 * PI * length) * sqrt((n_rx * n_tx) as f64);
    let phase = 2.0 * PI / wavelength * length + path.global_phase;
    Ok(PlanarTerm {
        amplitude,
        phase,
        aod,
        aoa,
    })
}

/// Ordered multipath realization; at least one path, at most one LoS.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("a path set needs at least one path"));
        }
        if paths.iter().filter(|p| p.is_los()).count() > 1 {
            return Err(Error::invalid("a path set may hold at most one line-of-sight path"));
        }
        for (i, p) in paths.iter().enumerate() {
            if !(p.gain_magnitude >= 0.0) || !p.gain_magnitude.is_finite() {
                return Err(Error::invalid(alloc::format!(
                    "path {i}: gain magnitude {} must be finite and non-negative",
                    p.gain_magnitude
                )));
            }
            if !p.aod.is_canonical() || !p.aoa.is_canonical() {
                return Err(Error::invalid(alloc::format!("path {i}: angles out of range")));
            }
        }
        Ok(PathSet { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn includes_los(&self) -> bool {
        self.paths.iter().any(Path::is_los)
    }

    /// Far-field reduction: each geometric path becomes a planar path with
    /// full-array angles and the complex gain seen between the array origins.
    pub fn far_field(&self, geometry: &ArrayGeometry) -> Result<PathSet> {
        let paths = self
            .paths
            .iter()
            .map(|p| {
                let t = planar_term(
                    p,
                    geometry.tx().origin,
                    geometry.rx().origin,
                    geometry.wavelength(),
                    geometry.n_rx(),
                    geometry.n_tx(),
                )?;
                Ok(Path {
                    gain_magnitude: t.amplitude,
                    global_phase: t.phase,
                    scatterer: p.scatterer,
                    aod: t.aod,
                    aoa: t.aoa,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSet { paths })
    }
}
