//! Conditional beamspace channel datasets: generation, normalization and
//! position-disjoint splitting.
//!
//! Tensors are stored channel-major: `[re(0,0), re(0,1), .., im(0,0), ..]`,
//! i.e. `2 x N_r x N_t` with the real plane first, each plane row-major.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::beamspace::{block_dictionary, to_beamspace, BeamDictionary};
use crate::channel::{
    condition_vector, draw_paths, swm_channel, ArrayGeometry, ChannelMatrix, GeometryCondition,
    GscmConfig, CONDITION_DIM,
};
use crate::math::{sqrt, CMatrix, Complex64, Vec3};
use crate::par::map_indices;
use crate::rng::{stream_rng, SPLIT_STREAM};
use crate::{Error, Result};

/// One conditioning vector with its stacked real/imaginary beamspace tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub condition: GeometryCondition,
    pub tensor: Vec<f64>,
}

impl ChannelSample {
    pub fn from_channel(condition: GeometryCondition, h: &ChannelMatrix) -> Self {
        let plane = h.matrix.as_slice();
        let mut tensor = Vec::with_capacity(2 * plane.len());
        tensor.extend(plane.iter().map(|z| z.re));
        tensor.extend(plane.iter().map(|z| z.im));
        ChannelSample { condition, tensor }
    }

    /// Reassemble the complex beamspace matrix.
    pub fn to_channel(&self, n_rx: usize, n_tx: usize) -> Result<ChannelMatrix> {
        let plane = n_rx * n_tx;
        if self.tensor.len() != 2 * plane {
            return Err(Error::dims("sample tensor length", 2 * plane, self.tensor.len()));
        }
        let (re, im) = self.tensor.split_at(plane);
        let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        Ok(ChannelMatrix::beamspace(CMatrix::from_vec(n_rx, n_tx, data)?))
    }

    pub fn frobenius_norm(&self) -> f64 {
        sqrt(self.tensor.iter().map(|v| v * v).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub n_rx: usize,
    pub n_tx: usize,
    pub k_rx: usize,
    pub k_tx: usize,
    pub condition_dim: usize,
    pub sample_count: usize,
    /// Multiply stored tensors by this to recover physical channel values.
    pub normalization_scalar: f64,
    pub master_seed: u64,
}

impl DatasetHeader {
    pub fn tensor_len(&self) -> usize {
        2 * self.n_rx * self.n_tx
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::config("sample_count", "must be at least 1"));
        }
        if !(self.normalization_scalar > 0.0 && self.normalization_scalar.is_finite()) {
            return Err(Error::config("normalization_scalar", "must be positive and finite"));
        }
        if self.condition_dim != CONDITION_DIM {
            return Err(Error::dims("condition_dim", CONDITION_DIM, self.condition_dim));
        }
        for (name, n, k) in [("n_rx", self.n_rx, self.k_rx), ("n_tx", self.n_tx, self.k_tx)] {
            if n == 0 || k == 0 || n % k != 0 {
                return Err(Error::config(name, format!("{n} antennas do not split into {k} subarrays")));
            }
        }
        Ok(())
    }

    /// Block DFT dictionaries matching the header's array partition.
    pub fn dictionaries(&self) -> Result<(BeamDictionary, BeamDictionary)> {
        Ok((
            block_dictionary(self.k_rx, self.n_rx / self.k_rx)?,
            block_dictionary(self.k_tx, self.n_tx / self.k_tx)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<ChannelSample>,
}

impl Dataset {
    /// Checks sample shapes and finiteness against the header.
    pub fn new(header: DatasetHeader, samples: Vec<ChannelSample>) -> Result<Self> {
        if header.sample_count != samples.len() {
            return Err(Error::dims("dataset sample_count", header.sample_count, samples.len()));
        }
        header.validate()?;
        for (i, s) in samples.iter().enumerate() {
            if s.tensor.len() != header.tensor_len() {
                return Err(Error::dims("sample tensor length", header.tensor_len(), s.tensor.len()).at_sample(i));
            }
            if !s.condition.is_finite() || s.tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("dataset sample {i}")));
            }
        }
        Ok(Dataset { header, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy with a subset of samples (by index, in the given order).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<_> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset {
            header: DatasetHeader {
                sample_count: samples.len(),
                ..self.header
            },
            samples,
        }
    }

    /// Mean per-entry RMS, `mean_i ||t_i||_F / sqrt(2 N_r N_t)`.
    pub fn mean_rms(&self) -> f64 {
        let scale = sqrt(self.header.tensor_len() as f64);
        self.samples.iter().map(|s| s.frobenius_norm() / scale).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

/// Axis-aligned box of Rx positions; a zero-width axis pins that coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionRegion {
    pub min: Vec3,
    pub max: Vec3,
}

impl PositionRegion {
    pub fn validate(&self) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::config("region", "bounds must be finite"));
        }
        for (axis, (lo, hi)) in ["x", "y", "z"].iter().zip(self.min.0.iter().zip(self.max.0)) {
            if *lo > hi {
                return Err(Error::config(format!("region.{axis}"), format!("min {lo} exceeds max {hi}")));
            }
        }
        if self.min == self.max {
            return Err(Error::config("region", "region is a single point"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p.0[a] >= self.min.0[a] && p.0[a] <= self.max.0[a])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let mut p = self.min;
        for a in 0..3 {
            let u: f64 = rng.random();
            p.0[a] += u * (self.max.0[a] - self.min.0[a]);
        }
        p
    }
}

/// Draws one ground-truth sample: Rx position, multipath, exact spherical
/// channel, beamspace transform.
pub fn generate_sample(
    master_seed: u64,
    index: usize,
    geometry: &ArrayGeometry,
    gscm: &GscmConfig,
    region: &PositionRegion,
    dicts: &(BeamDictionary, BeamDictionary),
) -> Result<ChannelSample> {
    let mut rng = stream_rng(master_seed, index as u64);
    let rx = region.sample(&mut rng);
    let geo = geometry.with_rx_origin(rx)?;
    let paths = draw_paths(&mut rng, gscm, &geo)?;
    let h = swm_channel(&paths, &geo)?;
    let hb = to_beamspace(&h, &dicts.0, &dicts.1)?;
    let condition = condition_vector(geo.layout().tx_origin, rx)?;
    Ok(ChannelSample::from_channel(condition, &hb))
}

/// Builds `n` samples, sample `i` drawn from RNG stream `i` of `master_seed`.
/// The result is unnormalized (scalar 1).
pub fn build_dataset(
    master_seed: u64,
    geometry: &ArrayGeometry,
    gscm: &GscmConfig,
    region: &PositionRegion,
    n: usize,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    gscm.validate()?;
    region.validate()?;
    let header = DatasetHeader {
        n_rx: geometry.n_rx(),
        n_tx: geometry.n_tx(),
        k_rx: geometry.k_rx(),
        k_tx: geometry.k_tx(),
        condition_dim: CONDITION_DIM,
        sample_count: n,
        normalization_scalar: 1.0,
        master_seed,
    };
    let dicts = header.dictionaries()?;
    let samples = map_indices(n, |i| {
        generate_sample(master_seed, i, geometry, gscm, region, &dicts).map_err(|e| e.at_sample(i))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(header, samples)
}

/// Divides every tensor by `s = mean_rms()` and folds `s` into the header
/// scalar. Returns the scalar applied by this call.
pub fn normalize(dataset: &mut Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot normalize an empty dataset"));
    }
    let s = dataset.mean_rms();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::invalid("dataset has zero (or non-finite) energy"));
    }
    for sample in &mut dataset.samples {
        sample.tensor.iter_mut().for_each(|v| *v /= s);
    }
    dataset.header.normalization_scalar *= s;
    Ok(s)
}

/// Default Rx position cell edge for splitting, meters.
pub const DEFAULT_CELL_EDGE: f64 = 0.5;
/// Allowed deviation of the realized test fraction from the request.
pub const SPLIT_TOLERANCE: f64 = 0.02;

fn cell_of(c: &GeometryCondition, edge: f64) -> [i64; 3] {
    let p = c.relative_position();
    p.0.map(|v| libm::floor(v / edge) as i64)
}

/// Splits into `(train, test)` by whole Rx position cells so no cell appears
/// on both sides. Cells are visited in an order shuffled by the header seed
/// and moved to the test side whenever that brings the test count closer to
/// the target.
pub fn split(dataset: &Dataset, test_fraction: f64, cell_edge: f64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    if !(cell_edge > 0.0 && cell_edge.is_finite()) {
        return Err(Error::invalid(format!("cell edge {cell_edge} must be positive")));
    }
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        cells.entry(cell_of(&s.condition, cell_edge)).or_default().push(i);
    }
    if cells.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} position cell(s) cannot be split disjointly",
            cells.len()
        )));
    }
    let mut order: Vec<Vec<usize>> = cells.into_values().collect();
    order.shuffle(&mut stream_rng(dataset.header.master_seed, SPLIT_STREAM));

    let n = dataset.len() as f64;
    let target = test_fraction * n;
    let mut test_cells = Vec::new();
    let mut train_cells = Vec::new();
    let mut count = 0usize;
    for cell in order {
        let with = count + cell.len();
        if libm::fabs(with as f64 - target) < libm::fabs(count as f64 - target) {
            count = with;
            test_cells.push(cell);
        } else {
            train_cells.push(cell);
        }
    }
    let realized = count as f64 / n;
    if count == 0 || count == dataset.len() || libm::fabs(realized - test_fraction) > SPLIT_TOLERANCE {
        return Err(Error::InsufficientData(format!(
            "position cells too coarse: best test fraction {realized:.4} vs requested {test_fraction}"
        )));
    }
    let flatten = |cells: Vec<Vec<usize>>| {
        let mut idx: Vec<usize> = cells.into_iter().flatten().collect();
        idx.sort_unstable();
        idx
    };
    Ok((dataset.select(&flatten(train_cells)), dataset.select(&flatten(test_cells))))
}
