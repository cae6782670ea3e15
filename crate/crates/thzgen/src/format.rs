//! Little-endian binary files: `THZC` datasets and `THZW` checkpoints.
//!
//! Dataset layout: magic, `u32` version, `u32` N_r N_t K_r K_t cond_dim,
//! `u64` count, `f64` normalization scalar, `u64` master seed, then `count`
//! records of `cond_dim` + `2 N_r N_t` `f32` values.
//!
//! Checkpoint layout: magic, `u32` version, the DiT config as seven `u32`s
//! (n_rx n_tx patch_size embed_dim depth n_heads mlp_ratio), metadata
//! (`f64` scalar, `f64` horizon, `f64` sigma_min, `u32` n_steps, `u32` grid
//! (0 uniform, 1 geometric), `3 x f64`
//! Tx origin, `u32` K_r K_t, `u64` Adam step), `u32` record count, then
//! records of `u32` name length, UTF-8 name, `u32` rank, `rank x u32` dims,
//! `f32` data. Records are named `param/`, `ema/`, `adam_m/` and `adam_v/`
//! followed by the tensor name.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thzgen_core::channel::{GeometryCondition, CONDITION_DIM};
use thzgen_core::dataset::{ChannelSample, Dataset, DatasetHeader};
use thzgen_core::diffusion::{DiffusionSchedule, TimeGrid};
use thzgen_core::dit::{AdamState, DitConfig, DitModel, TrainState};
use thzgen_core::math::Vec3;

pub const DATASET_MAGIC: &[u8; 4] = b"THZC";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"THZW";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("record `{name}`: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing record `{0}`")]
    MissingRecord(String),
    #[error("unexpected record `{0}`")]
    UnexpectedRecord(String),
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] thzgen_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FormatError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| FormatError::Truncated(what.into()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.array::<4>("magic")?;
        if &found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into(),
                found: String::from_utf8_lossy(&found).into(),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| FormatError::Invalid(format!("{what} = {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let h = &ds.header;
    let mut out = Vec::with_capacity(56 + ds.len() * 4 * (CONDITION_DIM + h.tensor_len()));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for (name, v) in [
        ("n_rx", h.n_rx),
        ("n_tx", h.n_tx),
        ("k_rx", h.k_rx),
        ("k_tx", h.k_tx),
        ("condition_dim", h.condition_dim),
    ] {
        put_u32(&mut out, v, name)?;
    }
    out.extend_from_slice(&(h.sample_count as u64).to_le_bytes());
    out.extend_from_slice(&h.normalization_scalar.to_le_bytes());
    out.extend_from_slice(&h.master_seed.to_le_bytes());
    for s in &ds.samples {
        put_f32s(&mut out, s.condition.as_array());
        put_f32s(&mut out, &s.tensor);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion { what: "dataset", version });
    }
    let mut dims = [0usize; 5];
    for (d, name) in dims.iter_mut().zip(["n_rx", "n_tx", "k_rx", "k_tx", "condition_dim"]) {
        *d = r.u32(name)? as usize;
    }
    let count = r.u64("sample_count")?;
    let header = DatasetHeader {
        n_rx: dims[0],
        n_tx: dims[1],
        k_rx: dims[2],
        k_tx: dims[3],
        condition_dim: dims[4],
        sample_count: usize::try_from(count).map_err(|_| FormatError::Invalid(format!("sample_count {count}")))?,
        normalization_scalar: r.f64("normalization_scalar")?,
        master_seed: r.u64("master_seed")?,
    };
    header.validate()?;
    let record = 4 * (CONDITION_DIM + header.tensor_len());
    if (bytes.len() - r.pos) / record < header.sample_count {
        return Err(FormatError::Truncated(format!("{} sample records", header.sample_count)));
    }
    let mut samples = Vec::with_capacity(header.sample_count);
    for i in 0..header.sample_count {
        let c = r.f32s(CONDITION_DIM, "condition")?;
        let condition = GeometryCondition(c.try_into().expect("CONDITION_DIM values"));
        let tensor = r.f32s(header.tensor_len(), &format!("sample {i}"))?;
        samples.push(ChannelSample { condition, tensor });
    }
    r.finish()?;
    Ok(Dataset::new(header, samples)?)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// Everything beyond the weights that sampling needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    /// Scalar that maps model-space tensors back to physical units.
    pub normalization_scalar: f64,
    pub schedule: DiffusionSchedule,
    pub tx_origin: Vec3,
    pub k_rx: usize,
    pub k_tx: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: DitConfig,
    pub meta: CheckpointMeta,
    pub state: TrainState,
}

fn grid_code(g: TimeGrid) -> usize {
    match g {
        TimeGrid::Uniform => 0,
        TimeGrid::Geometric => 1,
    }
}

const GROUPS: [&str; 4] = ["param", "ema", "adam_m", "adam_v"];

fn group<'a>(state: &'a TrainState, g: &str) -> &'a [f64] {
    match g {
        "param" => &state.params,
        "ema" => &state.ema,
        "adam_m" => &state.adam.m,
        _ => &state.adam.v,
    }
}

fn group_mut<'a>(state: &'a mut TrainState, g: &str) -> &'a mut [f64] {
    match g {
        "param" => &mut state.params,
        "ema" => &mut state.ema,
        "adam_m" => &mut state.adam.m,
        _ => &mut state.adam.v,
    }
}

fn config_fields(c: &DitConfig) -> [(&'static str, usize); 7] {
    [
        ("n_rx", c.n_rx),
        ("n_tx", c.n_tx),
        ("patch_size", c.patch_size),
        ("embed_dim", c.embed_dim),
        ("depth", c.depth),
        ("n_heads", c.n_heads),
        ("mlp_ratio", c.mlp_ratio),
    ]
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = DitModel::new(ckpt.config)?;
    let layout = model.layout();
    for g in GROUPS {
        if group(&ckpt.state, g).len() != layout.total_len() {
            return Err(FormatError::Invalid(format!(
                "{g} vector has {} values, model needs {}",
                group(&ckpt.state, g).len(),
                layout.total_len()
            )));
        }
    }
    let m = &ckpt.meta;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, v) in config_fields(&ckpt.config) {
        put_u32(&mut out, v, name)?;
    }
    out.extend_from_slice(&m.normalization_scalar.to_le_bytes());
    out.extend_from_slice(&m.schedule.horizon.to_le_bytes());
    out.extend_from_slice(&m.schedule.sigma_min.to_le_bytes());
    put_u32(&mut out, m.schedule.n_steps, "n_steps")?;
    put_u32(&mut out, grid_code(m.schedule.grid), "grid")?;
    for v in m.tx_origin.0 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, m.k_rx, "k_rx")?;
    put_u32(&mut out, m.k_tx, "k_tx")?;
    out.extend_from_slice(&ckpt.state.adam.step.to_le_bytes());

    put_u32(&mut out, GROUPS.len() * layout.specs().len(), "record count")?;
    for g in GROUPS {
        let values = group(&ckpt.state, g);
        for spec in layout.specs() {
            let name = format!("{g}/{}", spec.name);
            put_u32(&mut out, name.len(), "name length")?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, spec.shape.len(), "rank")?;
            for &d in &spec.shape {
                put_u32(&mut out, d, "dim")?;
            }
            put_f32s(&mut out, &values[spec.range()]);
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion { what: "checkpoint", version });
    }
    let mut f = [0usize; 7];
    for (v, (name, _)) in f.iter_mut().zip(config_fields(&DitConfig::toy(0, 0))) {
        *v = r.u32(name)? as usize;
    }
    let config = DitConfig {
        n_rx: f[0],
        n_tx: f[1],
        patch_size: f[2],
        embed_dim: f[3],
        depth: f[4],
        n_heads: f[5],
        mlp_ratio: f[6],
    };
    let normalization_scalar = r.f64("normalization_scalar")?;
    let schedule = DiffusionSchedule {
        horizon: r.f64("horizon")?,
        sigma_min: r.f64("sigma_min")?,
        n_steps: r.u32("n_steps")? as usize,
        grid: match r.u32("grid")? {
            0 => TimeGrid::Uniform,
            1 => TimeGrid::Geometric,
            g => return Err(FormatError::Invalid(format!("unknown time grid code {g}"))),
        },
    };
    let tx_origin = Vec3::new(r.f64("tx_origin")?, r.f64("tx_origin")?, r.f64("tx_origin")?);
    let meta = CheckpointMeta {
        normalization_scalar,
        schedule,
        tx_origin,
        k_rx: r.u32("k_rx")? as usize,
        k_tx: r.u32("k_tx")? as usize,
    };
    let step = r.u64("adam step")?;
    schedule.validate()?;
    if !(normalization_scalar > 0.0 && normalization_scalar.is_finite()) {
        return Err(FormatError::Invalid(format!("normalization scalar {normalization_scalar}")));
    }
    for (name, n, k) in [("k_rx", config.n_rx, meta.k_rx), ("k_tx", config.n_tx, meta.k_tx)] {
        if k == 0 || n % k != 0 {
            return Err(FormatError::Invalid(format!("{name} = {k} does not divide {n}")));
        }
    }

    // validates the config as a side effect
    let model = DitModel::new(config)?;
    let layout = model.layout();
    let total = layout.total_len();
    let mut state = TrainState {
        params: vec![0.0; total],
        ema: vec![0.0; total],
        adam: AdamState {
            m: vec![0.0; total],
            v: vec![0.0; total],
            step,
        },
    };
    let expected: BTreeMap<String, (&str, usize)> = GROUPS
        .iter()
        .flat_map(|g| layout.specs().iter().enumerate().map(move |(i, s)| (format!("{g}/{}", s.name), (*g, i))))
        .collect();
    let mut seen = BTreeMap::new();
    let n_records = r.u32("record count")? as usize;
    for _ in 0..n_records {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| FormatError::Invalid("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let &(g, i) = expected.get(&name).ok_or_else(|| FormatError::UnexpectedRecord(name.clone()))?;
        let spec = &layout.specs()[i];
        if shape != spec.shape {
            return Err(FormatError::ShapeMismatch {
                name,
                expected: spec.shape.clone(),
                found: shape,
            });
        }
        let data = r.f32s(spec.len(), &name)?;
        group_mut(&mut state, g)[spec.range()].copy_from_slice(&data);
        if seen.insert(name.clone(), ()).is_some() {
            return Err(FormatError::Invalid(format!("duplicate record `{name}`")));
        }
    }
    if let Some(missing) = expected.keys().find(|k| !seen.contains_key(*k)) {
        return Err(FormatError::MissingRecord(missing.clone()));
    }
    r.finish()?;
    for g in GROUPS {
        if group(&state, g).iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid(format!("non-finite values in {g} weights")));
        }
    }
    Ok(Checkpoint { config, meta, state })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
