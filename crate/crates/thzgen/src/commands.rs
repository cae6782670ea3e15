//! The four pipeline commands as library functions; `main.rs` only parses
//! flags and prints.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use thzgen_core::channel::{condition_vector, ChannelMatrix, CONDITION_DIM};
use thzgen_core::dataset::{build_dataset, normalize, split, ChannelSample, Dataset, DatasetHeader};
use thzgen_core::diffusion::euler_sample;
use thzgen_core::dit::{train as train_model, DitDenoiser, DitModel, EpochStats, TrainState};
use thzgen_core::math::Vec3;
use thzgen_core::metrics::{angular_power, channel_ssim, compare_power, nmse, PowerComparison, SsimCdf, SsimMode, SsimParams};
use thzgen_core::rng::stream_rng;

use crate::config::{ConfigError, RunConfig};
use crate::format::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint, CheckpointMeta, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] thzgen_core::Error),
    #[error("{path}: {source}")]
    File { path: String, source: FormatError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Mismatch(String),
    #[error("unknown metric `{name}`; valid metrics: {valid}")]
    UnknownMetric { name: String, valid: String },
    #[error("no generated condition lies within {max_distance} m of a reference condition")]
    NoPairs { max_distance: f64 },
}

pub type Result<T, E = CommandError> = std::result::Result<T, E>;

fn file_err(path: &Path) -> impl FnOnce(FormatError) -> CommandError + '_ {
    move |source| CommandError::File {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub const TRAIN_FILE: &str = "train.thzc";
pub const TEST_FILE: &str = "test.thzc";

#[derive(Debug, Clone)]
pub struct GenDataSummary {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub header: DatasetHeader,
    pub train_count: usize,
    pub test_count: usize,
}

impl fmt::Display for GenDataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = &self.header;
        writeln!(f, "sample_count = {}", h.sample_count)?;
        writeln!(f, "dims = {}x{} (K_r = {}, K_t = {})", h.n_rx, h.n_tx, h.k_rx, h.k_tx)?;
        writeln!(f, "normalization_scalar = {:e}", h.normalization_scalar)?;
        writeln!(f, "master_seed = {}", h.master_seed)?;
        writeln!(f, "train = {} samples -> {}", self.train_count, self.train_path.display())?;
        write!(f, "test = {} samples -> {}", self.test_count, self.test_path.display())
    }
}

/// Builds `count` samples with `seed`, normalizes them jointly, splits by
/// position cell and writes `train.thzc` / `test.thzc` into `out_dir`.
pub fn gen_data(cfg: &RunConfig, out_dir: &Path, count: usize, seed: u64) -> Result<GenDataSummary> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let mut ds = build_dataset(seed, &geometry, &cfg.gscm(), &cfg.region(), count)?;
    normalize(&mut ds)?;
    let (train, test) = split(&ds, cfg.split.test_fraction, cfg.split.cell_edge)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let train_path = out_dir.join(TRAIN_FILE);
    let test_path = out_dir.join(TEST_FILE);
    write_dataset(&train_path, &train).map_err(file_err(&train_path))?;
    write_dataset(&test_path, &test).map_err(file_err(&test_path))?;
    Ok(GenDataSummary {
        train_path,
        test_path,
        header: ds.header,
        train_count: train.len(),
        test_count: test.len(),
    })
}

/// `model.thzw` -> `model.loss.csv`.
pub fn default_loss_csv(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("loss.csv")
}

fn check_header(h: &DatasetHeader, cfg: &RunConfig, what: &str) -> Result<()> {
    let a = &cfg.array;
    for (name, file, conf) in [
        ("n_rx", h.n_rx, a.n_rx),
        ("n_tx", h.n_tx, a.n_tx),
        ("k_rx", h.k_rx, a.k_rx),
        ("k_tx", h.k_tx, a.k_tx),
    ] {
        if file != conf {
            return Err(CommandError::Mismatch(format!(
                "{what} has {name} = {file} but config array.{name} = {conf}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<EpochStats>,
    pub param_count: usize,
    pub loss_csv: PathBuf,
}

/// Trains on `data_dir/train.thzc`, scores `data_dir/test.thzc` each epoch,
/// and writes the checkpoint plus an `epoch,train_loss,test_loss` CSV.
pub fn train(
    cfg: &RunConfig,
    data_dir: &Path,
    ckpt_path: &Path,
    loss_csv: Option<&Path>,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_path = data_dir.join(TRAIN_FILE);
    let test_path = data_dir.join(TEST_FILE);
    let train_set = read_dataset(&train_path).map_err(file_err(&train_path))?;
    let test_set = read_dataset(&test_path).map_err(file_err(&test_path))?;
    check_header(&train_set.header, cfg, "training set")?;
    check_header(&test_set.header, cfg, "test set")?;
    let scalar = train_set.header.normalization_scalar;
    if test_set.header.normalization_scalar != scalar {
        return Err(CommandError::Mismatch(format!(
            "train/test normalization scalars differ: {scalar} vs {}",
            test_set.header.normalization_scalar
        )));
    }

    let model = DitModel::new(cfg.dit_config(cfg.array.n_rx, cfg.array.n_tx))?;
    let schedule = cfg.schedule();
    let tc = cfg.train_config();
    let mut state = TrainState::new(&model, cfg.seed);
    let history = train_model(&model, &mut state, &train_set.samples, &test_set.samples, &schedule, &tc, on_epoch)?;

    let ckpt = Checkpoint {
        config: *model.config(),
        meta: CheckpointMeta {
            normalization_scalar: scalar,
            schedule,
            tx_origin: Vec3(cfg.array.tx_origin),
            k_rx: cfg.array.k_rx,
            k_tx: cfg.array.k_tx,
        },
        state,
    };
    write_checkpoint(ckpt_path, &ckpt).map_err(file_err(ckpt_path))?;
    let loss_csv = loss_csv.map(Path::to_path_buf).unwrap_or_else(|| default_loss_csv(ckpt_path));
    let mut w = csv::Writer::from_path(&loss_csv)?;
    w.write_record(["epoch", "train_loss", "test_loss"])?;
    for s in &history {
        w.write_record([s.epoch.to_string(), s.train_loss.to_string(), s.test_loss.to_string()])?;
    }
    w.flush().map_err(io_err(&loss_csv))?;
    Ok(TrainSummary {
        history,
        param_count: model.param_count(),
        loss_csv,
    })
}

/// Generates `num` channels at Rx position `pos` with the EMA weights.
/// Sample `i` starts from latent stream `i` of `seed`. The output is in
/// physical units (normalization scalar 1).
pub fn sample_checkpoint(ckpt: &Checkpoint, pos: Vec3, num: usize, seed: u64) -> Result<Dataset> {
    if num == 0 {
        return Err(CommandError::Mismatch("--num must be at least 1".into()));
    }
    let model = DitModel::new(ckpt.config)?;
    let condition = condition_vector(ckpt.meta.tx_origin, pos)?;
    let den = DitDenoiser {
        model: &model,
        params: &ckpt.state.ema,
    };
    let s = ckpt.meta.normalization_scalar;
    let samples = (0..num)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut tensor = euler_sample(&den, &condition, &ckpt.meta.schedule, &mut rng)
                .map_err(|e| CommandError::Mismatch(format!("sample {i}: {e}")))?;
            tensor.iter_mut().for_each(|v| *v *= s);
            Ok(ChannelSample { condition, tensor })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        n_rx: ckpt.config.n_rx,
        n_tx: ckpt.config.n_tx,
        k_rx: ckpt.meta.k_rx,
        k_tx: ckpt.meta.k_tx,
        condition_dim: CONDITION_DIM,
        sample_count: num,
        normalization_scalar: 1.0,
        master_seed: seed,
    };
    Ok(Dataset::new(header, samples)?)
}

pub fn sample(ckpt_path: &Path, pos: Vec3, num: usize, seed: u64, out: &Path) -> Result<Dataset> {
    let ckpt = read_checkpoint(ckpt_path).map_err(file_err(ckpt_path))?;
    let ds = sample_checkpoint(&ckpt, pos, num, seed)?;
    write_dataset(out, &ds).map_err(file_err(out))?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Ssim,
    Angular,
    Nmse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ssim, Metric::Angular, Metric::Nmse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Angular => "angular",
            Metric::Nmse => "nmse",
        }
    }

    /// Comma-separated list; duplicates collapse, order is canonical.
    pub fn parse_list(list: &str) -> Result<Vec<Metric>> {
        let mut out = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if out.is_empty() {
            return Err(Metric::unknown(list));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn unknown(name: &str) -> CommandError {
        CommandError::UnknownMetric {
            name: name.to_string(),
            valid: Metric::ALL.map(Metric::name).join(","),
        }
    }
}

impl FromStr for Metric {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Metric::unknown(s))
    }
}

/// Default pairing radius: half the default split cell.
pub const DEFAULT_MAX_PAIR_DISTANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub gen: usize,
    pub reference: usize,
    /// Euclidean distance between the two Rx positions, metres.
    pub distance: f64,
}

/// Pairs every generated sample with the reference sample whose relative Rx
/// position is nearest; pairs further than `max_distance` are dropped.
pub fn pair_by_condition(gen: &[ChannelSample], reference: &[ChannelSample], max_distance: f64) -> Vec<Pair> {
    gen.iter()
        .enumerate()
        .filter_map(|(gi, g)| {
            let p = g.condition.relative_position();
            let (ri, d) = reference
                .iter()
                .enumerate()
                .map(|(ri, r)| (ri, p.distance(&r.condition.relative_position())))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            (d <= max_distance).then_some(Pair {
                gen: gi,
                reference: ri,
                distance: d,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl NmseStats {
    fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        NmseStats {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            min: v[0],
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: Vec<Pair>,
    pub ssim: Option<(Vec<f64>, SsimCdf)>,
    pub angular: Option<AngularReport>,
    pub nmse: Option<(Vec<f64>, NmseStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularReport {
    pub gen_tx: Vec<f64>,
    pub gen_rx: Vec<f64>,
    pub ref_tx: Vec<f64>,
    pub ref_rx: Vec<f64>,
    pub comparison: PowerComparison,
    /// Comparison after summing the subarray blocks into one bin per angle.
    pub folded: PowerComparison,
}

fn physical_channels(ds: &Dataset) -> Result<Vec<ChannelMatrix>> {
    let s = ds.header.normalization_scalar;
    ds.samples
        .iter()
        .map(|smp| {
            let scaled = ChannelSample {
                condition: smp.condition,
                tensor: smp.tensor.iter().map(|v| v * s).collect(),
            };
            Ok(scaled.to_channel(ds.header.n_rx, ds.header.n_tx)?)
        })
        .collect()
}

/// Compares generated channels with reference channels at the nearest
/// reference condition. Both files are mapped back to physical units first.
pub fn evaluate(gen: &Dataset, reference: &Dataset, metrics: &[Metric], max_pair_distance: f64) -> Result<EvalReport> {
    let (g, r) = (&gen.header, &reference.header);
    if (g.n_rx, g.n_tx, g.k_rx, g.k_tx) != (r.n_rx, r.n_tx, r.k_rx, r.k_tx) {
        return Err(CommandError::Mismatch(format!(
            "generated set is {}x{} (K {}x{}) but reference is {}x{} (K {}x{})",
            g.n_rx, g.n_tx, g.k_rx, g.k_tx, r.n_rx, r.n_tx, r.k_rx, r.k_tx
        )));
    }
    let pairs = pair_by_condition(&gen.samples, &reference.samples, max_pair_distance);
    if pairs.is_empty() {
        return Err(CommandError::NoPairs {
            max_distance: max_pair_distance,
        });
    }
    let gh = physical_channels(gen)?;
    let rh = physical_channels(reference)?;
    let mut report = EvalReport {
        pairs: pairs.clone(),
        ssim: None,
        angular: None,
        nmse: None,
    };
    if metrics.contains(&Metric::Ssim) {
        let params = SsimParams::fitted(g.n_rx, g.n_tx);
        let values = pairs
            .iter()
            .map(|p| channel_ssim(&gh[p.gen], &rh[p.reference], &params, SsimMode::Magnitude))
            .collect::<thzgen_core::Result<Vec<_>>>()?;
        let cdf = SsimCdf::from_values(&values)?;
        report.ssim = Some((values, cdf));
    }
    if metrics.contains(&Metric::Angular) {
        let gen_set: Vec<_> = pairs.iter().map(|p| gh[p.gen].clone()).collect();
        let ref_set: Vec<_> = pairs.iter().map(|p| rh[p.reference].clone()).collect();
        let gm = angular_power(&gen_set)?;
        let rm = angular_power(&ref_set)?;
        report.angular = Some(AngularReport {
            comparison: compare_power(&gm, &rm)?,
            folded: compare_power(&gm.fold_blocks(g.k_rx, g.k_tx)?, &rm.fold_blocks(g.k_rx, g.k_tx)?)?,
            gen_tx: gm.tx_profile,
            gen_rx: gm.rx_profile,
            ref_tx: rm.tx_profile,
            ref_rx: rm.rx_profile,
        });
    }
    if metrics.contains(&Metric::Nmse) {
        let values = pairs
            .iter()
            .map(|p| nmse(&gh[p.gen].matrix, &rh[p.reference].matrix))
            .collect::<thzgen_core::Result<Vec<_>>>()?;
        let stats = NmseStats::from_values(&values);
        report.nmse = Some((values, stats));
    }
    Ok(report)
}

/// `report.csv` -> `report.<suffix>.csv`.
pub fn companion_csv(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Writes the summary (`metric,statistic,value`) to `out` and the detail
/// tables next to it:
///
/// - `<stem>.ssim.csv`: `pair,gen_index,ref_index,distance,ssim`
/// - `<stem>.ssim_cdf.csv`: `ssim,cdf`
/// - `<stem>.angular.csv`: `side,bin,gen_power,ref_power`
/// - `<stem>.nmse.csv`: `pair,gen_index,ref_index,nmse`
///
/// Returns every path written.
pub fn write_eval_csv(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = vec![out.to_path_buf()];
    let mut summary = csv::Writer::from_path(out)?;
    summary.write_record(["metric", "statistic", "value"])?;
    summary.write_record(["pairs", "count", &report.pairs.len().to_string()])?;
    let mean_dist = report.pairs.iter().map(|p| p.distance).sum::<f64>() / report.pairs.len() as f64;
    summary.write_record(["pairs", "mean_distance", &mean_dist.to_string()])?;

    if let Some((values, cdf)) = &report.ssim {
        summary.write_record(["ssim", "mean", &cdf.mean.to_string()])?;
        let path = companion_csv(out, "ssim");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["pair", "gen_index", "ref_index", "distance", "ssim"])?;
        for (i, (p, v)) in report.pairs.iter().zip(values).enumerate() {
            w.write_record([i.to_string(), p.gen.to_string(), p.reference.to_string(), p.distance.to_string(), v.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
        let path = companion_csv(out, "ssim_cdf");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["ssim", "cdf"])?;
        for (v, c) in cdf.values.iter().zip(&cdf.cdf) {
            w.write_record([v.to_string(), c.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    if let Some(a) = &report.angular {
        for (side, c) in [
            ("tx", &a.comparison.tx),
            ("rx", &a.comparison.rx),
            ("tx_folded", &a.folded.tx),
            ("rx_folded", &a.folded.rx),
        ] {
            summary.write_record(["angular", &format!("{side}_tv_distance"), &c.tv_distance.to_string()])?;
            summary.write_record(["angular", &format!("{side}_cosine_similarity"), &c.cosine_similarity.to_string()])?;
            summary.write_record(["angular", &format!("{side}_argmax_match"), &(c.argmax_match as u8).to_string()])?;
        }
        let path = companion_csv(out, "angular");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["side", "bin", "gen_power", "ref_power"])?;
        for (side, gp, rp) in [("tx", &a.gen_tx, &a.ref_tx), ("rx", &a.gen_rx, &a.ref_rx)] {
            for (bin, (g, r)) in gp.iter().zip(rp).enumerate() {
                w.write_record([side.to_string(), bin.to_string(), g.to_string(), r.to_string()])?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    if let Some((values, stats)) = &report.nmse {
        for (name, v) in [("mean", stats.mean), ("median", stats.median), ("min", stats.min), ("max", stats.max)] {
            summary.write_record(["nmse", name, &v.to_string()])?;
        }
        let path = companion_csv(out, "nmse");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["pair", "gen_index", "ref_index", "nmse"])?;
        for (i, (p, v)) in report.pairs.iter().zip(values).enumerate() {
            w.write_record([i.to_string(), p.gen.to_string(), p.reference.to_string(), v.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    summary.flush().map_err(io_err(out))?;
    Ok(written)
}

pub fn eval(gen_path: &Path, ref_path: &Path, metrics: &[Metric], max_pair_distance: f64, out: &Path) -> Result<(EvalReport, Vec<PathBuf>)> {
    let gen = read_dataset(gen_path).map_err(file_err(gen_path))?;
    let reference = read_dataset(ref_path).map_err(file_err(ref_path))?;
    let report = evaluate(&gen, &reference, metrics, max_pair_distance)?;
    let written = write_eval_csv(&report, out)?;
    Ok((report, written))
}
