//! JSON run configuration. Every section has defaults; unknown keys are
//! rejected and errors name the offending field path.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use thzgen_core::channel::{ArrayGeometry, ArrayLayout, GscmConfig};
use thzgen_core::dataset::{PositionRegion, DEFAULT_CELL_EDGE};
use thzgen_core::diffusion::{DiffusionSchedule, TimeGrid};
use thzgen_core::dit::{AdamConfig, DitConfig, TrainConfig};
use thzgen_core::math::{Vec3, SPEED_OF_LIGHT};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// Hz.
    pub carrier_frequency: f64,
    pub n_rx: usize,
    pub n_tx: usize,
    pub k_rx: usize,
    pub k_tx: usize,
    /// Metres; half a wavelength when absent.
    pub intra_spacing: Option<f64>,
    /// Metres; sixteen wavelengths when absent.
    pub inter_spacing: Option<f64>,
    pub tx_origin: [f64; 3],
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            carrier_frequency: 300e9,
            n_rx: 8,
            n_tx: 16,
            k_rx: 2,
            k_tx: 2,
            intra_spacing: None,
            inter_spacing: None,
            tx_origin: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GscmSection {
    pub n_clusters: usize,
    pub rays_per_cluster: usize,
    pub k_factor_mean_db: f64,
    pub k_factor_std_db: f64,
    pub azimuth_spread: f64,
    pub elevation_spread: f64,
    pub path_loss_exponent: f64,
    pub scatterer_radius_range: [f64; 2],
}

impl Default for GscmSection {
    fn default() -> Self {
        let g = GscmConfig::default();
        GscmSection {
            n_clusters: g.n_clusters,
            rays_per_cluster: g.rays_per_cluster,
            k_factor_mean_db: g.k_factor_mean_db,
            k_factor_std_db: g.k_factor_std_db,
            azimuth_spread: g.azimuth_spread,
            elevation_spread: g.elevation_spread,
            path_loss_exponent: g.path_loss_exponent,
            scatterer_radius_range: [g.scatterer_radius_range.0, g.scatterer_radius_range.1],
        }
    }
}

/// Box of Rx positions, metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            min: [2.0, -2.0, 0.0],
            max: [6.0, 2.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub cell_edge: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.1,
            cell_edge: DEFAULT_CELL_EDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = DitConfig::toy(8, 16);
        ModelConfig {
            patch_size: t.patch_size,
            embed_dim: t.embed_dim,
            depth: t.depth,
            n_heads: t.n_heads,
            mlp_ratio: t.mlp_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub horizon: f64,
    pub sigma_min: f64,
    pub n_steps: usize,
    pub grid: GridName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridName {
    #[default]
    Uniform,
    Geometric,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = DiffusionSchedule::default();
        ScheduleConfig {
            horizon: s.horizon,
            sigma_min: s.sigma_min,
            n_steps: s.n_steps,
            grid: GridName::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ema_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            ema_decay: t.ema_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub array: ArrayConfig,
    pub gscm: GscmSection,
    pub region: RegionConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub training: TrainingConfig,
}

fn in_section(section: &str, e: thzgen_core::Error) -> ConfigError {
    match e {
        thzgen_core::Error::Config { field, message } => ConfigError::Invalid {
            field: format!("{section}.{field}"),
            message,
        },
        other => ConfigError::Invalid {
            field: section.to_string(),
            message: other.to_string(),
        },
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry()?;
        self.gscm().validate().map_err(|e| in_section("gscm", e))?;
        self.region().validate().map_err(|e| in_section("region", e))?;
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            return Err(ConfigError::Invalid {
                field: "split.test_fraction".into(),
                message: format!("{} outside (0, 1)", s.test_fraction),
            });
        }
        if !(s.cell_edge > 0.0 && s.cell_edge.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "split.cell_edge".into(),
                message: "must be positive".into(),
            });
        }
        self.dit_config(self.array.n_rx, self.array.n_tx)
            .validate()
            .map_err(|e| in_section("model", e))?;
        self.schedule().validate().map_err(|e| in_section("schedule", e))?;
        self.train_config().validate().map_err(|e| in_section("training", e))?;
        Ok(())
    }

    pub fn layout(&self) -> ArrayLayout {
        let a = &self.array;
        let mut l = ArrayLayout::uniform(a.carrier_frequency, a.n_tx, a.n_rx, a.k_tx, a.k_rx);
        let wavelength = SPEED_OF_LIGHT / a.carrier_frequency;
        l.intra_spacing = a.intra_spacing.unwrap_or(wavelength / 2.0);
        l.inter_spacing = a.inter_spacing.unwrap_or(16.0 * wavelength);
        l.tx_origin = Vec3(a.tx_origin);
        l
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, ConfigError> {
        ArrayGeometry::new(self.layout()).map_err(|e| in_section("array", e))
    }

    pub fn gscm(&self) -> GscmConfig {
        let g = &self.gscm;
        GscmConfig {
            n_clusters: g.n_clusters,
            rays_per_cluster: g.rays_per_cluster,
            k_factor_mean_db: g.k_factor_mean_db,
            k_factor_std_db: g.k_factor_std_db,
            azimuth_spread: g.azimuth_spread,
            elevation_spread: g.elevation_spread,
            path_loss_exponent: g.path_loss_exponent,
            scatterer_radius_range: (g.scatterer_radius_range[0], g.scatterer_radius_range[1]),
        }
    }

    /// Rx region in absolute coordinates.
    pub fn region(&self) -> PositionRegion {
        PositionRegion {
            min: Vec3(self.region.min),
            max: Vec3(self.region.max),
        }
    }

    pub fn dit_config(&self, n_rx: usize, n_tx: usize) -> DitConfig {
        let m = &self.model;
        DitConfig {
            n_rx,
            n_tx,
            patch_size: m.patch_size,
            embed_dim: m.embed_dim,
            depth: m.depth,
            n_heads: m.n_heads,
            mlp_ratio: m.mlp_ratio,
        }
    }

    pub fn schedule(&self) -> DiffusionSchedule {
        DiffusionSchedule {
            horizon: self.schedule.horizon,
            sigma_min: self.schedule.sigma_min,
            n_steps: self.schedule.n_steps,
            grid: match self.schedule.grid {
                GridName::Uniform => TimeGrid::Uniform,
                GridName::Geometric => TimeGrid::Geometric,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            ema_decay: t.ema_decay,
            seed: self.seed,
        }
    }
}
