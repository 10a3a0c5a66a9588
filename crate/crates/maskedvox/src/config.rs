//! Run configuration: one TOML document covering the grid, the window,
//! the model, training, synthetic data, and split sampling.
//!
//! The file mirrors the domain configs field-for-field but stays a plain
//! serde struct; [`RunConfig`] converts into validated domain types on
//! demand. Unknown keys are rejected rather than ignored, and any field
//! can be overridden from the command line with `key.path=value` sets
//! before validation runs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{SynthConfig, TerraceConfig};
use crate::nn::model::ModelConfig;
use crate::pretrain::TrainConfig;
use crate::sampling::SamplingStrategy;
use crate::splits::SplitSpec;
use crate::targets::WindowConfig;
use crate::voxel::GridConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override {set:?}: {reason}")]
    BadOverride { set: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
    pub max_points_per_voxel: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            range_min: [0.0, 0.0, 0.0],
            range_max: [16.0, 16.0, 8.0],
            voxel_size: [2.0, 2.0, 8.0],
            max_points_per_voxel: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { nx: 2, ny: 2, nz: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub enc_hidden: usize,
    pub blocks: usize,
    pub head_hidden: usize,
    pub n_recon: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 8,
            enc_hidden: 8,
            blocks: 1,
            head_hidden: 8,
            n_recon: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rp: f64,
    pub rs: f64,
    /// One of `rfvs`, `fvs`, `random`.
    pub strategy: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 4,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            alpha: 1.0,
            beta: 1.0,
            rp: 0.1,
            rs: 0.05,
            strategy: "rfvs".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerraceSection {
    pub tile: f64,
    pub period: usize,
    pub amplitude: f64,
    pub pattern_seed: u64,
}

impl Default for TerraceSection {
    fn default() -> Self {
        Self {
            tile: 2.0,
            period: 4,
            amplitude: 3.0,
            pattern_seed: 0,
        }
    }
}

/// Synthetic-scene knobs. The spatial range always comes from the grid
/// section so generated points land inside the voxelized area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub sequences: usize,
    pub frames_per_sequence: usize,
    pub ground_z: f64,
    pub num_boxes: usize,
    pub box_min_size: [f64; 3],
    pub box_max_size: [f64; 3],
    pub points_per_box: usize,
    pub ground_points: usize,
    pub noise_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terrace: Option<TerraceSection>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            sequences: 2,
            frames_per_sequence: 5,
            ground_z: 0.4,
            num_boxes: 3,
            box_min_size: [1.0, 1.0, 1.0],
            box_max_size: [3.0, 3.0, 2.0],
            points_per_box: 40,
            ground_points: 120,
            noise_sigma: 0.02,
            terrace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsSection {
    pub percents: Vec<f64>,
    pub subset_count: usize,
}

impl Default for SplitsSection {
    fn default() -> Self {
        Self {
            percents: vec![0.05, 0.10, 0.20, 0.50],
            subset_count: 3,
        }
    }
}

/// The whole run configuration. One top-level seed feeds every seeded
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub window: WindowSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub splits: SplitsSection,
}

impl RunConfig {
    pub fn grid_config(&self) -> Result<GridConfig, ConfigError> {
        GridConfig::new(
            self.grid.range_min,
            self.grid.range_max,
            self.grid.voxel_size,
            self.grid.max_points_per_voxel,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn window_config(&self) -> Result<WindowConfig, ConfigError> {
        WindowConfig::new(self.window.nx, self.window.ny, self.window.nz)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        Ok(ModelConfig {
            d_model: self.model.d_model,
            enc_hidden: self.model.enc_hidden,
            blocks: self.model.blocks,
            head_hidden: self.model.head_hidden,
            n_recon: self.model.n_recon,
            window: self.window_config()?,
        })
    }

    pub fn strategy(&self) -> Result<SamplingStrategy, ConfigError> {
        SamplingStrategy::parse(&self.train.strategy).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown strategy {:?} (expected rfvs, fvs, or random)",
                self.train.strategy
            ))
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_max: self.train.lr_max,
            lr_min: self.train.lr_min,
            weight_decay: self.train.weight_decay,
            alpha: self.train.alpha,
            beta: self.train.beta,
            rp: self.train.rp,
            rs: self.train.rs,
            strategy: self.strategy()?,
            grid: self.grid_config()?,
            model: self.model_config()?,
            seed: self.seed,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> Result<SynthConfig, ConfigError> {
        let cfg = SynthConfig {
            range_min: self.grid.range_min,
            range_max: self.grid.range_max,
            ground_z: self.synth.ground_z,
            num_boxes: self.synth.num_boxes,
            box_min_size: self.synth.box_min_size,
            box_max_size: self.synth.box_max_size,
            points_per_box: self.synth.points_per_box,
            ground_points: self.synth.ground_points,
            noise_sigma: self.synth.noise_sigma,
            seed: self.seed,
            terrace: self.synth.terrace.as_ref().map(|t| TerraceConfig {
                tile: t.tile,
                period: t.period,
                amplitude: t.amplitude,
                pattern_seed: t.pattern_seed,
            }),
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn split_spec(&self) -> Result<SplitSpec, ConfigError> {
        let spec = SplitSpec {
            percents: self.splits.percents.clone(),
            subset_count: self.splits.subset_count,
            seed: self.seed,
        };
        spec.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    /// Convert every section, surfacing the first domain-level problem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()?;
        self.synth_config()?;
        self.split_spec()?;
        Ok(())
    }
}

/// Serialize a config as canonical TOML (dump → parse → dump is the
/// identity on the text).
pub fn run_config_to_string(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("run config serializes")
}

/// Parse a TOML config without applying overrides or validating domain
/// invariants; unknown keys are rejected here.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Parse a TOML config, apply `key.path=value` overrides, and validate.
pub fn parse_run_config_with_overrides(
    text: &str,
    sets: &[String],
) -> Result<RunConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for set in sets {
        apply_set(&mut table, set)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read, override, validate.
pub fn load_run_config(path: &Path, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_run_config_with_overrides(&text, sets)
}

/// Parse the value side of an override: TOML scalar syntax first, bare
/// strings as a fallback so `train.strategy=fvs` works unquoted.
fn parse_override_value(raw: &str) -> Option<toml::Value> {
    let try_parse = |candidate: String| -> Option<toml::Value> {
        let table: toml::Table = toml::from_str(&candidate).ok()?;
        table.get("x").cloned()
    };
    try_parse(format!("x = {raw}"))
        .or_else(|| try_parse(format!("x = {raw:?}")))
}

fn apply_set(table: &mut toml::Table, set: &str) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::BadOverride {
        set: set.to_string(),
        reason: reason.to_string(),
    };
    let (key, raw) = set.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(bad("empty key"));
    }
    let value = parse_override_value(raw.trim()).ok_or_else(|| bad("unparseable value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, dirs) = parts.split_last().expect("split of non-empty key");
    let mut cursor = table;
    for part in dirs {
        if part.is_empty() {
            return Err(bad("empty path segment"));
        }
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| bad("path segment is not a table"))?;
    }
    if last.is_empty() {
        return Err(bad("empty path segment"));
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
