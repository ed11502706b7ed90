//! Experiment configuration files.
//!
//! A config is one TOML document:
//!
//! ```toml
//! seed = 20240601
//!
//! [paths]
//! out_dir = "csikit-out"
//!
//! [system]              # link parameters
//! rb_count = 16         # K = 12 · rb_count subcarriers
//! nr = 1
//! users = 4             # M, co-scheduled UEs per ZF group
//! snr_db = 25.0
//! period_s = 0.005      # feedback report period
//! subcarrier_spacing = 30000.0
//! interpolation = "first_order"
//! geometry = { n_h = 4, n_v = 4, n_pol = 2, spacing_h = 0.5, spacing_v = 0.5 }
//!
//! [dataset]
//! train = 2400
//! val = 300
//! test = 400
//! delay_spreads_ns = [30.0, 100.0, 300.0]
//! mix = [{ profile = "cdl-a", weight = 1.0 }]
//!
//! [train]               # defaults for every model, overridable per point
//! learning_rate = 1e-3
//! batch_size = 16
//! epochs = 8
//!
//! [[points]]
//! id = "type2-sb4"
//! kind = "type2"
//! subband_rb = 4
//! codewords = 4
//! phase_bits = 3
//! amplitude_bits = 3
//! density = "1"
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use csikit::channel::{DatasetRecipe, ProfileId};
use csikit::evaluate::{OperatingPoint, SchemeSpec, SystemConfig};
use csikit::Error as CoreError;
use csikit_neural::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The desk-scale profile shipped with the binary.
pub const DEFAULT_PROFILE: &str = include_str!("../profiles/default.toml");

const MAX_SPLIT: usize = 1_000_000;
const MAX_EPOCHS: usize = 10_000;
const MAX_DELAY_SPREAD_NS: f64 = 10_000.0;

fn default_out_dir() -> PathBuf {
    PathBuf::from("csikit-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out_dir: default_out_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub profile: ProfileId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub delay_spreads_ns: Vec<f64>,
    pub mix: Vec<MixEntry>,
}

impl DatasetSection {
    pub fn recipe(&self) -> DatasetRecipe {
        DatasetRecipe {
            mix: self.mix.iter().map(|m| (m.profile, m.weight)).collect(),
            delay_spreads: self.delay_spreads_ns.iter().map(|d| d * 1e-9).collect(),
        }
    }

    pub fn size(&self, split: csikit::channel::Split) -> usize {
        use csikit::channel::Split;
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Training hyperparameters; every field is optional so a point can
/// override only what it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_decay: Option<f64>,
    /// Use only the first `samples` training-split channels.
    pub samples: Option<usize>,
}

impl TrainSection {
    fn or(&self, base: &TrainSection) -> TrainSection {
        TrainSection {
            learning_rate: self.learning_rate.or(base.learning_rate),
            batch_size: self.batch_size.or(base.batch_size),
            epochs: self.epochs.or(base.epochs),
            lr_decay: self.lr_decay.or(base.lr_decay),
            samples: self.samples.or(base.samples),
        }
    }

    fn validate(&self, prefix: &str) -> Result<(), CliError> {
        let field = |f: &str| format!("{prefix}.{f}");
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr <= 1.0) {
                return Err(invalid(field("learning_rate"), "must be in (0, 1]"));
            }
        }
        if self.batch_size == Some(0) {
            return Err(invalid(field("batch_size"), "must be >= 1"));
        }
        if let Some(e) = self.epochs {
            if e == 0 || e > MAX_EPOCHS {
                return Err(invalid(field("epochs"), format!("must be in 1..={MAX_EPOCHS}")));
            }
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid(field("lr_decay"), "must be in (0, 1]"));
            }
        }
        if self.samples == Some(0) {
            return Err(invalid(field("samples"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfig {
    pub id: String,
    #[serde(flatten)]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub train: TrainSection,
}

impl PointConfig {
    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint {
            id: self.id.clone(),
            scheme: self.scheme.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed every other seed is derived from.
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub system: SystemConfig,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    pub points: Vec<PointConfig>,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Config(CoreError::config(field, reason).to_string())
}

fn prefixed(prefix: &str, e: CoreError) -> CliError {
    match e {
        CoreError::InvalidConfig { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn default_profile() -> Self {
        Self::parse(DEFAULT_PROFILE).expect("shipped profile is valid")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate().map_err(|e| match e {
            CoreError::InvalidConfig { field, reason } if !field.starts_with("system.") => {
                invalid(format!("system.{field}"), reason)
            }
            CoreError::InvalidConfig { field, reason } => invalid(field, reason),
            other => invalid("system", other.to_string()),
        })?;

        let d = &self.dataset;
        for (name, n) in [("train", d.train), ("val", d.val), ("test", d.test)] {
            if n > MAX_SPLIT {
                return Err(invalid(format!("dataset.{name}"), format!("must be <= {MAX_SPLIT}")));
            }
        }
        if d.test < self.system.users {
            return Err(invalid(
                "dataset.test",
                format!("needs at least system.users = {} samples", self.system.users),
            ));
        }
        if d.delay_spreads_ns.iter().any(|x| !(0.0..=MAX_DELAY_SPREAD_NS).contains(x)) {
            return Err(invalid("dataset.delay_spreads_ns", format!("values must be in 0..={MAX_DELAY_SPREAD_NS}")));
        }
        d.recipe().validate().map_err(|e| match e {
            CoreError::InvalidConfig { field, reason } => invalid(field.replace("delay_spreads", "delay_spreads_ns"), reason),
            other => invalid("dataset", other.to_string()),
        })?;

        self.train.validate("train")?;
        if self.points.is_empty() {
            return Err(invalid("points", "at least one operating point is required"));
        }
        let mut ids = HashSet::new();
        for (i, p) in self.points.iter().enumerate() {
            let prefix = format!("points[{i}]");
            if p.id.is_empty() || !p.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(invalid(format!("{prefix}.id"), "must be non-empty and use only [A-Za-z0-9_-]"));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(invalid(format!("{prefix}.id"), format!("duplicate id `{}`", p.id)));
            }
            p.scheme.validate(&self.system).map_err(|e| prefixed(&prefix, e))?;
            p.train.validate(&format!("{prefix}.train"))?;
            if p.scheme.is_ai() && d.train == 0 {
                return Err(invalid("dataset.train", format!("point `{}` needs training data", p.id)));
            }
        }
        Ok(())
    }

    pub fn point(&self, id: &str) -> Option<&PointConfig> {
        self.points.iter().find(|p| p.id == id)
    }

    /// Resolved hyperparameters for one point; `seed` drives init and shuffling.
    pub fn train_config(&self, point: &PointConfig, seed: u64) -> (TrainConfig, Option<usize>) {
        let t = point.train.or(&self.train);
        let base = TrainConfig::default();
        (
            TrainConfig {
                learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
                batch_size: t.batch_size.unwrap_or(base.batch_size),
                epochs: t.epochs.unwrap_or(base.epochs),
                lr_decay: t.lr_decay.unwrap_or(base.lr_decay),
                seed,
                ..base
            },
            t.samples,
        )
    }
}
