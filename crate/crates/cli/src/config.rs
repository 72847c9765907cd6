//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tacstack::estimator::{Modality, ModelConfig, DEFAULT_DELTA};
use tacstack::policy::DEFAULT_D_MOVE;
use tacstack::sensor_sim::SensorParams;
use tacstack::sim_env::{
    default_tops, eval_bottoms, training_bottoms, Piece, DEFAULT_INIT_MARGIN, DEFAULT_INTERFACE_STIFFNESS,
    DEFAULT_MAX_PROBES, DEFAULT_TRIAL_JITTER,
};

use crate::error::CliError;

pub const CONFIG_SCHEMA: &str = "tacstack-config";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub version: u32,
    /// Required by every command that draws random numbers.
    pub seed: Option<u64>,
    pub sensor: SensorParams,
    /// Patch grid spacing, mm.
    pub spacing: f64,
    pub tops: Vec<Piece>,
    pub train_bottoms: Vec<Piece>,
    pub eval_bottoms: Vec<Piece>,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Patch estimators trained and compared.
    pub modalities: Vec<Modality>,
    pub eval: EvalConfig,
    pub trials: TrialSettings,
    pub episodes: EpisodeSettings,
    pub plot: PlotConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_per_pair: usize,
    pub eval_per_pair: usize,
    /// Where datasets are read from; defaults to the output directory.
    pub dir: Option<PathBuf>,
    /// Where models are read from; defaults to the output directory.
    pub model_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub delta: f64,
    /// Hypothesis spacing of the Bayes reference estimator, mm.
    pub bayes_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    pub count: usize,
    pub max_n: usize,
    pub jitter: f64,
    /// Probe counts reported in the accuracy table.
    pub ns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    /// Episodes per top and tower.
    pub count: usize,
    pub max_probes: usize,
    pub d_move: f64,
    pub delta: f64,
    pub init_margin: f64,
    pub interface_stiffness: f64,
    /// Patch model driving the closed loop and the stability trials.
    pub modality: Modality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Signal records per top/bottom pair.
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            version: CONFIG_VERSION,
            seed: None,
            sensor: SensorParams::default(),
            spacing: 1.0,
            tops: default_tops(),
            train_bottoms: training_bottoms(),
            eval_bottoms: eval_bottoms(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            modalities: Modality::ALL.to_vec(),
            eval: EvalConfig::default(),
            trials: TrialSettings::default(),
            episodes: EpisodeSettings::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_per_pair: 2000,
            eval_per_pair: 200,
            dir: None,
            model_dir: None,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            bayes_step: 0.5,
        }
    }
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            count: 200,
            max_n: 5,
            jitter: DEFAULT_TRIAL_JITTER,
            ns: vec![1, 2, 3],
        }
    }
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            count: 10,
            max_probes: DEFAULT_MAX_PROBES,
            d_move: DEFAULT_D_MOVE,
            delta: DEFAULT_DELTA,
            init_margin: DEFAULT_INIT_MARGIN,
            interface_stiffness: DEFAULT_INTERFACE_STIFFNESS,
            modality: Modality::FtTac,
        }
    }
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { samples: 500 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != CONFIG_SCHEMA || self.version != CONFIG_VERSION {
            return bad(format!(
                "expected schema {CONFIG_SCHEMA} v{CONFIG_VERSION}, found {} v{}",
                self.schema, self.version
            ));
        }
        self.sensor.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if self.tops.is_empty() {
            return bad("no top pieces configured".into());
        }
        let mut names: Vec<&str> = self.tops.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.tops.len() || names.iter().any(|n| slug(n).is_empty()) {
            return bad("top piece names must be distinct and contain a letter or digit".into());
        }
        if self.modalities.is_empty() {
            return bad("no modalities configured".into());
        }
        if !(self.eval.delta > 0.0 && self.eval.delta < 1.0) || !(self.eval.bayes_step > 0.0) {
            return bad("eval.delta must be in (0, 1) and eval.bayes_step positive".into());
        }
        if self.trials.max_n == 0 || self.trials.ns.iter().any(|&n| n == 0 || n > self.trials.max_n) {
            return bad(format!("trial probe counts must lie in 1..={}", self.trials.max_n));
        }
        if !(self.trials.jitter.is_finite() && self.trials.jitter >= 0.0) {
            return bad("trials.jitter must be non-negative".into());
        }
        Ok(())
    }

    /// The seed, which generative commands cannot run without.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (config \"seed\" or --seed)".into()))
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn data_dir<'a>(&'a self, out: &'a Path) -> &'a Path {
        self.data.dir.as_deref().unwrap_or(out)
    }

    pub fn model_dir<'a>(&'a self, out: &'a Path) -> &'a Path {
        self.data.model_dir.as_deref().unwrap_or(out)
    }
}

/// Lowercase alphanumeric form of a name, for file names.
pub fn slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.is_empty() && !s.ends_with('-') {
            s.push('-');
        }
    }
    s.trim_end_matches('-').to_string()
}

pub fn train_file(top: &str) -> String {
    format!("train-{}.jsonl", slug(top))
}

pub fn eval_file(top: &str) -> String {
    format!("eval-{}.jsonl", slug(top))
}

pub fn model_file(top: &str, m: Modality) -> String {
    format!("model-{}-{}.txt", slug(top), slug(m.label()))
}

pub fn loss_file(top: &str, m: Modality) -> String {
    format!("loss-{}-{}.tsv", slug(top), slug(m.label()))
}

pub fn implicit_file(top: &str) -> String {
    format!("implicit-{}.txt", slug(top))
}
