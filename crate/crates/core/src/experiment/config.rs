use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{InitStrategy, LatentShape};
use crate::objective::CutoutPolicy;
use crate::optim::StrategyKind;
use crate::toy::ToyConfig;

/// Full experiment description, read from a TOML file.
///
/// ```toml
/// name = "lighthouse"
/// text = "a lighthouse in a storm"
/// runs_per_strategy = 500
/// master_seed = 0
///
/// [backend]
/// type = "toy"            # or: type = "bridge", endpoint = "tcp://127.0.0.1:5555"
///
/// [[strategies]]
/// kind = "adam"           # iterations = 1000, adam = { lr = 0.05 }
/// [[strategies]]
/// kind = "cma_es"         # generations = 100, population = 10, sigma0 = 0.2
/// [[strategies]]
/// kind = "hybrid"         # generations = 50, population = 10, k = 1
///
/// [evaluation]
/// perplexity = 40.0
/// tsne_iterations = 1000
/// repeats = 30
/// samples_per_model = 500
/// ```
///
/// Omitted fields take the defaults shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub text: String,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyEntry>,
    #[serde(default = "default_runs")]
    pub runs_per_strategy: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Initial latent distribution; defaults to standard normal on the toy
    /// backend and truncated normal (bound 2) on the bridge.
    #[serde(default)]
    pub init: Option<InitStrategy>,
    #[serde(default)]
    pub toy: ToyConfig,
    /// Latent shape for the bridge backend; the toy shape comes from `toy`.
    #[serde(default)]
    pub latent: Option<LatentShape>,
    /// `seed_stream` is ignored: each run derives its own.
    #[serde(default)]
    pub cutouts: Option<CutoutPolicy>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_strategies() -> Vec<StrategyEntry> {
    vec![
        StrategyEntry::new(StrategyKind::adam()),
        StrategyEntry::new(StrategyKind::cma_es()),
        StrategyEntry::new(StrategyKind::hybrid()),
    ]
}

fn default_runs() -> usize {
    500
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    #[default]
    Toy,
    Bridge {
        endpoint: String,
    },
}

/// What the search aims at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// The text encoder's features for `text`.
    #[default]
    Text,
    /// Normalized sum of the full-frame features of `count` anchor images,
    /// each generated from a latent drawn with standard deviation `spread`.
    /// Gives a target reachable from several separated regions.
    Anchors {
        #[serde(default = "default_anchor_count")]
        count: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_anchor_count() -> usize {
    4
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    /// Directory and report name; defaults to `adam`, `cmaes`, or `hybrid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(flatten)]
    pub kind: StrategyKind,
}

fn check_label(label: &str) -> Result<()> {
    let valid = !label.is_empty()
        && label.len() <= 64
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if !valid {
        return Err(Error::Config(format!(
            "strategy label {label:?} must be 1-64 ASCII letters, digits, '-' or '_'"
        )));
    }
    if label == "reports" {
        return Err(Error::Config(
            "\"reports\" is reserved and cannot be a strategy label".into(),
        ));
    }
    Ok(())
}

impl StrategyEntry {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyEntry { label: None, kind }
    }

    pub fn labeled(label: &str, kind: StrategyKind) -> Result<Self> {
        check_label(label)?;
        Ok(StrategyEntry {
            label: Some(label.to_string()),
            kind,
        })
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.default_label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub repeats: usize,
    pub samples_per_model: usize,
    /// Grid side; `⌈√N⌉` of the pooled sample count when absent.
    pub grid_size: Option<usize>,
    /// Baseline label; the method with the best mean final fitness when absent.
    pub baseline: Option<String>,
    pub tsne_seed: u64,
    /// Montage tile side in pixels.
    pub thumbnail: u32,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            perplexity: 40.0,
            tsne_iterations: 1000,
            repeats: 30,
            samples_per_model: 500,
            grid_size: None,
            baseline: None,
            tsne_seed: 0,
            thumbnail: 32,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for everything but the text.
    pub fn new(text: impl Into<String>) -> Self {
        ExperimentConfig {
            name: default_name(),
            text: text.into(),
            target: TargetSpec::default(),
            backend: BackendConfig::default(),
            strategies: default_strategies(),
            runs_per_strategy: default_runs(),
            master_seed: 0,
            init: None,
            toy: ToyConfig::default(),
            latent: None,
            cutouts: None,
            evaluation: EvaluationConfig::default(),
            output_dir: default_output(),
            parallelism: 0,
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|m| Error::parse(path, m))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return Err(Error::Config(format!(
                "experiment name {:?} is not a valid directory name",
                self.name
            )));
        }
        if self.text.is_empty() {
            return Err(Error::Config("text must not be empty".into()));
        }
        if self.runs_per_strategy == 0 {
            return Err(Error::Config("runs_per_strategy must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.strategies {
            check_label(s.label())?;
            if !seen.insert(s.label()) {
                return Err(Error::Config(format!(
                    "strategy label {:?} is used twice; give each entry a unique `label`",
                    s.label()
                )));
            }
            s.kind
                .validate()
                .map_err(|e| Error::Config(format!("strategy {}: {e}", s.label())))?;
        }
        if let TargetSpec::Anchors { count, spread, .. } = self.target {
            if count == 0 || !(spread > 0.0) || !spread.is_finite() {
                return Err(Error::Config(format!(
                    "anchor target needs count >= 1 and spread > 0, got {count} and {spread}"
                )));
            }
        }
        if let BackendConfig::Bridge { endpoint } = &self.backend {
            endpoint.parse::<crate::bridge::Endpoint>()?;
        }
        match self.backend {
            BackendConfig::Toy => self.toy.validate()?,
            BackendConfig::Bridge { .. } => {
                if let Some(shape) = self.latent {
                    LatentShape::new(shape.num_hidden_layers, shape.latent_dim)?;
                }
            }
        }
        crate::latent::LatentInit::new(self.init_strategy(), 0).validate()?;
        self.cutout_policy().validate()?;
        let ev = &self.evaluation;
        if !(ev.perplexity > 1.0) {
            return Err(Error::Config(format!(
                "perplexity must exceed 1, got {}",
                ev.perplexity
            )));
        }
        if ev.tsne_iterations == 0
            || ev.repeats < 2
            || ev.samples_per_model == 0
            || ev.thumbnail == 0
        {
            return Err(Error::Config(
                "evaluation needs tsne_iterations >= 1, repeats >= 2, samples_per_model >= 1, thumbnail >= 1"
                    .into(),
            ));
        }
        if ev.grid_size == Some(0) {
            return Err(Error::Config("grid_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn init_strategy(&self) -> InitStrategy {
        self.init.unwrap_or(match self.backend {
            BackendConfig::Toy => InitStrategy::StandardNormal,
            BackendConfig::Bridge { .. } => InitStrategy::TruncatedNormal { bound: 2.0 },
        })
    }

    pub fn latent_shape(&self) -> Result<LatentShape> {
        match self.backend {
            BackendConfig::Toy => self.toy.shape(),
            BackendConfig::Bridge { .. } => Ok(self.latent.unwrap_or_else(LatentShape::large)),
        }
    }

    /// Cutout policy before the per-run seed stream is filled in.
    pub fn cutout_policy(&self) -> CutoutPolicy {
        match (self.cutouts, &self.backend) {
            (Some(c), BackendConfig::Toy) => CutoutPolicy {
                resize_to: self.toy.encoder_input_side,
                ..c
            },
            (Some(c), _) => c,
            (None, BackendConfig::Toy) => CutoutPolicy::toy_default(),
            (None, BackendConfig::Bridge { .. }) => CutoutPolicy::bridge_default(),
        }
    }

    pub fn strategy(&self, label: &str) -> Option<&StrategyEntry> {
        self.strategies.iter().find(|s| s.label() == label)
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}
