//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! In an ablation grid file, `grid.<key> = a | b | c` declares one axis.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `classes` | shape list | all six shapes |
//! | `train_per_class`, `test_per_class` | clouds per class | 100, 30 |
//! | `points` | points per generated cloud | 256 |
//! | `data_seed` | dataset seed | 0 |
//! | `arch` | `attention` or `point-mlp` | `attention` |
//! | `anchors`, `width`, `attn_dim`, `group_k` | model sizes | 64, 64, 16, 8 |
//! | `embed_hidden`, `head_hidden`, `layers` | model sizes | 32, 32, 4 |
//! | `sampler` | `das-l0`, `das-l1`, `das-ballquery-l0`, `fps`, `random` | `das-l0` |
//! | `density_k`, `fps_start` | sampler knobs | 5, 0 |
//! | `lambda`, `tau`, `sem_mode`, `sem_layers`, `smoothing_eps` | objective | 0.1, 1, `attention`, `1,2,3,4`, 0.2 |
//! | `epochs`, `batch_size`, `lr`, `optimizer`, `seed`, `val_fraction` | training | 60, 16, 0.001, `adam`, 0, 0.2 |
//! | `kinds` | corruption kinds to evaluate | all nine |
//! | `eval_seeds`, `eval_seed`, `corruption_seed` | evaluation seeding | 5, 0, 0 |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{ShapeKind, SyntheticDatasetSpec};
use super::HarnessError;
use crate::corruption::CorruptionKind;
use crate::loss::{LossConfig, SemMode};
use crate::model::{Architecture, ModelDims};
use crate::sampling::{SampleSpec, SamplerVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(HarnessError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: ModelDims,
    /// Anchor sampler; `m` follows `dims.anchors`.
    pub sampler: SampleSpec,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Share of the training clouds held out to pick the best epoch.
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn new(classes: usize) -> Self {
        let dims = ModelDims::attention(classes);
        Self {
            dims,
            sampler: SampleSpec::new(dims.anchors, SamplerVariant::DasL0),
            loss: LossConfig::default(),
            epochs: 60,
            batch_size: 16,
            lr: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            val_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.dims.validate()?;
        let layers = match self.dims.arch {
            Architecture::Attention => self.dims.layers,
            Architecture::PointMlp => 0,
        };
        if self.dims.arch == Architecture::PointMlp && self.loss.sem_mode == SemMode::Attention && self.loss.sem_active() {
            return Err(HarnessError::Config("the point-MLP model has no attention maps; use sem_mode = channel".into()));
        }
        self.loss.validate(layers)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HarnessError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(HarnessError::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.sampler.k == 0 {
            return Err(HarnessError::Config("density_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub kinds: Vec<CorruptionKind>,
    /// Evaluation draws per cloud when the sampler is stochastic.
    pub eval_seeds: usize,
    pub eval_seed: u64,
    pub corruption_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::ALL.to_vec(),
            eval_seeds: 5,
            eval_seed: 0,
            corruption_seed: 0,
        }
    }
}

/// Everything one train-and-evaluate run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: SyntheticDatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = SyntheticDatasetSpec::default();
        Self {
            train: TrainConfig::new(data.classes.len()),
            data,
            eval: EvalSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list<T, F>(value: &str, f: F) -> Result<Vec<T>, HarnessError>
where
    F: Fn(&str) -> Result<T, HarnessError>,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let t = &mut self.train;
        match key {
            "classes" => {
                self.data.classes = parse_list(value, ShapeKind::from_str)?;
                t.dims.classes = self.data.classes.len();
            }
            "train_per_class" => self.data.train_per_class = parse(key, value)?,
            "test_per_class" => self.data.test_per_class = parse(key, value)?,
            "points" => {
                self.data.points = parse(key, value)?;
                t.dims.n_in = self.data.points;
            }
            "data_seed" => self.data.seed = parse(key, value)?,
            "arch" => t.dims.arch = value.parse()?,
            "anchors" => {
                t.dims.anchors = parse(key, value)?;
                t.sampler.m = t.dims.anchors;
            }
            "width" => t.dims.width = parse(key, value)?,
            "attn_dim" => t.dims.attn_dim = parse(key, value)?,
            "group_k" => t.dims.group_k = parse(key, value)?,
            "embed_hidden" => t.dims.embed_hidden = parse(key, value)?,
            "head_hidden" => t.dims.head_hidden = parse(key, value)?,
            "layers" => t.dims.layers = parse(key, value)?,
            "sampler" => t.sampler.variant = value.parse()?,
            "density_k" | "k" => t.sampler.k = parse(key, value)?,
            "fps_start" => t.sampler.fps_start = parse(key, value)?,
            "lambda" => t.loss.lambda = parse(key, value)?,
            "tau" => t.loss.tau = parse(key, value)?,
            "sem_mode" => t.loss.sem_mode = value.parse()?,
            "sem_layers" => t.loss.sem_layers = parse_list(value, |s| parse(key, s))?,
            "smoothing_eps" => t.loss.smoothing_eps = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "seed" => t.seed = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "kinds" => {
                self.eval.kinds = if value.trim() == "all" {
                    CorruptionKind::ALL.to_vec()
                } else {
                    parse_list(value, |s| Ok(s.parse::<CorruptionKind>()?))?
                }
            }
            "eval_seeds" => self.eval.eval_seeds = parse(key, value)?,
            "eval_seed" => self.eval.eval_seed = parse(key, value)?,
            "corruption_seed" => self.eval.corruption_seed = parse(key, value)?,
            other => return Err(HarnessError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Defaults overridden by every assignment in `text`, in file order.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (key, value) in entries(text)? {
            if key.starts_with("grid.") {
                return Err(HarnessError::Config(format!(
                    "'{key}' is only valid in an ablation grid"
                )));
            }
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.data.validate()?;
        self.train.validate()?;
        if self.train.dims.classes != self.data.classes.len() {
            return Err(HarnessError::Config("class count disagrees with the class list".into()));
        }
        if self.eval.eval_seeds == 0 {
            return Err(HarnessError::Config("eval_seeds must be positive".into()));
        }
        Ok(())
    }
}

/// `(key, value)` pairs in file order.
pub(crate) fn entries(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
