//! JSON run configuration.
//!
//! A run file looks like:
//!
//! ```json
//! {
//!   "architecture": { "layers": 64, "width": 10, "activation": "identity", "batchnorm": true },
//!   "dataset": { "kind": "planted", "d_in": 10, "n_train": 25000, "n_test": 2500 },
//!   "optimizer": { "kind": "kfac2", "lr": 1e-3, "momentum": 0.9, "weight_decay": 1e-3,
//!                  "damping": 1e-2, "kl_clip": 1e-3, "t_stats": 10, "t_inv": 100 },
//!   "epochs": 10,
//!   "batch_size": 512,
//!   "seed": 1,
//!   "output_dir": "runs/kfac2"
//! }
//! ```
//!
//! Omitted optimizer fields take the defaults of [`OptimizerConfig`]. The echo
//! written next to every run wraps the config with version metadata and loads
//! back through [`load_run_config`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_planted, load_csv, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{Activation, Architecture, LossKind};
use crate::optim::{OptimizerConfig, OptimizerKind};

/// Version of the echo and checkpoint file layouts.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    /// Explicit widths `[d_in, …, d_out]`; overrides `layers`/`width`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    /// Number of affine layers when `dims` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Output width when `dims` is absent.
    #[serde(default = "default_outputs")]
    pub outputs: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_width() -> usize {
    10
}
fn default_outputs() -> usize {
    1
}
fn default_activation() -> Activation {
    Activation::Identity
}
fn default_true() -> bool {
    true
}
fn default_loss() -> LossKind {
    LossKind::BernoulliLogit
}

impl ArchitectureSpec {
    /// `layers` affine layers of `width` units, BN on the hidden ones.
    pub fn deep_linear(layers: usize, width: usize) -> Self {
        Self {
            dims: None,
            layers: Some(layers),
            width,
            outputs: 1,
            activation: Activation::Identity,
            batchnorm: true,
            loss: LossKind::BernoulliLogit,
        }
    }

    pub fn resolve(&self, d_in: usize) -> Result<Architecture> {
        let dims = match (&self.dims, self.layers) {
            (Some(dims), _) => {
                if dims.first() != Some(&d_in) {
                    return Err(Error::config(
                        "architecture.dims",
                        format!("first entry must equal the dataset input width {d_in}, got {dims:?}"),
                    ));
                }
                dims.clone()
            }
            (None, Some(layers)) => {
                if layers == 0 {
                    return Err(Error::config("architecture.layers", "must be at least 1"));
                }
                if self.width == 0 || self.outputs == 0 {
                    return Err(Error::config("architecture.width", "width and outputs must be at least 1"));
                }
                let mut dims = vec![d_in];
                dims.extend(std::iter::repeat_n(self.width, layers - 1));
                dims.push(self.outputs);
                dims
            }
            (None, None) => return Err(Error::config("architecture", "give either `dims` or `layers`")),
        };
        Architecture::mlp(&dims, self.activation, self.batchnorm, self.loss)
            .map_err(|e| Error::config("architecture", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Planted {
        d_in: usize,
        n_train: usize,
        n_test: usize,
        /// Defaults to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv { train: PathBuf, test: PathBuf },
}

impl DatasetSpec {
    pub fn input_dim(&self) -> Result<usize> {
        match self {
            DatasetSpec::Planted { d_in, .. } => Ok(*d_in),
            DatasetSpec::Csv { train, .. } => {
                let mut reader = csv::Reader::from_path(train).map_err(|e| Error::Input(format!("{}: {e}", train.display())))?;
                let cols = reader
                    .headers()
                    .map_err(|e| Error::Input(format!("{}: {e}", train.display())))?
                    .len();
                if cols < 2 {
                    return Err(Error::Input(format!("{}: need a feature and a label column", train.display())));
                }
                Ok(cols - 1)
            }
        }
    }

    /// Train and test splits.
    pub fn load(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Planted {
                d_in,
                n_train,
                n_test,
                seed,
            } => {
                let task = gen_planted(*d_in, *n_train, *n_test, seed.unwrap_or(run_seed))
                    .map_err(|e| prefix_field(e, "dataset"))?;
                Ok((task.train, task.test))
            }
            DatasetSpec::Csv { train, test } => Ok((load_csv(train, Split::Train)?, load_csv(test, Split::Test)?)),
        }
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, constraint } => Error::config(format!("{prefix}.{field}"), constraint),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: ArchitectureSpec,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Checks every field and resolves the architecture against the dataset width.
    pub fn validate(&self) -> Result<Architecture> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        match &self.dataset {
            DatasetSpec::Planted { d_in, n_train, n_test, .. } => {
                for (f, v) in [("d_in", d_in), ("n_train", n_train), ("n_test", n_test)] {
                    if *v == 0 {
                        return Err(Error::config(format!("dataset.{f}"), "must be at least 1"));
                    }
                }
            }
            DatasetSpec::Csv { train, test } => {
                for (f, p) in [("train", train), ("test", test)] {
                    if !p.is_file() {
                        return Err(Error::config(format!("dataset.{f}"), format!("file {} does not exist", p.display())));
                    }
                }
            }
        }
        self.optimizer.validate()?;
        self.architecture.resolve(self.dataset.input_dim()?)
    }
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub optimizer: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub damping: Option<f64>,
    pub kl_clip: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let o = &mut cfg.optimizer;
        if let Some(v) = self.optimizer {
            o.kind = v;
        }
        if let Some(v) = self.lr {
            o.lr = v;
        }
        if let Some(v) = self.momentum {
            o.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            o.weight_decay = v;
        }
        if let Some(v) = self.damping {
            o.damping = v;
        }
        if let Some(v) = self.kl_clip {
            o.kl_clip = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
    }
}

/// Contents of `config.echo.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub format_version: u32,
    pub code_version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl ConfigEcho {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

pub(crate) fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), format!("invalid JSON: {e}")))
}

pub(crate) fn from_value<T: serde::de::DeserializeOwned>(v: serde_json::Value, origin: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::config(origin.display().to_string(), e.to_string()))
}

/// Reads a run config, accepting either a plain config or a `config.echo.json`.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let value = read_json(path)?;
    if value.get("config").is_some() && value.get("format_version").is_some() {
        let echo: ConfigEcho = from_value(value, path)?;
        return Ok(echo.config);
    }
    from_value(value, path)
}
