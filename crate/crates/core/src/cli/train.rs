//! Single training runs: the epoch loop, `run.csv`, the config echo and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{from_value, read_json, ConfigEcho, RunConfig, FORMAT_VERSION};
use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::network::{self, Architecture, BnMode, LossKind, Params};
use crate::optim::{lr_at, Optimizer};

pub const RUN_CSV_HEADER: &str = "epoch,iteration,train_loss,test_loss,train_acc,test_acc,wall_seconds,lr,nu_mean";

/// One line of `run.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    /// 1-based.
    pub epoch: usize,
    /// Iterations completed so far.
    pub iteration: u64,
    /// Mean training-mode minibatch loss over the epoch.
    pub train_loss: f64,
    /// Eval-mode loss on the test split after the epoch.
    pub test_loss: f64,
    /// `NaN` for regression losses.
    pub train_acc: f64,
    pub test_acc: f64,
    /// Cumulative wall time since the run started.
    pub wall_seconds: f64,
    pub lr: f64,
    /// Mean KL-clipping factor over the epoch.
    pub nu_mean: f64,
}

impl RunRow {
    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iteration,
            self.train_loss,
            self.test_loss,
            self.train_acc,
            self.test_acc,
            self.wall_seconds,
            self.lr,
            self.nu_mean
        )
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub code_version: String,
    pub config: RunConfig,
    pub epochs_done: usize,
    pub wall_seconds: f64,
    pub params: Params,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = from_value(read_json(path)?, path)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Input(format!(
                "{}: checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_string(self).map_err(|e| Error::State(format!("checkpoint serialization: {e}")))?;
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Test-split loss and accuracy with BN in evaluation mode.
pub fn evaluate(arch: &Architecture, params: &Params, data: &Dataset) -> Result<(f64, f64)> {
    let (out, _) = network::forward(arch, params, &data.x, BnMode::Eval)?;
    let loss = network::loss(arch, &out, &data.y)?;
    Ok((loss, network::accuracy(arch, &out, &data.y).unwrap_or(f64::NAN)))
}

fn check_labels(arch: &Architecture, data: &Dataset) -> Result<()> {
    let bad = |what: &str| Err(Error::Input(format!("{:?} split: {what}", data.split)));
    match arch.loss() {
        LossKind::BernoulliLogit if data.y.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) => {
            bad("bernoulli labels must be 0 or 1")
        }
        LossKind::SoftmaxCe
            if data
                .y
                .as_slice()
                .iter()
                .any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= arch.output_dim()) =>
        {
            bad("class labels must be integers below the output width")
        }
        LossKind::Mse if data.y.rows() != arch.output_dim() => bad("regression targets must match the output width"),
        _ if data.input_dim() != arch.input_dim() => bad("feature count does not match the network input"),
        _ => Ok(()),
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<RunRow>,
    pub params: Params,
    pub output_dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn final_row(&self) -> Option<&RunRow> {
        self.rows.last()
    }
}

struct Sink {
    csv: BufWriter<File>,
    checkpoint: PathBuf,
}

/// Trains according to `cfg` on the given splits.
///
/// With `write_files`, `run.csv`, `config.echo.json` and `checkpoint.json` go
/// to `cfg.output_dir`; the CSV gets one flushed row per epoch. A `resume`
/// checkpoint continues its run and appends to the existing CSV.
pub fn run_training(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    write_files: bool,
    resume: Option<Checkpoint>,
) -> Result<RunOutcome> {
    let arch = cfg.validate()?;
    check_labels(&arch, train)?;
    check_labels(&arch, test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("train and test splits must be non-empty".into()));
    }

    let (mut params, mut opt, mut rng, start_epoch, wall_offset) = match resume {
        Some(ck) => {
            ck.params.check(&arch)?;
            (ck.params, ck.optimizer, ck.rng, ck.epochs_done, ck.wall_seconds)
        }
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let params = Params::init(&arch, &mut init_rng);
            let opt = Optimizer::new(cfg.optimizer.clone(), &arch, &params)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            (params, opt, rng, 0, 0.0)
        }
    };

    let mut sink = if write_files {
        let dir = &cfg.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = dir.join("config.echo.json");
        let json = serde_json::to_string_pretty(&ConfigEcho::new(cfg)).expect("config serializes");
        fs::write(&echo, json).map_err(|e| Error::io(&echo, e))?;
        let csv_path = dir.join("run.csv");
        let file = if start_epoch == 0 {
            File::create(&csv_path)
        } else {
            OpenOptions::new().append(true).open(&csv_path)
        }
        .map_err(|e| Error::io(&csv_path, e))?;
        let mut csv = BufWriter::new(file);
        if start_epoch == 0 {
            writeln!(csv, "{RUN_CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        }
        Some(Sink {
            csv,
            checkpoint: dir.join("checkpoint.json"),
        })
    } else {
        None
    };

    let started = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    for epoch in start_epoch..cfg.epochs {
        let lr = lr_at(epoch, &cfg.optimizer);
        let (mut loss_sum, mut acc_sum, mut nu_sum) = (0.0, 0.0, 0.0);
        let batches = minibatches(train.len(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let (x, y) = train.gather(idx);
            let m = opt.step(&arch, &mut params, &x, &y, lr, &mut rng)?;
            let w = idx.len() as f64;
            loss_sum += m.loss * w;
            acc_sum += m.accuracy.unwrap_or(f64::NAN) * w;
            nu_sum += m.nu;
        }
        let (test_loss, test_acc) = evaluate(&arch, &params, test)?;
        if !test_loss.is_finite() {
            return Err(Error::Numerical(format!("test loss became {test_loss} after epoch {}", epoch + 1)));
        }
        let n = train.len() as f64;
        let row = RunRow {
            epoch: epoch + 1,
            iteration: opt.state.iteration,
            train_loss: loss_sum / n,
            test_loss,
            train_acc: acc_sum / n,
            test_acc,
            wall_seconds: wall_offset + started.elapsed().as_secs_f64(),
            lr,
            nu_mean: nu_sum / batches.len() as f64,
        };
        info!(
            "epoch {} train_loss {:.6} test_loss {:.6} test_acc {:.4} nu {:.3}",
            row.epoch, row.train_loss, row.test_loss, row.test_acc, row.nu_mean
        );
        if let Some(s) = sink.as_mut() {
            let csv_path = cfg.output_dir.join("run.csv");
            writeln!(s.csv, "{}", row.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
            s.csv.flush().map_err(|e| Error::io(&csv_path, e))?;
            Checkpoint {
                format_version: FORMAT_VERSION,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                config: cfg.clone(),
                epochs_done: epoch + 1,
                wall_seconds: row.wall_seconds,
                params: params.clone(),
                optimizer: opt.clone(),
                rng: rng.clone(),
            }
            .save(&s.checkpoint)?;
        }
        rows.push(row);
    }
    if opt.state.coarse_skips > 0 {
        info!("coarse term skipped at {} preconditioner refreshes", opt.state.coarse_skips);
    }
    Ok(RunOutcome {
        rows,
        params,
        output_dir: write_files.then(|| cfg.output_dir.clone()),
    })
}

/// Loads the data named by `cfg` and trains, writing the run files.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let resume = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != *cfg {
                return Err(Error::config(
                    "resume",
                    "checkpoint was written by a different configuration",
                ));
            }
            Some(ck)
        }
        None => None,
    };
    let (train, test) = cfg.dataset.load(cfg.seed)?;
    run_training(cfg, &train, &test, true, resume)
}

/// Parses a `run.csv` back into rows.
pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(RUN_CSV_HEADER) {
        return Err(Error::Input(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Input(format!("{} line {}: malformed row", path.display(), i + 2));
            if f.len() != 9 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(RunRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                iteration: f[1].parse().map_err(|_| bad())?,
                train_loss: num(2)?,
                test_loss: num(3)?,
                train_acc: num(4)?,
                test_acc: num(5)?,
                wall_seconds: num(6)?,
                lr: num(7)?,
                nu_mean: num(8)?,
            })
        })
        .collect()
}
