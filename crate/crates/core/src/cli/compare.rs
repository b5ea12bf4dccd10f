//! Grid comparisons across optimizers, hyperparameters and seeds.
//!
//! First-order optimizers sweep `lr × momentum`; K-FAC variants additionally
//! sweep `damping × kl_clip`. Every grid point runs once per seed in its own
//! directory, and `summary.csv` ranks the points by mean final training loss.
//! A failed run is recorded in `failures.csv` and the rest of the grid carries on.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::RunConfig;
use super::train::{cmd_train, RunRow};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub momentum: Vec<f64>,
    /// K-FAC only.
    #[serde(default)]
    pub damping: Vec<f64>,
    /// K-FAC only.
    #[serde(default)]
    pub kl_clip: Vec<f64>,
}

impl Grid {
    /// The learning-rate, momentum, damping and clipping values searched in the deep-MLP study.
    pub fn paper() -> Self {
        Self {
            lr: vec![1e-2, 1e-3, 1e-4],
            momentum: vec![0.0, 0.9],
            damping: vec![1e-2, 1e-3],
            kl_clip: vec![1e-2, 1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Template for every run; its optimizer section supplies the non-grid settings.
    pub base: RunConfig,
    pub optimizers: Vec<OptimizerKind>,
    pub grid: Grid,
    pub seeds: Vec<u64>,
}

/// One hyperparameter combination for one optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    /// `None` for first-order optimizers.
    pub damping: Option<f64>,
    pub kl_clip: Option<f64>,
}

impl GridPoint {
    pub fn label(&self) -> String {
        let mut s = format!("lr{:e}_mu{}", self.lr, self.momentum);
        if let (Some(d), Some(k)) = (self.damping, self.kl_clip) {
            s.push_str(&format!("_lam{d:e}_kl{k:e}"));
        }
        s
    }

    fn run_config(&self, base: &RunConfig, seed: u64, root: &Path) -> RunConfig {
        let mut cfg = base.clone();
        let o = &mut cfg.optimizer;
        o.kind = self.optimizer;
        o.lr = self.lr;
        o.momentum = self.momentum;
        if let Some(d) = self.damping {
            o.damping = d;
        }
        if let Some(k) = self.kl_clip {
            o.kl_clip = k;
        }
        cfg.seed = seed;
        cfg.output_dir = root.join(self.optimizer.name()).join(self.label()).join(format!("seed{seed}"));
        cfg
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimizers.is_empty() {
            return Err(Error::config("optimizers", "must list at least one optimizer"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.grid.lr.is_empty() || self.grid.momentum.is_empty() {
            return Err(Error::config("grid", "lr and momentum lists must be non-empty"));
        }
        if self.optimizers.iter().any(|k| k.is_kfac()) && (self.grid.damping.is_empty() || self.grid.kl_clip.is_empty()) {
            return Err(Error::config("grid", "K-FAC optimizers need non-empty damping and kl_clip lists"));
        }
        for p in self.points() {
            p.run_config(&self.base, self.seeds[0], &self.base.output_dir)
                .validate()
                .map_err(|e| match e {
                    Error::Config { field, constraint } => {
                        Error::config(field, format!("{constraint} (grid point {} {})", p.optimizer.name(), p.label()))
                    }
                    other => other,
                })?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &optimizer in &self.optimizers {
            for &lr in &g.lr {
                for &momentum in &g.momentum {
                    if optimizer.is_kfac() {
                        for &d in &g.damping {
                            for &k in &g.kl_clip {
                                out.push(GridPoint {
                                    optimizer,
                                    lr,
                                    momentum,
                                    damping: Some(d),
                                    kl_clip: Some(k),
                                });
                            }
                        }
                    } else {
                        out.push(GridPoint {
                            optimizer,
                            lr,
                            momentum,
                            damping: None,
                            kl_clip: None,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Mean, sample standard deviation and two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn seed_stats(values: &[f64]) -> SeedStats {
    let n = values.len();
    if n == 0 {
        return SeedStats {
            n,
            mean: f64::NAN,
            std: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return SeedStats {
            n,
            mean,
            std: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * std / (n as f64).sqrt();
    SeedStats {
        n,
        mean,
        std,
        ci_lo: mean - half,
        ci_hi: mean + half,
    }
}

/// Aggregated results of one grid point.
#[derive(Debug, Clone)]
pub struct PointSummary {
    pub point: GridPoint,
    pub rank: usize,
    pub final_train_loss: SeedStats,
    pub final_test_loss: SeedStats,
    pub final_test_acc: SeedStats,
    pub wall_seconds_mean: f64,
    pub failed: usize,
    /// Per-seed rows of every successful run, in seed order.
    pub runs: Vec<(u64, Vec<RunRow>)>,
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub point: GridPoint,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    /// Sorted by rank.
    pub summaries: Vec<PointSummary>,
    pub failures: Vec<RunFailure>,
    pub summary_path: PathBuf,
}

pub const SUMMARY_HEADER: &str = "rank,optimizer,lr,momentum,damping,kl_clip,seeds,failed,\
final_train_loss_mean,final_train_loss_std,final_train_loss_ci95_lo,final_train_loss_ci95_hi,\
final_test_loss_mean,final_test_loss_std,final_test_acc_mean,final_test_acc_std,wall_seconds_mean";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the whole grid in parallel and writes `summary.csv` (and `failures.csv` if needed).
pub fn cmd_compare(cfg: &CompareConfig) -> Result<CompareOutcome> {
    cfg.validate()?;
    let root = cfg.base.output_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let points = cfg.points();
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<(usize, u64, Result<Vec<RunRow>>)> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let run_cfg = points[p].run_config(&cfg.base, seed, &root);
            let res = cmd_train(&run_cfg, None).map(|o| o.rows);
            if let Err(e) = &res {
                warn!("{} {} seed {seed} failed: {e}", points[p].optimizer.name(), points[p].label());
            }
            (p, seed, res)
        })
        .collect();

    let mut failures = Vec::new();
    let mut per_point: Vec<Vec<(u64, Vec<RunRow>)>> = vec![Vec::new(); points.len()];
    let mut failed_count = vec![0usize; points.len()];
    for (p, seed, res) in results {
        match res {
            Ok(rows) => per_point[p].push((seed, rows)),
            Err(e) => {
                failed_count[p] += 1;
                failures.push(RunFailure {
                    point: points[p],
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let mut summaries: Vec<PointSummary> = points
        .iter()
        .zip(per_point)
        .zip(failed_count)
        .map(|((&point, runs), failed)| {
            let finals = |f: fn(&RunRow) -> f64| -> Vec<f64> {
                runs.iter().filter_map(|(_, rows)| rows.last().map(f)).collect()
            };
            let walls = finals(|r| r.wall_seconds);
            PointSummary {
                point,
                rank: 0,
                final_train_loss: seed_stats(&finals(|r| r.train_loss)),
                final_test_loss: seed_stats(&finals(|r| r.test_loss)),
                final_test_acc: seed_stats(&finals(|r| r.test_acc)),
                wall_seconds_mean: walls.iter().sum::<f64>() / walls.len().max(1) as f64,
                failed,
                runs,
            }
        })
        .collect();
    // Points with no successful run have a NaN mean and sort last.
    summaries.sort_by(|a, b| {
        let key = |s: &PointSummary| {
            let m = s.final_train_loss.mean;
            if m.is_nan() {
                f64::INFINITY
            } else {
                m
            }
        };
        key(a).total_cmp(&key(b))
    });
    for (i, s) in summaries.iter_mut().enumerate() {
        s.rank = i + 1;
    }

    let summary_path = root.join("summary.csv");
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in &summaries {
        let p = &s.point;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.rank,
            p.optimizer.name(),
            p.lr,
            p.momentum,
            opt_cell(p.damping),
            opt_cell(p.kl_clip),
            s.final_train_loss.n,
            s.failed,
            s.final_train_loss.mean,
            s.final_train_loss.std,
            s.final_train_loss.ci_lo,
            s.final_train_loss.ci_hi,
            s.final_test_loss.mean,
            s.final_test_loss.std,
            s.final_test_acc.mean,
            s.final_test_acc.std,
            s.wall_seconds_mean
        ));
    }
    fs::write(&summary_path, out).map_err(|e| Error::io(&summary_path, e))?;

    if !failures.is_empty() {
        let path = root.join("failures.csv");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut body = String::from("optimizer,point,seed,error\n");
        for fl in &failures {
            body.push_str(&format!(
                "{},{},{},\"{}\"\n",
                fl.point.optimizer.name(),
                fl.point.label(),
                fl.seed,
                fl.error.replace('"', "'")
            ));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(CompareOutcome {
        summaries,
        failures,
        summary_path,
    })
}
