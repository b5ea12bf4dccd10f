//! `kfac`: generate planted data, train with SGD/Adam/K-FAC, and run grid comparisons.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twolevel_kfac::cli::{self, ConfigKind, Overrides};
use twolevel_kfac::optim::OptimizerKind;
use twolevel_kfac::Result;

#[derive(Parser)]
#[command(name = "kfac", version, about = "One- and two-level K-FAC training for MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-target dataset.
    GenData {
        #[arg(long, default_value_t = 10)]
        d_in: usize,
        #[arg(long = "train", default_value_t = 25_000)]
        n_train: usize,
        #[arg(long = "test", default_value_t = 2_500)]
        n_test: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train one configuration and write run.csv.
    Train {
        /// JSON run config (a config.echo.json also works).
        config: PathBuf,
        /// Continue from a checkpoint.json written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// sgd, adam, kfac1 or kfac2.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        kl_clip: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run a grid of optimizers, hyperparameters and seeds.
    Compare {
        config: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a run or compare config without running it.
    ValidateConfig { config: PathBuf },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            d_in,
            n_train,
            n_test,
            seed,
            out,
        } => {
            let task = cli::cmd_gen_data(d_in, n_train, n_test, seed, &out)?;
            println!(
                "wrote {} train / {} test samples (d_in = {d_in}) to {}",
                task.train.len(),
                task.test.len(),
                out.display()
            );
            println!(
                "positive fraction: train {:.4}, test {:.4}",
                task.train.positive_fraction(),
                task.test.positive_fraction()
            );
        }
        Command::Train {
            config,
            resume,
            optimizer,
            lr,
            momentum,
            weight_decay,
            damping,
            kl_clip,
            epochs,
            batch_size,
            seed,
            output_dir,
        } => {
            let mut cfg = cli::load_run_config(&config)?;
            let overrides = Overrides {
                optimizer: optimizer.map(|s| s.parse::<OptimizerKind>()).transpose()?,
                lr,
                momentum,
                weight_decay,
                damping,
                kl_clip,
                epochs,
                batch_size,
                seed,
                output_dir,
            };
            overrides.apply(&mut cfg);
            let outcome = cli::cmd_train(&cfg, resume.as_deref())?;
            if let Some(last) = outcome.final_row() {
                println!(
                    "epoch {}: train_loss {:.6} test_loss {:.6} test_acc {:.4} ({:.1}s)",
                    last.epoch, last.train_loss, last.test_loss, last.test_acc, last.wall_seconds
                );
            }
            println!("results in {}", cfg.output_dir.join("run.csv").display());
        }
        Command::Compare { config, jobs } => {
            let cfg = cli::load_compare_config(&config)?;
            let run = || cli::cmd_compare(&cfg);
            let outcome = match jobs {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| twolevel_kfac::Error::State(format!("thread pool: {e}")))?
                    .install(run)?,
                None => run()?,
            };
            for s in outcome.summaries.iter().take(10) {
                println!(
                    "{:>3}. {:<6} {:<34} final train loss {:.6} (n={}, failed={})",
                    s.rank,
                    s.point.optimizer.name(),
                    s.point.label(),
                    s.final_train_loss.mean,
                    s.final_train_loss.n,
                    s.failed
                );
            }
            if !outcome.failures.is_empty() {
                eprintln!("{} run(s) failed; see failures.csv", outcome.failures.len());
            }
            println!("summary in {}", outcome.summary_path.display());
        }
        Command::ValidateConfig { config } => {
            let kind = cli::cmd_validate_config(&config)?;
            let what = match kind {
                ConfigKind::Run => "run",
                ConfigKind::Compare => "compare",
            };
            println!("{}: valid {what} config", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
