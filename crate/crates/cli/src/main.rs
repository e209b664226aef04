use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use sdpg_core::checkpoint::Checkpoint;
use sdpg_core::config::TrainConfig;
use sdpg_core::envs::EnvId;
use sdpg_core::eval::{evaluate_checkpoint, lqr_baseline};
use sdpg_core::oracle::run_verification;
use sdpg_core::plot::plot_files;
use sdpg_core::train::train;

#[derive(Parser)]
#[command(name = "sdpg", version, about = "Stochastic decoupled policy gradient on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config; writes metrics.csv and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores); never changes results.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Mean-action evaluation of a checkpoint; writes eval.csv next to it.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: EnvId,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle checks; exits nonzero if any fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "verify_report.csv")]
        out: PathBuf,
    },
    /// Learning curves from metrics.csv files.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            workers,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(o) = out {
                cfg.run.out_dir = o;
            }
            if let Some(w) = workers {
                cfg.run.workers = w;
            }
            let summary = train(cfg)?;
            if let Some(last) = summary.rows.last() {
                println!(
                    "epoch {} mean_nominal_return {:.4} mean_exp_delta {:.4}",
                    last.epoch, last.mean_nominal_return, last.mean_exp_delta
                );
            }
            println!("metrics: {}", summary.metrics_path.display());
            println!("checkpoint: {}", summary.final_checkpoint.display());
            Ok(true)
        }
        Command::Eval {
            ckpt,
            env,
            episodes,
            seed,
            out,
        } => {
            let c = Checkpoint::load(&ckpt)?;
            let res = evaluate_checkpoint(&c, env, episodes, seed)?;
            println!(
                "episodes {} mean_return {:.4} std_return {:.4} discounted {:.4} success_rate {:.3} final_metric {:.4}",
                episodes,
                res.mean_return(),
                res.std_return(),
                res.mean_discounted_return(),
                res.success_rate(),
                res.mean_final_metric()
            );
            if env == EnvId::PointMass2D {
                let lqr = lqr_baseline(episodes, seed)?;
                println!("lqr_discounted {:.4}", lqr.iter().sum::<f64>() / lqr.len() as f64);
            }
            let path = out.unwrap_or_else(|| ckpt.with_file_name("eval.csv"));
            res.write_csv(&path).with_context(|| format!("writing {}", path.display()))?;
            Ok(true)
        }
        Command::Verify { seed, out } => {
            let report = run_verification(seed);
            print!("{}", report.to_table());
            report.write_csv(&out)?;
            Ok(report.all_passed())
        }
        Command::Plot { csv, out } => {
            plot_files(&csv, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
