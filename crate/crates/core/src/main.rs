use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dbp::harness::{self, Overrides, ResultRow, RunConfig};

#[derive(Parser)]
#[command(name = "dbp", version, about = "Dual-branch planner: data, training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val scenario files and a manifest.
    GenData(Common),
    /// Train a model; writes losses.csv, final.dbp and best.dbp.
    Train(Common),
    /// Evaluate a checkpoint on the validation split.
    Eval(Common),
    /// Evaluate under each ego-velocity perturbation mode.
    Perturb(Common),
    /// Train and evaluate the five-rung component ladder.
    Ablate(Common),
    /// Finite-difference check of every differentiable op.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (for gen-data: the dataset directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Add ST/LR rows next to the overall metrics.
    #[arg(long)]
    split_by_command: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            checkpoint: self.checkpoint.clone(),
            split_by_command: self.split_by_command,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn print_rows(rows: &[ResultRow]) {
    println!("experiment,flags,perturbation,split,n,l2_1s,l2_2s,l2_3s,l2_avg,cr_avg");
    for r in rows {
        println!(
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.experiment, r.flags, r.perturbation, r.split, r.count, r.l2_1s, r.l2_2s, r.l2_3s, r.l2_avg, r.cr_avg
        );
    }
}

fn log_epoch(prefix: &str, r: &harness::LossRow, every: usize) {
    if r.epoch == 1 || r.epoch % every == 0 {
        eprintln!(
            "{prefix}epoch {:4}  total {:.4}  det {:.4}  map {:.4}  mot {:.4}  plan {:.4}  distill {:.4}  autoreg {:.4}  lr {:.2e}",
            r.epoch, r.total, r.det, r.map, r.mot, r.plan, r.distill, r.autoreg, r.lr
        );
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(c) => {
            let mut cfg = c.resolve()?;
            if c.out.is_some() {
                cfg.io.data_dir = cfg.io.out_dir.clone();
            }
            let m = harness::cmd_gen_data(&cfg, &cfg.io.data_dir).context("gen-data")?;
            println!(
                "wrote {} train ({} ST / {} LR) and {} val scenarios to {}",
                m.train.count,
                m.train.straight,
                m.train.turn,
                m.val.count,
                cfg.io.data_dir.display()
            );
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let every = (cfg.optimizer.epochs / 20).max(1);
            let s = harness::cmd_train(&cfg, &mut |r| log_epoch("", r, every)).context("train")?;
            for (epoch, l2) in &s.report.val_l2 {
                eprintln!("val epoch {epoch:4}  avg L2 {l2:.4}");
            }
            println!(
                "trained {} epochs in {:.1}s; best val epoch {}; checkpoints {} and {}",
                cfg.optimizer.epochs,
                s.seconds,
                s.report.best_epoch,
                s.final_path.display(),
                s.best_path.display()
            );
        }
        Command::Eval(c) => print_rows(&harness::cmd_eval(&c.resolve()?).context("eval")?),
        Command::Perturb(c) => print_rows(&harness::cmd_perturb(&c.resolve()?).context("perturb")?),
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let every = (cfg.optimizer.epochs / 10).max(1);
            let rows = harness::cmd_ablate(&cfg, &mut |id, r| log_epoch(&format!("{id} "), r, every))
                .context("ablate")?;
            print_rows(&rows);
        }
        Command::Gradcheck(c) => {
            let cfg = c.resolve()?;
            let results = harness::cmd_gradcheck(&cfg).context("gradcheck")?;
            let tol = cfg.experiment.gradcheck_tolerance;
            for r in &results {
                println!(
                    "{:<26} max_rel {:.3e}  max_abs {:.3e}  n {:4}  {}",
                    r.op,
                    r.max_rel_err,
                    r.max_abs_err,
                    r.checked,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
            if !failed.is_empty() {
                eprintln!("gradient check above {tol:e}: {}", failed.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
