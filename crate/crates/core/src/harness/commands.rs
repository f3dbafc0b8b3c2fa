use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, thread_count, ModelPlanner, ResultRow, RowContext};
use super::gradcheck::{op_suite, run_suite, OpResult};
use super::io::{write_atomic, write_csv, write_json};
use super::train::{model_checkpoint, model_from_checkpoint, train, LossRow, TrainReport};
use crate::error::{Error, Result};
use crate::model::{AblationFlags, Model, Variant};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::world::{generate_dataset, load_dataset, save_dataset, PerturbMode, Scenario, SCHEMA};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split_by_command: bool,
}

impl Overrides {
    /// `seed` re-bases the data splits and seeds model init and shuffling.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.data.reseed(seed);
            cfg.model.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.io.out_dir = out.clone();
        }
        if let Some(c) = &self.checkpoint {
            cfg.io.checkpoint = Some(c.clone());
        }
        cfg.experiment.split_by_command |= self.split_by_command;
        cfg.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub file: String,
    pub count: usize,
    /// Half-open seed range `[first, end)`.
    pub seeds: [u64; 2],
    pub straight: usize,
    pub turn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub train: SplitManifest,
    pub val: SplitManifest,
    pub world: crate::world::WorldConfig,
}

fn split_manifest(file: &str, first: u64, data: &[Scenario]) -> SplitManifest {
    let straight = data.iter().filter(|s| s.command().split() == "ST").count();
    SplitManifest {
        file: file.into(),
        count: data.len(),
        seeds: [first, first + data.len() as u64],
        straight,
        turn: data.len() - straight,
    }
}

/// Writes `train.jsonl`, `val.jsonl` and `manifest.json` into `dir`.
pub fn cmd_gen_data(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let d = &cfg.data;
    let train = generate_dataset(d.train_seed, d.n_train, &d.world)?;
    let val = generate_dataset(d.val_seed, d.n_val, &d.world)?;
    save_dataset(&train, &dir.join("train.jsonl"))?;
    save_dataset(&val, &dir.join("val.jsonl"))?;
    let manifest = Manifest {
        schema: SCHEMA.into(),
        train: split_manifest("train.jsonl", d.train_seed, &train),
        val: split_manifest("val.jsonl", d.val_seed, &val),
        world: d.world.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_split(cfg: &RunConfig, path: &Path) -> Result<Vec<Scenario>> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "dataset {} not found; run gen-data first",
            path.display()
        )));
    }
    load_dataset(path, &cfg.data.world.bev)
}

pub struct TrainSummary {
    pub report: TrainReport,
    pub seconds: f64,
    pub final_path: PathBuf,
    pub best_path: PathBuf,
}

fn train_into(
    cfg: &RunConfig,
    train_set: &[Scenario],
    val_set: &[Scenario],
    out: &Path,
    log: &mut dyn FnMut(&LossRow),
) -> Result<TrainSummary> {
    let mut model = Model::new(cfg.model.clone())?;
    if let Some(init) = &cfg.io.checkpoint {
        let warm = model_from_checkpoint(&load_checkpoint(init)?)?;
        if warm.cfg != model.cfg {
            return Err(Error::Checkpoint(format!(
                "{}: model config differs from the run config",
                init.display()
            )));
        }
        model = warm;
    }
    let threads = thread_count()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let report = train(&mut model, train_set, val_set, cfg, threads, |r| {
        rows.push(*r);
        log(r);
    })?;
    let seconds = start.elapsed().as_secs_f64();
    write_csv(&out.join("losses.csv"), &report.curve)?;
    let final_path = out.join("final.dbp");
    let best_path = out.join("best.dbp");
    save_checkpoint(
        &final_path,
        &model_checkpoint(&model.cfg, model.store.named(), "final", cfg.optimizer.epochs)?,
    )?;
    save_checkpoint(
        &best_path,
        &model_checkpoint(&model.cfg, report.best_params.clone(), "best", report.best_epoch)?,
    )?;
    Ok(TrainSummary {
        report,
        seconds,
        final_path,
        best_path,
    })
}

/// Trains on `train.jsonl`, validating on `val.jsonl`. Writes `losses.csv`,
/// `final.dbp`, `best.dbp` and the resolved `config.toml` to the out dir.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn FnMut(&LossRow)) -> Result<TrainSummary> {
    let train_set = load_split(cfg, &cfg.train_path())?;
    let val_set = load_split(cfg, &cfg.val_path())?;
    let out = &cfg.io.out_dir;
    let summary = train_into(cfg, &train_set, &val_set, out, log)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(summary)
}

fn eval_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.io
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.io.out_dir.join("final.dbp"))
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = eval_checkpoint(cfg);
    let model = model_from_checkpoint(&load_checkpoint(&path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (m, w) = (&model.cfg, &cfg.data.world);
    if m.bev != w.bev || m.horizon != w.horizon || m.dt != w.dt || m.n_point != w.n_point {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint grid/horizon does not match the dataset",
            path.display()
        )));
    }
    Ok(model)
}

fn rows_for(
    model: &Model,
    cfg: &RunConfig,
    data: &[Scenario],
    modes: &[PerturbMode],
    ctx: &RowContext<'_>,
    split: bool,
) -> Result<Vec<ResultRow>> {
    let planner = ModelPlanner {
        model,
        variant: ctx.variant,
    };
    let threads = thread_count()?;
    let mut rows = Vec::new();
    for &mode in modes {
        for (label, m) in evaluate(&planner, data, mode, &cfg.experiment.ego_dims, split, threads)? {
            rows.push(ResultRow::new(ctx, mode, label, &m));
        }
    }
    Ok(rows)
}

fn write_results(out: &Path, rows: &[ResultRow]) -> Result<()> {
    write_csv(&out.join("results.csv"), rows)?;
    write_json(&out.join("results.json"), &rows)
}

fn context<'a>(cfg: &'a RunConfig, model: &Model) -> RowContext<'a> {
    RowContext {
        experiment: &cfg.experiment.id,
        flags: format!("{{{}}}", model.cfg.flags.label()),
        variant: cfg.experiment.variant,
        train_seconds: 0.0,
        seed: model.cfg.seed,
    }
}

/// Metrics of the checkpoint on `val.jsonl`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    let model = load_model(cfg)?;
    let data = load_split(cfg, &cfg.val_path())?;
    let rows = rows_for(
        &model,
        cfg,
        &data,
        &[PerturbMode::None],
        &context(cfg, &model),
        cfg.experiment.split_by_command,
    )?;
    write_results(&cfg.io.out_dir, &rows)?;
    Ok(rows)
}

/// One metrics row per perturbation mode, in the configured order.
pub fn cmd_perturb(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    let model = load_model(cfg)?;
    let data = load_split(cfg, &cfg.val_path())?;
    let rows = rows_for(
        &model,
        cfg,
        &data,
        &cfg.experiment.perturbations,
        &context(cfg, &model),
        cfg.experiment.split_by_command,
    )?;
    write_results(&cfg.io.out_dir, &rows)?;
    Ok(rows)
}

/// Retrains each rung of the component ladder from scratch with the same
/// seed and data order, then evaluates the full planner on `val.jsonl`.
/// Per-rung loss curves and checkpoints go to `<out>/<ID>/`.
pub fn cmd_ablate(cfg: &RunConfig, log: &mut dyn FnMut(&str, &LossRow)) -> Result<Vec<ResultRow>> {
    let train_set = load_split(cfg, &cfg.train_path())?;
    let val_set = load_split(cfg, &cfg.val_path())?;
    let mut rows = Vec::with_capacity(5);
    for (id, flags) in AblationFlags::ladder() {
        let mut rung = cfg.clone();
        rung.model.flags = AblationFlags {
            path_attention: cfg.model.flags.path_attention,
            ..flags
        };
        rung.io.checkpoint = None;
        let dir = cfg.io.out_dir.join(id);
        let summary = train_into(&rung, &train_set, &val_set, &dir, &mut |r| log(id, r))?;
        let model = model_from_checkpoint(&load_checkpoint(&summary.final_path)?)?;
        let ctx = RowContext {
            experiment: id,
            flags: format!("{{{}}}", flags.label()),
            variant: Variant::Full,
            train_seconds: summary.seconds,
            seed: rung.model.seed,
        };
        rows.extend(rows_for(&model, &rung, &val_set, &[PerturbMode::None], &ctx, false)?);
    }
    write_results(&cfg.io.out_dir, &rows)?;
    Ok(rows)
}

/// Runs the finite-difference suite and writes `gradcheck.csv`.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<OpResult>> {
    let cases = op_suite(cfg.experiment.gradcheck_seed)?;
    let results = run_suite(&cases, cfg.experiment.gradcheck_tolerance, None)?;
    write_csv(&cfg.io.out_dir.join("gradcheck.csv"), &results)?;
    Ok(results)
}
