use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EgoDims, MetricsAccumulator, PlanMetrics};
use crate::model::{Model, Variant};
use crate::types::{EgoStatus, Trajectory};
use crate::world::{perturb_ego, PerturbMode, Scenario};

/// Anything that maps a scenario (with a possibly perturbed ego state) to a
/// plan. Shared read-only across evaluation threads.
pub trait Planner: Sync {
    fn plan(&self, scenario: &Scenario, ego: &EgoStatus) -> Result<Trajectory>;
}

pub struct ModelPlanner<'a> {
    pub model: &'a Model,
    pub variant: Variant,
}

impl Planner for ModelPlanner<'_> {
    fn plan(&self, s: &Scenario, ego: &EgoStatus) -> Result<Trajectory> {
        let pred = self.model.predict(s.obs.tensor(), ego, s.command(), self.variant)?;
        Ok(pred.plan().clone())
    }
}

/// Returns the ground truth. Used as an eval fixture.
pub struct OraclePlanner;

impl Planner for OraclePlanner {
    fn plan(&self, s: &Scenario, _: &EgoStatus) -> Result<Trajectory> {
        Ok(s.gt_plan.clone())
    }
}

/// Plans with no motion at all.
pub struct StationaryPlanner;

impl Planner for StationaryPlanner {
    fn plan(&self, s: &Scenario, _: &EgoStatus) -> Result<Trajectory> {
        Ok(Trajectory::new(vec![[0.0, 0.0]; s.gt_plan.len()], s.gt_plan.dt))
    }
}

/// Evaluation threads: `DBP_THREADS` if set, else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("DBP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("DBP_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Plans for every scenario under `mode`, in input order. Results do not
/// depend on the thread count.
pub fn plan_all<P: Planner>(planner: &P, scenarios: &[Scenario], mode: PerturbMode, threads: usize) -> Result<Vec<Trajectory>> {
    let run = |chunk: &[Scenario]| -> Result<Vec<Trajectory>> {
        chunk
            .iter()
            .map(|s| planner.plan(s, &perturb_ego(&s.ego_status, mode)))
            .collect()
    };
    let threads = threads.clamp(1, scenarios.len().max(1));
    if threads == 1 {
        return run(scenarios);
    }
    let size = scenarios.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios.chunks(size).map(|c| scope.spawn(move || run(c))).collect();
        let mut out = Vec::with_capacity(scenarios.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::invalid("plan_all", "evaluation thread panicked"))??);
        }
        Ok(out)
    })
}

/// Metrics over all scenarios, then per command split (`ST`, `LR`) when
/// `split` is set. Labels are `all`, `ST`, `LR`.
pub fn evaluate_plans(
    scenarios: &[Scenario],
    plans: &[Trajectory],
    dims: &EgoDims,
    split: bool,
) -> Result<Vec<(&'static str, PlanMetrics)>> {
    if plans.len() != scenarios.len() {
        return Err(Error::invalid("evaluate_plans", "one plan per scenario required"));
    }
    let mut all = MetricsAccumulator::default();
    let mut st = MetricsAccumulator::default();
    let mut lr = MetricsAccumulator::default();
    for (s, p) in scenarios.iter().zip(plans) {
        all.evaluate(p, &s.gt_plan, &s.agents, dims)?;
        let acc = if s.command().split() == "ST" { &mut st } else { &mut lr };
        acc.evaluate(p, &s.gt_plan, &s.agents, dims)?;
    }
    let mut out = vec![("all", all.finish())];
    if split {
        out.push(("ST", st.finish()));
        out.push(("LR", lr.finish()));
    }
    Ok(out)
}

pub fn evaluate<P: Planner>(
    planner: &P,
    scenarios: &[Scenario],
    mode: PerturbMode,
    dims: &EgoDims,
    split: bool,
    threads: usize,
) -> Result<Vec<(&'static str, PlanMetrics)>> {
    let plans = plan_all(planner, scenarios, mode, threads)?;
    evaluate_plans(scenarios, &plans, dims, split)
}

/// Mean over scenarios of the average L2 a stationary plan would score:
/// the GT speed times the horizon, averaged over the 1/2/3 s horizons.
pub fn inertia_free_bound(scenarios: &[Scenario]) -> f64 {
    if scenarios.is_empty() {
        return 0.0;
    }
    let sum: f64 = scenarios
        .iter()
        .map(|s| crate::metrics::HORIZONS.iter().map(|h| s.gt_speed() * h).sum::<f64>() / 3.0)
        .sum();
    sum / scenarios.len() as f64
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub flags: String,
    pub variant: String,
    pub perturbation: String,
    pub split: String,
    pub count: usize,
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub cr_1s: f64,
    pub cr_2s: f64,
    pub cr_3s: f64,
    pub cr_avg: f64,
    pub train_seconds: f64,
    pub seed: u64,
}

pub struct RowContext<'a> {
    pub experiment: &'a str,
    pub flags: String,
    pub variant: Variant,
    pub train_seconds: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn new(ctx: &RowContext<'_>, mode: PerturbMode, split: &str, m: &PlanMetrics) -> Self {
        ResultRow {
            experiment: ctx.experiment.to_string(),
            flags: ctx.flags.clone(),
            variant: match ctx.variant {
                Variant::Full => "full",
                Variant::SceneOnly => "scene_only",
            }
            .into(),
            perturbation: mode.name().into(),
            split: split.into(),
            count: m.count,
            l2_1s: m.l2_1s,
            l2_2s: m.l2_2s,
            l2_3s: m.l2_3s,
            l2_avg: m.l2_avg,
            cr_1s: m.cr_1s,
            cr_2s: m.cr_2s,
            cr_3s: m.cr_3s,
            cr_avg: m.cr_avg,
            train_seconds: ctx.train_seconds,
            seed: ctx.seed,
        }
    }

    pub fn metrics(&self) -> PlanMetrics {
        PlanMetrics {
            count: self.count,
            l2_1s: self.l2_1s,
            l2_2s: self.l2_2s,
            l2_3s: self.l2_3s,
            l2_avg: self.l2_avg,
            cr_1s: self.cr_1s,
            cr_2s: self.cr_2s,
            cr_3s: self.cr_3s,
            cr_avg: self.cr_avg,
        }
    }
}
