//! Training objective for one scenario.

use serde::{Deserialize, Serialize};

use super::{Forward, Model};
use crate::error::Result;
use crate::geometry::OrientedRect;
use crate::losses::{
    aligned_rows, autoregressive_total, distill_total, perception_losses, planning_loss, total_loss,
    LossParts, LossWeights, PlanOutputs,
};
use crate::tensor::Var;
use crate::world::Scenario;

/// Scalar values of every loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub det: f64,
    pub map: f64,
    pub mot: f64,
    pub plan: f64,
    pub distill: f64,
    pub autoreg: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, k: f64) {
        self.total += k * other.total;
        self.det += k * other.det;
        self.map += k * other.map;
        self.mot += k * other.mot;
        self.plan += k * other.plan;
        self.distill += k * other.distill;
        self.autoreg += k * other.autoreg;
    }
}

pub struct TrainingLoss<'t> {
    pub total: Var<'t>,
    pub parts: LossParts<'t>,
}

impl TrainingLoss<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            total: self.total.item(),
            det: self.parts.det.item(),
            map: self.parts.map.item(),
            mot: self.parts.mot.item(),
            plan: self.parts.plan.item(),
            distill: self.parts.distill.item(),
            autoreg: self.parts.autoreg.item(),
        }
    }
}

/// Perception, planning and, per the model's flags, distillation and
/// autoregressive map terms.
///
/// The planning term imitates the ground truth with every plan the pass
/// produced: fused, scene branch and ego branch.
pub fn training_loss<'t>(
    model: &Model,
    fwd: &Forward<'t>,
    scenario: &Scenario,
    w: &LossWeights,
) -> Result<TrainingLoss<'t>> {
    let cfg = &model.cfg;
    let tape = fwd.b_woes.tape();
    let perception = perception_losses(&fwd.agents, &scenario.agents, &fwd.maps, &scenario.map, cfg.horizon)?;

    let gt: Vec<f64> = scenario.gt_plan.waypoints.iter().flatten().copied().collect();
    let mut plans: Vec<&PlanOutputs<'t>> = vec![&fwd.plan];
    if fwd.e_fusion.is_some() {
        plans.push(&fwd.scene_plan);
    }
    if let Some(ego) = &fwd.ego_plan {
        plans.push(ego);
    }
    let mut plan = planning_loss(plans[0], &gt)?.total;
    for extra in &plans[1..] {
        plan = plan.add(planning_loss(extra, &gt)?.total)?;
    }

    let distill = match (cfg.flags.distill, fwd.b_wes) {
        (true, Some(teacher)) => {
            let boxes: Vec<OrientedRect> = scenario.agents.iter().map(|a| a.rect).collect();
            distill_total(fwd.b_woes, teacher, &cfg.feature_spec(), &boxes, w)?.total
        }
        _ => tape.scalar(0.0),
    };

    let autoreg = if cfg.flags.autoregressive_map {
        let mode = fwd.selected_mode();
        let t = cfg.horizon;
        let pred_plan = fwd
            .plan
            .trajectories
            .slice(0, mode, mode + 1)?
            .reshape(&[t, 2])?;
        let (gt_points, valid) = scenario.map.padded(cfg.n_map, cfg.n_point)?;
        let pred_map = fwd
            .maps
            .points
            .index_select(&aligned_rows(&perception.map_match, cfg.n_map))?;
        autoregressive_total(pred_plan, &scenario.gt_plan, pred_map, &gt_points, &valid, &cfg.bev, w)?.total
    } else {
        tape.scalar(0.0)
    };

    let parts = LossParts {
        det: perception.det,
        map: perception.map,
        mot: perception.mot,
        plan,
        distill,
        autoreg,
    };
    Ok(TrainingLoss {
        total: total_loss(&parts, w)?,
        parts,
    })
}
