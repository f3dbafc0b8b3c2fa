//! Training objectives.

mod autoreg;
mod distill;
mod hungarian;
mod task;

pub use autoreg::{
    autoregressive_gwd_loss, autoregressive_map_loss, autoregressive_total, key_region_masks,
    perception_box, perception_boxes, plan_headings, AutoregLoss,
};
pub use distill::{
    agent_keypoints, distill_df, distill_ic, distill_ik, distill_total, foreground_cells,
    foreground_weights, DistillLoss,
};
pub use hungarian::{assignment_cost, hungarian_match};
pub use task::{
    agent_box_target, agent_motion_target, aligned_rows, closest_mode, cross_entropy,
    perception_losses, planning_loss, total_loss, AgentOutputs, LossParts, MapOutputs,
    PerceptionLoss, PlanLoss, PlanOutputs, AGENT_CLASSES, BOX_DIMS, MAP_CLASSES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss weights. Distillation uses `alpha`, `beta`, `gamma`; the
/// autoregressive terms `delta` (map) and `lambda` (GWD).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub det: f64,
    pub map: f64,
    pub mot: f64,
    pub plan: f64,
    pub aux: f64,
    /// Smoothing of the mask normalizer, in coordinates.
    pub epsilon: f64,
    /// Background cell weight of the dense distillation term.
    pub bg_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 0.1,
            gamma: 0.01,
            delta: 0.01,
            lambda: 0.01,
            det: 1.0,
            map: 1.0,
            mot: 1.0,
            plan: 1.0,
            aux: 1.0,
            epsilon: 1.0,
            bg_weight: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("det", self.det),
            ("map", self.map),
            ("mot", self.mot),
            ("plan", self.plan),
            ("aux", self.aux),
            ("epsilon", self.epsilon),
            ("bg_weight", self.bg_weight),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.epsilon == 0.0 {
            return Err(Error::Config("loss weight epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta, w.gamma, w.delta, w.lambda), (0.01, 0.1, 0.01, 0.01, 0.01));
        assert!(w.validate().is_ok());
        assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
        assert!(LossWeights { epsilon: 0.0, ..w }.validate().is_err());
    }
}
