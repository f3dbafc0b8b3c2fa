//! Open-loop planning metrics: displacement error at fixed horizons and
//! cumulative collision against agent futures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rect_intersection_region, OrientedRect};
use crate::types::{Agent, Trajectory};

/// Evaluation horizons in seconds.
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

/// Ego footprint, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoDims {
    pub length: f64,
    pub width: f64,
}

impl Default for EgoDims {
    fn default() -> Self {
        EgoDims {
            length: 4.08,
            width: 1.73,
        }
    }
}

/// Waypoint index reached at `horizon` seconds.
fn horizon_index(plan: &Trajectory, horizon: f64) -> Result<usize> {
    let steps = horizon / plan.dt;
    let k = steps.round();
    if !(plan.dt > 0.0) || (steps - k).abs() > 1e-9 || k < 1.0 || k as usize > plan.len() {
        return Err(Error::invalid(
            "metrics",
            format!(
                "horizon {horizon} s is not a waypoint of a {}-step plan at dt {}",
                plan.len(),
                plan.dt
            ),
        ));
    }
    Ok(k as usize - 1)
}

/// Euclidean waypoint distance at each of [`HORIZONS`].
pub fn l2_error(pred: &Trajectory, gt: &Trajectory) -> Result<[f64; 3]> {
    if pred.len() != gt.len() || pred.dt != gt.dt {
        return Err(Error::invalid(
            "l2_error",
            format!(
                "plans differ: {} steps at {} s vs {} steps at {} s",
                pred.len(),
                pred.dt,
                gt.len(),
                gt.dt
            ),
        ));
    }
    let mut out = [0.0; 3];
    for (o, &h) in out.iter_mut().zip(&HORIZONS) {
        let k = horizon_index(gt, h)?;
        let (a, b) = (pred.waypoints[k], gt.waypoints[k]);
        *o = (a[0] - b[0]).hypot(a[1] - b[1]);
    }
    Ok(out)
}

/// Ego rectangles along a plan, heading from waypoint differences.
pub fn ego_footprints(plan: &Trajectory, dims: &EgoDims) -> Vec<OrientedRect> {
    plan.waypoints
        .iter()
        .zip(plan.headings())
        .map(|(&p, h)| OrientedRect {
            center: p,
            half_extents: [dims.length / 2.0, dims.width / 2.0],
            heading: crate::geometry::normalize_angle(h),
        })
        .collect()
}

/// Per-step overlap of the ego footprint with any agent.
pub fn step_collisions(plan: &Trajectory, agents: &[Agent], dims: &EgoDims) -> Result<Vec<bool>> {
    if let Some(a) = agents.iter().find(|a| a.future.len() < plan.len()) {
        return Err(Error::invalid(
            "collision_check",
            format!("agent future has {} steps, plan has {}", a.future.len(), plan.len()),
        ));
    }
    Ok(ego_footprints(plan, dims)
        .iter()
        .enumerate()
        .map(|(k, ego)| {
            agents
                .iter()
                .any(|a| !rect_intersection_region(ego, &a.rect_at(k)).is_empty())
        })
        .collect())
}

/// Collision at each horizon: any overlap at or before that step.
pub fn collision_check(plan: &Trajectory, agents: &[Agent], dims: &EgoDims) -> Result<[bool; 3]> {
    let steps = step_collisions(plan, agents, dims)?;
    let mut out = [false; 3];
    for (o, &h) in out.iter_mut().zip(&HORIZONS) {
        let k = horizon_index(plan, h)?;
        *o = steps[..=k].iter().any(|&c| c);
    }
    Ok(out)
}

/// Metrics averaged over a set of scenarios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub count: usize,
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub cr_1s: f64,
    pub cr_2s: f64,
    pub cr_3s: f64,
    pub cr_avg: f64,
}

/// Running sums for [`PlanMetrics`].
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    count: usize,
    l2: [f64; 3],
    cr: [f64; 3],
}

impl MetricsAccumulator {
    pub fn push(&mut self, l2: [f64; 3], collided: [bool; 3]) {
        self.count += 1;
        for i in 0..3 {
            self.l2[i] += l2[i];
            self.cr[i] += f64::from(u8::from(collided[i]));
        }
    }

    pub fn evaluate(&mut self, pred: &Trajectory, gt: &Trajectory, agents: &[Agent], dims: &EgoDims) -> Result<()> {
        let l2 = l2_error(pred, gt)?;
        let cr = collision_check(pred, agents, dims)?;
        self.push(l2, cr);
        Ok(())
    }

    pub fn finish(&self) -> PlanMetrics {
        if self.count == 0 {
            return PlanMetrics::default();
        }
        let n = self.count as f64;
        let l2 = self.l2.map(|x| x / n);
        let cr = self.cr.map(|x| x / n);
        PlanMetrics {
            count: self.count,
            l2_1s: l2[0],
            l2_2s: l2[1],
            l2_3s: l2[2],
            l2_avg: (l2[0] + l2[1] + l2[2]) / 3.0,
            cr_1s: cr[0],
            cr_2s: cr[1],
            cr_3s: cr[2],
            cr_avg: (cr[0] + cr[1] + cr[2]) / 3.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Pose;
    use proptest::prelude::*;

    fn line(y: f64) -> Trajectory {
        Trajectory::new((1..=6).map(|k| [2.0 * k as f64, y]).collect(), 0.5)
    }

    fn parked(x: f64, y: f64) -> Agent {
        let rect = OrientedRect::from_size([x, y], 4.5, 1.9, 0.0).unwrap();
        Agent {
            rect,
            future: vec![Pose { x, y, heading: 0.0 }; 6],
        }
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2_error(&line(0.0), &line(0.0)).unwrap(), [0.0; 3]);
        assert_eq!(l2_error(&line(1.0), &line(0.0)).unwrap(), [1.0; 3]);
        let a = Trajectory::new(vec![[0.0, 0.0], [3.0, 4.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [6.0, 8.0]], 0.5);
        let b = Trajectory::new(vec![[0.0; 2]; 6], 0.5);
        assert_eq!(l2_error(&a, &b).unwrap(), [5.0, 2f64.sqrt(), 10.0]);
        let short = Trajectory::new(vec![[0.0; 2]; 4], 0.5);
        assert!(l2_error(&short, &short).is_err());
    }

    #[test]
    fn no_agents_no_collision() {
        assert_eq!(collision_check(&line(0.0), &[], &EgoDims::default()).unwrap(), [false; 3]);
        let far = parked(500.0, 0.0);
        assert_eq!(collision_check(&line(0.0), &[far], &EgoDims::default()).unwrap(), [false; 3]);
    }

    #[test]
    fn collision_at_one_and_a_half_seconds() {
        // Ego at 1.5 s is at x = 6; an agent parked at x = 6 hits it there
        // (and at 2.0 s / x = 8), but not at 1.0 s / x = 4 ... check steps.
        let plan = line(0.0);
        let agent = parked(6.0 + 4.3, 0.0);
        let steps = step_collisions(&plan, &[agent.clone()], &EgoDims::default()).unwrap();
        // Oracle: ego half length 2.04 + agent half length 2.25 = 4.29 < 4.3
        // clearance at x = 6; x = 8 overlaps.
        assert_eq!(steps, vec![false, false, false, true, true, true]);
        let agent = parked(6.0 + 4.2, 0.0);
        let steps = step_collisions(&plan, &[agent.clone()], &EgoDims::default()).unwrap();
        assert_eq!(steps, vec![false, false, true, true, true, true]);
        assert_eq!(collision_check(&plan, &[agent], &EgoDims::default()).unwrap(), [false, true, true]);
    }

    #[test]
    fn accumulator_averages() {
        let mut acc = MetricsAccumulator::default();
        acc.push([1.0, 2.0, 3.0], [false, true, true]);
        acc.push([3.0, 4.0, 5.0], [false, false, true]);
        let m = acc.finish();
        assert_eq!((m.l2_1s, m.l2_2s, m.l2_3s, m.l2_avg), (2.0, 3.0, 4.0, 3.0));
        assert_eq!((m.cr_1s, m.cr_2s, m.cr_3s), (0.0, 0.5, 1.0));
        assert_eq!(m.count, 2);
    }

    proptest! {
        #[test]
        fn collisions_are_monotone(x in -5.0f64..20.0, y in -3.0f64..3.0, h in -3.0f64..3.0, curve in -0.3f64..0.3) {
            let plan = Trajectory::new((1..=6).map(|k| { let s = 2.0 * k as f64; [s, curve * s * s / 4.0] }).collect(), 0.5);
            let rect = OrientedRect::from_size([x, y], 4.5, 1.9, h).unwrap();
            let agent = Agent { rect, future: (0..6).map(|k| Pose { x: x - 0.8 * k as f64, y, heading: h }).collect() };
            let c = collision_check(&plan, &[agent], &EgoDims::default()).unwrap();
            prop_assert!(!c[0] || c[1]);
            prop_assert!(!c[1] || c[2]);
        }

        #[test]
        fn l2_is_translation_equivariant(dx in -50.0f64..50.0, dy in -50.0f64..50.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pt = || [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let a: Vec<[f64; 2]> = (0..6).map(|_| pt()).collect();
            let b: Vec<[f64; 2]> = (0..6).map(|_| pt()).collect();
            let shift = |v: &[[f64; 2]]| v.iter().map(|p| [p[0] + dx, p[1] + dy]).collect::<Vec<_>>();
            let e0 = l2_error(&Trajectory::new(a.clone(), 0.5), &Trajectory::new(b.clone(), 0.5)).unwrap();
            let e1 = l2_error(&Trajectory::new(shift(&a), 0.5), &Trajectory::new(shift(&b), 0.5)).unwrap();
            for i in 0..3 {
                prop_assert!((e0[i] - e1[i]).abs() < 1e-9);
            }
        }
    }
}
