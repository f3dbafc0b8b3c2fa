//! Set-matched perception losses, motion, planning and the task-weighted
//! total.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};
use crate::types::{Agent, MapInstanceSet};

use super::{hungarian_match, LossWeights};

/// Box regression layout: `[cx, cy, length, width, sin h, cos h]`.
pub const BOX_DIMS: usize = 6;
/// Agent logits: `[vehicle, no-object]`.
pub const AGENT_CLASSES: usize = 2;
/// Map logits: three element classes then no-object.
pub const MAP_CLASSES: usize = 4;

/// Decoded agent set: `boxes: N×6`, `logits: N×2`, `motion: N×(T·2)`
/// future center displacements.
#[derive(Clone, Copy, Debug)]
pub struct AgentOutputs<'t> {
    pub boxes: Var<'t>,
    pub logits: Var<'t>,
    pub motion: Var<'t>,
}

/// Decoded map set: `points: N_map×(N_point·2)`, `logits: N_map×4`.
#[derive(Clone, Copy, Debug)]
pub struct MapOutputs<'t> {
    pub points: Var<'t>,
    pub logits: Var<'t>,
}

/// Multi-mode plan: `trajectories: N_mode×(T·2)`, `scores: N_mode`.
#[derive(Clone, Copy, Debug)]
pub struct PlanOutputs<'t> {
    pub trajectories: Var<'t>,
    pub scores: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct PerceptionLoss<'t> {
    pub det: Var<'t>,
    pub map: Var<'t>,
    pub mot: Var<'t>,
    /// `(prediction, ground truth)` pairs.
    pub agent_match: Vec<(usize, usize)>,
    pub map_match: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct PlanLoss<'t> {
    pub total: Var<'t>,
    pub regression: Var<'t>,
    pub classification: Var<'t>,
    /// Mode closest to the ground truth.
    pub winner: usize,
}

pub fn agent_box_target(a: &Agent) -> [f64; BOX_DIMS] {
    let r = &a.rect;
    let (s, c) = r.heading.sin_cos();
    [
        r.center[0],
        r.center[1],
        2.0 * r.half_extents[0],
        2.0 * r.half_extents[1],
        s,
        c,
    ]
}

/// Future center displacements from the current center for `t` steps.
pub fn agent_motion_target(a: &Agent, t: usize) -> Result<Vec<f64>> {
    if a.future.len() < t {
        return Err(Error::invalid(
            "agent_motion_target",
            format!("agent future has {} steps, need {t}", a.future.len()),
        ));
    }
    Ok(a.future[..t]
        .iter()
        .flat_map(|p| [p.x - a.rect.center[0], p.y - a.rect.center[1]])
        .collect())
}

fn rows_of(t: &Tensor) -> Vec<&[f64]> {
    let w = t.shape()[1];
    t.data().chunks(w).collect()
}

fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    rows_of(logits)
        .into_iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = r.iter().map(|x| (x - m).exp()).sum();
            r.iter().map(|x| (x - m).exp() / z).collect()
        })
        .collect()
}

/// Mean L1 between selected prediction rows and constant targets.
fn matched_l1<'t>(pred: Var<'t>, rows: &[usize], target: Vec<f64>) -> Result<Var<'t>> {
    let tape = pred.tape();
    if rows.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let w = pred.shape()[1];
    let t = tape.constant(Tensor::new(&[rows.len(), w], target)?);
    Ok(pred.index_select(rows)?.sub(t)?.abs().mean())
}

/// Mean cross-entropy of `logits: N×K` against per-row class indices.
pub fn cross_entropy<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != targets.len() {
        return Err(Error::shape("cross_entropy", &s, &[targets.len(), 0]));
    }
    let mut onehot = Tensor::zeros(&s);
    for (i, &c) in targets.iter().enumerate() {
        if c >= s[1] {
            return Err(Error::invalid("cross_entropy", format!("class {c} out of {}", s[1])));
        }
        onehot.set(&[i, c], 1.0);
    }
    let tape = logits.tape();
    Ok(logits
        .log_softmax(1)?
        .mul(tape.constant(onehot))?
        .sum()
        .scale(-1.0 / s[0] as f64))
}

/// Hungarian-matched detection, mapping and motion losses.
///
/// Matching cost is the L1 center (agents) or mean point (maps) distance
/// minus the predicted probability of the true class. Matched pairs add
/// L1 regression; every prediction adds cross-entropy with unmatched ones
/// targeting no-object.
pub fn perception_losses<'t>(
    agents: &AgentOutputs<'t>,
    gt_agents: &[Agent],
    maps: &MapOutputs<'t>,
    gt_map: &MapInstanceSet,
    horizon: usize,
) -> Result<PerceptionLoss<'t>> {
    // Agents.
    let boxes = agents.boxes.value();
    let probs = softmax_rows(&agents.logits.value());
    let targets: Vec<[f64; BOX_DIMS]> = gt_agents.iter().map(agent_box_target).collect();
    let cost: Vec<Vec<f64>> = rows_of(&boxes)
        .iter()
        .zip(&probs)
        .map(|(b, p)| {
            targets
                .iter()
                .map(|t| (b[0] - t[0]).abs() + (b[1] - t[1]).abs() - p[0])
                .collect()
        })
        .collect();
    let agent_match = if targets.is_empty() {
        Vec::new()
    } else {
        hungarian_match(&cost)?
    };
    let n_agent = probs.len();
    let mut cls = vec![AGENT_CLASSES - 1; n_agent];
    for &(i, _) in &agent_match {
        cls[i] = 0;
    }
    let rows: Vec<usize> = agent_match.iter().map(|p| p.0).collect();
    let box_t: Vec<f64> = agent_match.iter().flat_map(|&(_, j)| targets[j]).collect();
    let det = matched_l1(agents.boxes, &rows, box_t)?.add(cross_entropy(agents.logits, &cls)?)?;
    let mut mot_t = Vec::new();
    for &(_, j) in &agent_match {
        mot_t.extend(agent_motion_target(&gt_agents[j], horizon)?);
    }
    let mot = matched_l1(agents.motion, &rows, mot_t)?;

    // Map elements.
    let pts = maps.points.value();
    let mprobs = softmax_rows(&maps.logits.value());
    let width = pts.shape()[1];
    let gt_flat: Vec<Vec<f64>> = gt_map
        .instances
        .iter()
        .map(|m| m.points.iter().flatten().copied().collect::<Vec<f64>>())
        .collect();
    if let Some(bad) = gt_flat.iter().find(|g| g.len() != width) {
        return Err(Error::shape("perception_losses", &[bad.len()], &[width]));
    }
    let mcost: Vec<Vec<f64>> = rows_of(&pts)
        .iter()
        .zip(&mprobs)
        .map(|(p, pr)| {
            gt_flat
                .iter()
                .zip(&gt_map.instances)
                .map(|(g, inst)| {
                    let l1: f64 = p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum();
                    l1 / width as f64 - pr[inst.class.index()]
                })
                .collect()
        })
        .collect();
    let map_match = if gt_flat.is_empty() {
        Vec::new()
    } else {
        hungarian_match(&mcost)?
    };
    let mut mcls = vec![MAP_CLASSES - 1; mprobs.len()];
    for &(i, j) in &map_match {
        mcls[i] = gt_map.instances[j].class.index();
    }
    let mrows: Vec<usize> = map_match.iter().map(|p| p.0).collect();
    let map_t: Vec<f64> = map_match.iter().flat_map(|&(_, j)| gt_flat[j].clone()).collect();
    let map = matched_l1(maps.points, &mrows, map_t)?.add(cross_entropy(maps.logits, &mcls)?)?;
    Ok(PerceptionLoss {
        det,
        map,
        mot,
        agent_match,
        map_match,
    })
}

/// Prediction row for each padded ground-truth slot: the matched
/// prediction for real instances, row 0 for padding.
pub fn aligned_rows(matches: &[(usize, usize)], n_slots: usize) -> Vec<usize> {
    let mut rows = vec![0; n_slots];
    for &(i, j) in matches {
        if j < n_slots {
            rows[j] = i;
        }
    }
    rows
}

/// Index of the mode with the smallest L1 distance to `gt`; ties go to the
/// lowest index.
pub fn closest_mode(trajectories: &Tensor, gt: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, row) in rows_of(trajectories).iter().enumerate() {
        let d: f64 = row.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Winner-takes-all imitation: mean L1 of the closest mode plus
/// cross-entropy selecting it. `gt` is the flattened `T×2` plan.
pub fn planning_loss<'t>(plan: &PlanOutputs<'t>, gt: &[f64]) -> Result<PlanLoss<'t>> {
    let s = plan.trajectories.shape();
    if s.len() != 2 || s[1] != gt.len() || plan.scores.shape() != [s[0]] {
        return Err(Error::shape("planning_loss", &s, &[0, gt.len()]));
    }
    let winner = closest_mode(&plan.trajectories.value(), gt);
    let regression = matched_l1(plan.trajectories, &[winner], gt.to_vec())?;
    let classification = cross_entropy(plan.scores.reshape(&[1, s[0]])?, &[winner])?;
    Ok(PlanLoss {
        total: regression.add(classification)?,
        regression,
        classification,
        winner,
    })
}

/// Named loss terms entering the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<'t> {
    pub det: Var<'t>,
    pub map: Var<'t>,
    pub mot: Var<'t>,
    pub plan: Var<'t>,
    pub distill: Var<'t>,
    pub autoreg: Var<'t>,
}

impl<'t> LossParts<'t> {
    pub fn named(&self) -> [(&'static str, Var<'t>); 6] {
        [
            ("det", self.det),
            ("map", self.map),
            ("mot", self.mot),
            ("plan", self.plan),
            ("distill", self.distill),
            ("autoreg", self.autoreg),
        ]
    }
}

/// `λ_det L_det + λ_map L_map + λ_mot L_mot + λ_plan L_plan + λ_aux (L_distill + L_autoreg)`.
pub fn total_loss<'t>(parts: &LossParts<'t>, w: &LossWeights) -> Result<Var<'t>> {
    for (name, v) in parts.named() {
        let x = v.item();
        if !x.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss part {name} = {x}"),
            });
        }
    }
    parts
        .det
        .scale(w.det)
        .add(parts.map.scale(w.map))?
        .add(parts.mot.scale(w.mot))?
        .add(parts.plan.scale(w.plan))?
        .add(parts.distill.add(parts.autoreg)?.scale(w.aux))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedRect;
    use crate::tensor::Tape;
    use crate::types::{MapClass, MapInstance, Pose};

    fn agent(cx: f64, cy: f64, h: f64) -> Agent {
        let rect = OrientedRect::from_size([cx, cy], 4.5, 1.9, h).unwrap();
        let future = (1..=3)
            .map(|k| Pose {
                x: cx + k as f64,
                y: cy,
                heading: h,
            })
            .collect();
        Agent { rect, future }
    }

    fn motion_rows(a: &[Agent]) -> Vec<f64> {
        a.iter().flat_map(|x| agent_motion_target(x, 3).unwrap()).collect()
    }

    fn confident(n: usize, k: usize, classes: &[usize]) -> Tensor {
        let mut t = Tensor::full(&[n, k], -30.0);
        for (i, &c) in classes.iter().enumerate() {
            t.set(&[i, c], 30.0);
        }
        t
    }

    fn map_set() -> MapInstanceSet {
        MapInstanceSet {
            instances: vec![
                MapInstance {
                    class: MapClass::Boundary,
                    points: vec![[-5.0, 2.0], [5.0, 2.0]],
                },
                MapInstance {
                    class: MapClass::LaneDivider,
                    points: vec![[-5.0, -1.0], [5.0, -1.5]],
                },
            ],
        }
    }

    fn map_points(m: &MapInstanceSet, order: &[usize]) -> Tensor {
        Tensor::new(
            &[order.len(), 4],
            order.iter().flat_map(|&i| m.instances[i].points.iter().flatten().copied().collect::<Vec<_>>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let gt = vec![agent(3.0, 1.0, 0.2), agent(-6.0, -2.0, 0.0)];
        let m = map_set();
        let tape = Tape::new();
        let boxes: Vec<f64> = gt.iter().flat_map(agent_box_target).collect();
        let a = AgentOutputs {
            boxes: tape.constant(Tensor::new(&[2, 6], boxes).unwrap()),
            logits: tape.constant(confident(2, 2, &[0, 0])),
            motion: tape.constant(Tensor::new(&[2, 6], motion_rows(&gt)).unwrap()),
        };
        let mo = MapOutputs {
            points: tape.constant(map_points(&m, &[0, 1])),
            logits: tape.constant(confident(2, 4, &[1, 0])),
        };
        let l = perception_losses(&a, &gt, &mo, &m, 3).unwrap();
        assert!(l.det.item() < 1e-12);
        assert!(l.map.item() < 1e-12);
        assert_eq!(l.mot.item(), 0.0);
        assert_eq!(l.agent_match, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn no_ground_truth_is_pure_no_object() {
        let tape = Tape::new();
        let logits = Tensor::new(&[3, 2], vec![0.5, -0.2, 1.0, 1.0, -2.0, 0.3]).unwrap();
        let a = AgentOutputs {
            boxes: tape.constant(Tensor::zeros(&[3, 6])),
            logits: tape.constant(logits.clone()),
            motion: tape.constant(Tensor::zeros(&[3, 6])),
        };
        let mo = MapOutputs {
            points: tape.constant(Tensor::zeros(&[2, 4])),
            logits: tape.constant(Tensor::zeros(&[2, 4])),
        };
        let l = perception_losses(&a, &[], &mo, &MapInstanceSet::default(), 3).unwrap();
        let ce: f64 = rows_of(&logits)
            .iter()
            .map(|r| -(r[1] - (r[0].exp() + r[1].exp()).ln()))
            .sum::<f64>()
            / 3.0;
        assert!((l.det.item() - ce).abs() < 1e-12);
        assert!((l.map.item() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(l.mot.item(), 0.0);
    }

    #[test]
    fn swapped_predictions_are_unswapped() {
        let gt = vec![agent(3.0, 1.0, 0.2), agent(-6.0, -2.0, 0.0)];
        let tape = Tape::new();
        let mut boxes: Vec<f64> = gt.iter().rev().flat_map(agent_box_target).collect();
        boxes[0] += 0.3; // prediction 0 ↔ gt 1, off by 0.3 in x
        let a = AgentOutputs {
            boxes: tape.constant(Tensor::new(&[2, 6], boxes).unwrap()),
            logits: tape.constant(confident(2, 2, &[0, 0])),
            motion: tape.constant(Tensor::zeros(&[2, 6])),
        };
        let m = map_set();
        let mo = MapOutputs {
            points: tape.constant(map_points(&m, &[1, 0])),
            logits: tape.constant(confident(2, 4, &[0, 1])),
        };
        let l = perception_losses(&a, &gt, &mo, &m, 3).unwrap();
        assert_eq!(l.agent_match, vec![(0, 1), (1, 0)]);
        assert_eq!(l.map_match, vec![(0, 1), (1, 0)]);
        assert!((l.det.item() - 0.3 / 12.0).abs() < 1e-12);
        assert!(l.map.item() < 1e-12);
        // Motion error measured against the matched agents.
        let want = motion_rows(&gt).iter().map(|x| x.abs()).sum::<f64>() / 12.0;
        assert!((l.mot.item() - want).abs() < 1e-12);
        assert_eq!(aligned_rows(&l.map_match, 3), vec![1, 0, 0]);
    }

    #[test]
    fn planning_selects_closest_mode() {
        let gt: [f64; 6] = [1.0, 0.0, 2.0, 0.0, 3.0, 0.0];
        let modes: [[f64; 6]; 3] = [
            [1.0, 1.0, 2.0, 1.0, 3.0, 1.0],
            [1.1, 0.0, 2.2, 0.1, 3.0, -0.2],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        // Exhaustive distance oracle.
        let d: Vec<f64> = modes.iter().map(|m| m.iter().zip(&gt).map(|(a, b)| (a - b).abs()).sum()).collect();
        let oracle = (0..3).min_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap()).unwrap();
        let tape = Tape::new();
        let p = PlanOutputs {
            trajectories: tape.constant(Tensor::new(&[3, 6], modes.concat()).unwrap()),
            scores: tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0])),
        };
        let l = planning_loss(&p, &gt).unwrap();
        assert_eq!(l.winner, oracle);
        assert!((l.regression.item() - d[1] / 6.0).abs() < 1e-12);
        assert!((l.classification.item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn planning_exact_mode_and_ties() {
        let gt = [1.0, 0.5, 2.0, 1.0];
        let tape = Tape::new();
        let p = PlanOutputs {
            trajectories: tape.constant(Tensor::new(&[2, 4], [[0.0; 4], gt].concat()).unwrap()),
            scores: tape.constant(Tensor::vector(vec![-40.0, 40.0])),
        };
        let l = planning_loss(&p, &gt).unwrap();
        assert_eq!(l.regression.item(), 0.0);
        assert!(l.classification.item() < 1e-30);
        let same = PlanOutputs {
            trajectories: tape.constant(Tensor::new(&[3, 4], [[0.5; 4]; 3].concat()).unwrap()),
            scores: tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])),
        };
        let l = planning_loss(&same, &gt).unwrap();
        assert_eq!(l.winner, 0);
        assert!((l.regression.item() - 2.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn score_scale_does_not_move_target() {
        let gt = [1.0, 0.0];
        let tape = Tape::new();
        let trajs = tape.constant(Tensor::new(&[3, 2], vec![5.0, 0.0, 1.2, 0.0, -1.0, 0.0]).unwrap());
        for scale in [0.01, 1.0, 100.0] {
            let p = PlanOutputs {
                trajectories: trajs,
                scores: tape.constant(Tensor::vector(vec![3.0 * scale, -1.0 * scale, 0.5 * scale])),
            };
            assert_eq!(planning_loss(&p, &gt).unwrap().winner, 1);
        }
    }

    fn parts<'t>(tape: &'t Tape, v: [f64; 6]) -> LossParts<'t> {
        LossParts {
            det: tape.scalar(v[0]),
            map: tape.scalar(v[1]),
            mot: tape.scalar(v[2]),
            plan: tape.scalar(v[3]),
            distill: tape.scalar(v[4]),
            autoreg: tape.scalar(v[5]),
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let tape = Tape::new();
        let w = LossWeights::default();
        assert_eq!(total_loss(&parts(&tape, [0.0; 6]), &w).unwrap().item(), 0.0);
        let w2 = LossWeights { plan: 2.0, ..w };
        let t = total_loss(&parts(&tape, [0.0, 0.0, 0.0, 1.5, 0.0, 0.0]), &w2).unwrap();
        assert_eq!(t.item(), 3.0);
        let v = [0.7, 1.3, 0.2, 2.9, 0.05, 0.4];
        let w3 = LossWeights {
            det: 0.5,
            map: 2.0,
            mot: 0.25,
            plan: 1.5,
            aux: 3.0,
            ..w
        };
        let want = 0.5 * 0.7 + 2.0 * 1.3 + 0.25 * 0.2 + 1.5 * 2.9 + 3.0 * (0.05 + 0.4);
        assert!((total_loss(&parts(&tape, v), &w3).unwrap().item() - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_part_is_named() {
        let tape = Tape::new();
        let err = total_loss(&parts(&tape, [0.0, 0.0, f64::NAN, 0.0, 0.0, 0.0]), &LossWeights::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("mot"), "{err}");
    }
}
