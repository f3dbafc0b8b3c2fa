//! Finite-difference suite over every differentiable operation.
//!
//! `detach` is absent by construction: its zero backward is exactly what a
//! finite difference cannot see. The stop-gradient tests cover it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    cross_attention, deformable_attention_baseline, mhsa, path_attention, MultiHeadAttentionVars,
    PathAttentionConfig, PathAttentionVars,
};
use crate::error::Result;
use crate::geometry::{gwd_var, BevSpec, OrientedRect, RectVar};
use crate::losses::{
    agent_keypoints, autoregressive_gwd_loss, autoregressive_map_loss, autoregressive_total, cross_entropy,
    distill_df, distill_ic, distill_ik, distill_total, perception_losses, planning_loss, AgentOutputs,
    LossWeights, MapOutputs, PlanOutputs,
};
use crate::tensor::gradcheck::{analytic_gradients, compare, numeric_gradients, FD_STEP};
use crate::tensor::{Tape, Tensor, Var};
use crate::types::Trajectory;
use crate::world::{generate_with, WorldConfig};

type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpResult {
    pub op: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub passed: bool,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.0.random_range(lo..hi)).collect()).expect("shape")
    }

    fn signed(&mut self, shape: &[usize]) -> Tensor {
        self.uniform(shape, -1.0, 1.0)
    }

    /// Magnitudes in `[0.2, 1.5]` with random sign: away from kinks at 0.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor {
        let mut t = self.uniform(shape, 0.2, 1.5);
        for x in t.data_mut() {
            if self.0.random_bool(0.5) {
                *x = -*x;
            }
        }
        t
    }
}

/// Project to a scalar with a fixed random weighting.
fn weighted<'t>(tape: &'t Tape, out: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(out.mul(tape.constant(w.clone()))?.sum())
}

fn unary(g: &mut Gen, name: &'static str, x: Tensor, op: fn(Var<'_>) -> Var<'_>) -> OpCase {
    let w = g.signed(x.shape());
    OpCase {
        name,
        inputs: vec![x],
        f: Box::new(move |t, v| weighted(t, op(v[0]), &w)),
    }
}

fn mha_inputs(g: &mut Gen, c: usize) -> Vec<Tensor> {
    let s = 1.0 / (c as f64).sqrt();
    (0..4).flat_map(|_| [g.uniform(&[c, c], -s, s), g.uniform(&[c], -0.1, 0.1)]).collect()
}

fn mha_vars<'t>(v: &[Var<'t>], heads: usize) -> MultiHeadAttentionVars<'t> {
    MultiHeadAttentionVars {
        heads,
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

fn path_inputs(g: &mut Gen, cfg: PathAttentionConfig) -> Vec<Tensor> {
    let (t, k, c, ct) = (cfg.heads, cfg.samples, cfg.width, cfg.head_width);
    let mut v: Vec<Tensor> = (0..t).map(|_| g.signed(&[c, ct])).collect();
    v.extend((0..t).map(|_| g.signed(&[ct, c])));
    v.push(g.uniform(&[c, t * k * 2], -0.3, 0.3));
    v.push(g.uniform(&[t * k * 2], -0.3, 0.3));
    v.push(g.signed(&[c, t * k]));
    v.push(g.signed(&[t * k]));
    v
}

fn path_vars<'t>(cfg: PathAttentionConfig, v: &[Var<'t>]) -> PathAttentionVars<'t> {
    let t = cfg.heads;
    PathAttentionVars {
        cfg,
        value_proj: v[..t].to_vec(),
        out_proj: v[t..2 * t].to_vec(),
        offset_w: v[2 * t],
        offset_b: v[2 * t + 1],
        weight_w: v[2 * t + 2],
        weight_b: v[2 * t + 3],
    }
}

/// Every registered case, at points drawn from `seed`.
pub fn op_suite(seed: u64) -> Result<Vec<OpCase>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut cases = Vec::new();

    // Elementwise and broadcasting arithmetic.
    for name in ["add", "sub", "mul", "div"] {
        let a = g.signed(&[3, 4]);
        let b = if name == "div" { g.uniform(&[3, 1], 0.5, 2.0) } else { g.signed(&[4]) };
        let w = g.signed(&[3, 4]);
        cases.push(OpCase {
            name,
            inputs: vec![a, b],
            f: Box::new(move |t, v| {
                let out = match name {
                    "add" => v[0].add(v[1]),
                    "sub" => v[0].sub(v[1]),
                    "mul" => v[0].mul(v[1]),
                    _ => v[0].div(v[1]),
                }?;
                weighted(t, out, &w)
            }),
        });
    }
    let x = g.signed(&[2, 3]);
    cases.push(unary(&mut g, "scale", x, |v| v.scale(-1.7).add_scalar(0.4)));
    let x = g.signed(&[2, 3]);
    cases.push(unary(&mut g, "neg", x, |v| v.neg()));
    let x = g.off_zero(&[2, 3]);
    cases.push(unary(&mut g, "relu", x, |v| v.relu()));
    let x = g.signed(&[2, 3]);
    cases.push(unary(&mut g, "exp", x, |v| v.exp()));
    let x = g.uniform(&[2, 3], 0.3, 2.0);
    cases.push(unary(&mut g, "log", x, |v| v.log()));
    let x = g.uniform(&[2, 3], 0.3, 2.0);
    cases.push(unary(&mut g, "sqrt", x, |v| v.sqrt()));
    let x = g.signed(&[2, 3]);
    cases.push(unary(&mut g, "tanh", x, |v| v.tanh()));
    let x = g.uniform(&[2, 3], -3.0, 3.0);
    cases.push(unary(&mut g, "sin", x, |v| v.sin()));
    let x = g.uniform(&[2, 3], -3.0, 3.0);
    cases.push(unary(&mut g, "cos", x, |v| v.cos()));
    let x = g.off_zero(&[2, 3]);
    cases.push(unary(&mut g, "abs", x, |v| v.abs()));
    let x = g.signed(&[2, 3]);
    cases.push(unary(&mut g, "square", x, |v| v.square()));
    {
        let (y, x) = (g.off_zero(&[5]), g.off_zero(&[5]));
        let w = g.signed(&[5]);
        cases.push(OpCase {
            name: "atan2",
            inputs: vec![y, x],
            f: Box::new(move |t, v| weighted(t, t.atan2(v[0], v[1])?, &w)),
        });
    }

    // Linear algebra and shape manipulation.
    {
        let w = g.signed(&[3, 2]);
        cases.push(OpCase {
            name: "matmul",
            inputs: vec![g.signed(&[3, 4]), g.signed(&[4, 2])],
            f: Box::new(move |t, v| weighted(t, v[0].matmul(v[1])?, &w)),
        });
        let w = g.signed(&[3, 4]);
        cases.push(OpCase {
            name: "reshape_transpose",
            inputs: vec![g.signed(&[2, 6])],
            f: Box::new(move |t, v| weighted(t, v[0].reshape(&[4, 3])?.transpose()?, &w)),
        });
        let w = g.signed(&[4, 2]);
        cases.push(OpCase {
            name: "slice",
            inputs: vec![g.signed(&[4, 5])],
            f: Box::new(move |t, v| weighted(t, v[0].slice(1, 1, 3)?, &w)),
        });
        let w = g.signed(&[5, 3]);
        cases.push(OpCase {
            name: "index_select",
            inputs: vec![g.signed(&[4, 3])],
            f: Box::new(move |t, v| weighted(t, v[0].index_select(&[2, 0, 2, 3, 1])?, &w)),
        });
        let w = g.signed(&[2, 5]);
        cases.push(OpCase {
            name: "concat",
            inputs: vec![g.signed(&[2, 3]), g.signed(&[2, 2])],
            f: Box::new(move |t, v| weighted(t, t.concat(&[v[0], v[1]], 1)?, &w)),
        });
    }

    // Reductions and normalizers.
    {
        cases.push(OpCase {
            name: "sum",
            inputs: vec![g.signed(&[3, 4])],
            f: Box::new(|_, v| Ok(v[0].sum().square())),
        });
        cases.push(OpCase {
            name: "mean",
            inputs: vec![g.signed(&[3, 4])],
            f: Box::new(|_, v| Ok(v[0].mean().square())),
        });
        let w = g.signed(&[3, 5]);
        cases.push(OpCase {
            name: "sum_axis",
            inputs: vec![g.signed(&[3, 4, 5])],
            f: Box::new(move |t, v| weighted(t, v[0].sum_axis(1)?, &w)),
        });
        let w = g.signed(&[4, 5]);
        cases.push(OpCase {
            name: "mean_axis",
            inputs: vec![g.signed(&[3, 4, 5])],
            f: Box::new(move |t, v| weighted(t, v[0].mean_axis(0)?, &w)),
        });
        let w = g.signed(&[3, 4]);
        cases.push(OpCase {
            name: "softmax",
            inputs: vec![g.uniform(&[3, 4], -2.0, 2.0)],
            f: Box::new(move |t, v| weighted(t, v[0].softmax(1)?, &w)),
        });
        let w = g.signed(&[3, 4]);
        cases.push(OpCase {
            name: "log_softmax",
            inputs: vec![g.uniform(&[3, 4], -2.0, 2.0)],
            f: Box::new(move |t, v| weighted(t, v[0].log_softmax(0)?, &w)),
        });
        let w = g.signed(&[3, 6]);
        cases.push(OpCase {
            name: "layer_norm",
            inputs: vec![g.uniform(&[3, 6], -2.0, 2.0)],
            f: Box::new(move |t, v| weighted(t, v[0].layer_norm(1, 1e-5)?, &w)),
        });
    }

    // Spatial operators.
    {
        let w = g.signed(&[5, 3]);
        // Coordinates away from the lattice so FD steps never cross a kink.
        let coords = Tensor::new(
            &[5, 2],
            vec![0.31, 0.77, 2.42, 1.63, 4.58, 3.27, -0.36, 1.45, 3.71, 4.21],
        )?;
        cases.push(OpCase {
            name: "grid_sample",
            inputs: vec![g.signed(&[3, 5, 6]), coords],
            f: Box::new(move |t, v| weighted(t, v[0].grid_sample(v[1])?, &w)),
        });
        let w = g.signed(&[2, 4, 5]);
        cases.push(OpCase {
            name: "dwconv3",
            inputs: vec![g.signed(&[2, 4, 5]), g.signed(&[2, 9])],
            f: Box::new(move |t, v| weighted(t, v[0].dwconv3(v[1])?, &w)),
        });
        let w = g.signed(&[2, 2, 3]);
        cases.push(OpCase {
            name: "avg_pool",
            inputs: vec![g.signed(&[2, 4, 6])],
            f: Box::new(move |t, v| weighted(t, v[0].avg_pool(2)?, &w)),
        });
    }

    // Attention.
    {
        let mut inputs = vec![g.signed(&[3, 4])];
        inputs.extend(mha_inputs(&mut g, 4));
        let w = g.signed(&[3, 4]);
        cases.push(OpCase {
            name: "mhsa",
            inputs,
            f: Box::new(move |t, v| weighted(t, mhsa(v[0], &mha_vars(&v[1..], 2))?, &w)),
        });
        let mut inputs = vec![g.signed(&[2, 4]), g.signed(&[5, 4])];
        inputs.extend(mha_inputs(&mut g, 4));
        let w = g.signed(&[2, 4]);
        cases.push(OpCase {
            name: "cross_attention",
            inputs,
            f: Box::new(move |t, v| weighted(t, cross_attention(v[0], v[1], &mha_vars(&v[2..], 2))?, &w)),
        });

        let cfg = PathAttentionConfig::new(2, 3, 4);
        let refs = Tensor::new(&[2, 2, 2], vec![1.37, 2.41, 3.73, 1.29, 4.61, 3.53, 2.18, 4.33])?;
        let mut inputs = vec![g.signed(&[2, 4]), refs, g.signed(&[4, 6, 7])];
        inputs.extend(path_inputs(&mut g, cfg));
        let w = g.signed(&[2, 4]);
        cases.push(OpCase {
            name: "path_attention",
            inputs,
            f: Box::new(move |t, v| weighted(t, path_attention(v[0], v[1], v[2], &path_vars(cfg, &v[3..]))?, &w)),
        });
        let refs = Tensor::new(&[2, 2], vec![2.37, 3.41, 4.27, 1.69])?;
        let mut inputs = vec![g.signed(&[2, 4]), refs, g.signed(&[4, 6, 7])];
        inputs.extend(path_inputs(&mut g, cfg));
        let w = g.signed(&[2, 4]);
        cases.push(OpCase {
            name: "deformable_attention",
            inputs,
            f: Box::new(move |t, v| {
                weighted(t, deformable_attention_baseline(v[0], v[1], v[2], &path_vars(cfg, &v[3..]))?, &w)
            }),
        });
    }

    // Losses.
    {
        cases.push(OpCase {
            name: "gwd",
            inputs: vec![
                Tensor::vector(vec![0.3, -0.2, 2.0, 0.7, 0.4]),
                Tensor::vector(vec![1.1, 0.5, 1.4, 0.9, -0.8]),
            ],
            f: Box::new(|_, v| gwd_var(&RectVar::from_vector(v[0])?, &RectVar::from_vector(v[1])?)),
        });
        cases.push(OpCase {
            name: "cross_entropy",
            inputs: vec![g.uniform(&[4, 3], -2.0, 2.0)],
            f: Box::new(|_, v| cross_entropy(v[0], &[2, 0, 1, 1])),
        });

        let world = WorldConfig::default();
        let scn = (0..)
            .map(|s| generate_with(s, false, &world))
            .find(|s| s.as_ref().map_or(true, |s| s.agents.len() >= 2))
            .expect("unbounded search")?;
        let (gt_agents, gt_map, horizon) = (scn.agents.clone(), scn.map.clone(), world.horizon);
        let n_map = gt_map.instances.len() + 1;
        let inputs = vec![
            g.uniform(&[3, 6], -3.0, 3.0),
            g.signed(&[3, 2]),
            g.uniform(&[3, 2 * horizon], -3.0, 3.0),
            g.uniform(&[n_map, 2 * world.n_point], -6.0, 6.0),
            g.signed(&[n_map, crate::losses::MAP_CLASSES]),
        ];
        cases.push(OpCase {
            name: "perception_losses",
            inputs,
            f: Box::new(move |_, v| {
                let agents = AgentOutputs {
                    boxes: v[0],
                    logits: v[1],
                    motion: v[2],
                };
                let maps = MapOutputs {
                    points: v[3],
                    logits: v[4],
                };
                let l = perception_losses(&agents, &gt_agents, &maps, &gt_map, horizon)?;
                l.det.add(l.map.scale(0.5))?.add(l.mot.scale(0.25))
            }),
        });
        let gt: Vec<f64> = scn.gt_plan.waypoints.iter().flatten().copied().collect();
        cases.push(OpCase {
            name: "planning_loss",
            inputs: vec![g.uniform(&[3, gt.len()], -3.0, 8.0), g.signed(&[3])],
            f: Box::new(move |_, v| {
                let plan = PlanOutputs {
                    trajectories: v[0],
                    scores: v[1],
                };
                Ok(planning_loss(&plan, &gt)?.total)
            }),
        });

        let spec = BevSpec::new([-2.0, 2.0], [-1.5, 1.5], 0.5)?;
        let boxes = vec![OrientedRect::from_size([-0.4, 0.3], 1.6, 1.1, 0.2)?];
        let teacher = g.signed(&[2, 6, 8]);
        let keypoints = agent_keypoints(&spec, &boxes);
        {
            let (teacher, boxes) = (teacher.clone(), boxes.clone());
            cases.push(OpCase {
                name: "distill_df",
                inputs: vec![g.signed(&[2, 6, 8])],
                f: Box::new(move |t, v| distill_df(v[0], t.constant(teacher.clone()), &spec, &boxes, 0.05)),
            });
        }
        {
            let teacher = teacher.clone();
            cases.push(OpCase {
                name: "distill_ik",
                inputs: vec![g.signed(&[2, 6, 8])],
                f: Box::new(move |t, v| distill_ik(v[0], t.constant(teacher.clone()), &spec, &keypoints)),
            });
        }
        {
            let (teacher, boxes) = (teacher.clone(), boxes.clone());
            cases.push(OpCase {
                name: "distill_ic",
                inputs: vec![g.signed(&[2, 6, 8])],
                f: Box::new(move |t, v| distill_ic(v[0], t.constant(teacher.clone()), &spec, &boxes)),
            });
        }
        cases.push(OpCase {
            name: "distill_total",
            inputs: vec![g.signed(&[2, 6, 8])],
            f: Box::new(move |t, v| {
                Ok(distill_total(v[0], t.constant(teacher.clone()), &spec, &boxes, &LossWeights::default())?.total)
            }),
        });

        let spec = BevSpec::desk();
        let gt_plan = Trajectory::new(
            vec![[1.0, 0.1], [2.1, 0.3], [3.0, 0.8], [3.8, 1.5], [4.7, 2.1], [5.3, 2.9]],
            0.5,
        );
        let gm = vec![vec![[3.0, 0.5], [6.0, -1.0]], vec![[-2.0, 2.0], [9.0, 3.0]]];
        let pred_plan = Tensor::new(
            &[6, 2],
            gt_plan.waypoints.iter().flatten().zip(g.signed(&[12]).data()).map(|(a, b)| a + 0.3 * b).collect(),
        )?;
        let pred_map = Tensor::new(
            &[2, 4],
            gm.iter().flatten().flatten().zip(g.signed(&[8]).data()).map(|(a, b)| a + 0.5 * b).collect(),
        )?;
        {
            let (gt_plan, gm, pred_plan) = (gt_plan.clone(), gm.clone(), pred_plan.clone());
            cases.push(OpCase {
                name: "autoregressive_map_loss",
                inputs: vec![pred_map.clone()],
                f: Box::new(move |t, v| {
                    autoregressive_map_loss(t.constant(pred_plan.clone()), &gt_plan, v[0], &gm, &[true, true], &spec, 1.0)
                }),
            });
        }
        {
            let gt_plan = gt_plan.clone();
            cases.push(OpCase {
                name: "autoregressive_gwd_loss",
                inputs: vec![pred_plan.clone()],
                f: Box::new(move |_, v| autoregressive_gwd_loss(v[0], &gt_plan, &spec)),
            });
        }
        cases.push(OpCase {
            name: "autoregressive_total",
            inputs: vec![pred_plan, pred_map],
            f: Box::new(move |_, v| {
                let w = LossWeights {
                    delta: 0.7,
                    lambda: 0.3,
                    ..LossWeights::default()
                };
                Ok(autoregressive_total(v[0], &gt_plan, v[1], &gm, &[true, true], &spec, &w)?.total)
            }),
        });
    }
    Ok(cases)
}

/// Check each case. `corrupt` names an op whose analytic gradient is
/// perturbed before comparison (mutation fixture).
pub fn run_suite(cases: &[OpCase], tolerance: f64, corrupt: Option<&str>) -> Result<Vec<OpResult>> {
    cases
        .iter()
        .map(|c| {
            let (_, mut analytic) = analytic_gradients(&c.inputs, &c.f)?;
            if corrupt == Some(c.name) {
                for g in &mut analytic {
                    for x in g.data_mut() {
                        *x = *x * 1.01 + 1e-3;
                    }
                }
            }
            let numeric = numeric_gradients(&c.inputs, &c.f, FD_STEP)?;
            let rep = compare(&analytic, &numeric);
            Ok(OpResult {
                op: c.name.to_string(),
                max_rel_err: rep.max_rel_err,
                max_abs_err: rep.max_abs_err,
                checked: rep.checked,
                passed: rep.max_rel_err <= tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_once() {
        let cases = op_suite(0).unwrap();
        let results = run_suite(&cases, 1e-5, None).unwrap();
        let mut names: Vec<&str> = results.iter().map(|r| r.op.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
        for r in &results {
            assert!(r.passed && r.checked > 0, "{r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let cases = op_suite(1).unwrap();
        let results = run_suite(&cases, 1e-5, Some("layer_norm")).unwrap();
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
        assert_eq!(failed, ["layer_norm"]);
    }
}
