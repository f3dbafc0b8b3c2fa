//! Planning→mapping consistency: map supervision restricted to the region
//! both the planned and the true ego would perceive, plus a GWD term on
//! the two perception boxes.

use crate::error::{Error, Result};
use crate::geometry::{
    gwd_var, mask_points, rect_intersection_region, BevSpec, OrientedRect, PointMask, RectVar,
};
use crate::tensor::{Tensor, Var};
use crate::types::Trajectory;

use super::LossWeights;

/// Components and weighted total of the autoregressive objective.
#[derive(Clone, Copy, Debug)]
pub struct AutoregLoss<'t> {
    pub map: Var<'t>,
    pub gwd: Var<'t>,
    pub total: Var<'t>,
}

/// The BEV window carried to `center` with the given heading.
pub fn perception_box(center: [f64; 2], heading: f64, spec: &BevSpec) -> OrientedRect {
    OrientedRect {
        center,
        half_extents: [spec.length_m() / 2.0, spec.width_m() / 2.0],
        heading: crate::geometry::normalize_angle(heading),
    }
}

/// One perception box per waypoint.
pub fn perception_boxes(plan: &Trajectory, spec: &BevSpec) -> Vec<OrientedRect> {
    plan.waypoints
        .iter()
        .zip(plan.headings())
        .map(|(&p, h)| perception_box(p, h, spec))
        .collect()
}

/// Per-step masks of ground-truth map points inside the key region.
pub fn key_region_masks(
    pred: &Trajectory,
    gt: &Trajectory,
    gt_points: &[Vec<[f64; 2]>],
    valid: &[bool],
    spec: &BevSpec,
) -> Vec<PointMask> {
    perception_boxes(pred, spec)
        .iter()
        .zip(perception_boxes(gt, spec).iter())
        .map(|(a, b)| mask_points(gt_points, valid, &rect_intersection_region(a, b)))
        .collect()
}

fn plan_values(plan: &Var<'_>, t: usize, op: &'static str) -> Result<Trajectory> {
    let s = plan.shape();
    if s != [t, 2] {
        return Err(Error::shape(op, &s, &[t, 2]));
    }
    let v = plan.value();
    Ok(Trajectory::new(
        v.data().chunks(2).map(|c| [c[0], c[1]]).collect(),
        0.0,
    ))
}

/// `(1/T) Σ_τ ‖(P̂_M − P_M) ⊙ M_τ‖₁ / (‖M_τ‖₁ + ε)`.
///
/// `pred_plan: T×2`; `pred_map: N_map×(N_point·2)` aligned row-for-row with
/// the padded ground truth. `‖M‖₁` counts coordinates, two per flagged point.
#[allow(clippy::too_many_arguments)]
pub fn autoregressive_map_loss<'t>(
    pred_plan: Var<'t>,
    gt_plan: &Trajectory,
    pred_map: Var<'t>,
    gt_points: &[Vec<[f64; 2]>],
    valid: &[bool],
    spec: &BevSpec,
    eps: f64,
) -> Result<Var<'t>> {
    let t = gt_plan.len();
    let pred = plan_values(&pred_plan, t, "autoregressive_map_loss")?;
    let n_map = gt_points.len();
    let n_point = gt_points.first().map_or(0, Vec::len);
    let d = n_map * n_point * 2;
    let ms = pred_map.shape();
    if ms.iter().product::<usize>() != d || ms.first() != Some(&n_map) {
        return Err(Error::shape("autoregressive_map_loss", &ms, &[n_map, n_point * 2]));
    }
    let tape = pred_plan.tape();
    if t == 0 || d == 0 {
        return Ok(tape.scalar(0.0));
    }
    let masks = key_region_masks(&pred, gt_plan, gt_points, valid, spec);
    let mut mat = Tensor::zeros(&[d, t]);
    let mut inv = Vec::with_capacity(t);
    for (tau, m) in masks.iter().enumerate() {
        for (k, &f) in m.flags.iter().enumerate() {
            if f {
                mat.set(&[2 * k, tau], 1.0);
                mat.set(&[2 * k + 1, tau], 1.0);
            }
        }
        inv.push(1.0 / (2.0 * m.count() as f64 + eps));
    }
    let target = Tensor::new(&[1, d], gt_points.iter().flatten().flatten().copied().collect())?;
    let resid = pred_map.reshape(&[1, d])?.sub(tape.constant(target))?.abs();
    let per_tau = resid.matmul(tape.constant(mat))?; // 1×T
    Ok(per_tau
        .mul(tape.constant(Tensor::vector(inv)))?
        .sum()
        .scale(1.0 / t as f64))
}

/// Differentiable headings of a `T×2` plan, matching
/// [`Trajectory::headings`]: steps shorter than 1e-6 m keep the previous
/// heading, starting from 0.
pub fn plan_headings<'t>(plan: Var<'t>) -> Result<Vec<Var<'t>>> {
    let tape = plan.tape();
    let v = plan.value();
    let t = plan.shape()[0];
    let mut heading = tape.scalar(0.0);
    let mut prev_val = [0.0, 0.0];
    let mut prev: Option<Var<'t>> = None;
    let mut out = Vec::with_capacity(t);
    for tau in 0..t {
        let row = plan.slice(0, tau, tau + 1)?.reshape(&[2])?;
        let cur = [v.data()[2 * tau], v.data()[2 * tau + 1]];
        if (cur[0] - prev_val[0]).hypot(cur[1] - prev_val[1]) >= 1e-6 {
            let d = match prev {
                Some(p) => row.sub(p)?,
                None => row,
            };
            let dx = d.slice(0, 0, 1)?.reshape(&[])?;
            let dy = d.slice(0, 1, 2)?.reshape(&[])?;
            heading = tape.atan2(dy, dx)?;
        }
        out.push(heading);
        prev = Some(row);
        prev_val = cur;
    }
    Ok(out)
}

/// `(1/T) Σ_τ log(1 + GWD(R̂_τ, R_τ))` on the perception boxes.
pub fn autoregressive_gwd_loss<'t>(pred_plan: Var<'t>, gt_plan: &Trajectory, spec: &BevSpec) -> Result<Var<'t>> {
    let t = gt_plan.len();
    plan_values(&pred_plan, t, "autoregressive_gwd_loss")?;
    let tape = pred_plan.tape();
    if t == 0 {
        return Ok(tape.scalar(0.0));
    }
    let headings = plan_headings(pred_plan)?;
    let gt_boxes = perception_boxes(gt_plan, spec);
    let half_len = tape.scalar(spec.length_m() / 2.0);
    let half_wid = tape.scalar(spec.width_m() / 2.0);
    let mut acc: Option<Var<'t>> = None;
    for tau in 0..t {
        let pred = RectVar {
            cx: pred_plan.slice(0, tau, tau + 1)?.slice(1, 0, 1)?.reshape(&[])?,
            cy: pred_plan.slice(0, tau, tau + 1)?.slice(1, 1, 2)?.reshape(&[])?,
            half_len,
            half_wid,
            heading: headings[tau],
        };
        let term = gwd_var(&pred, &RectVar::constant(tape, &gt_boxes[tau]))?
            .add_scalar(1.0)
            .log();
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(term)?,
        });
    }
    Ok(acc.expect("t > 0").scale(1.0 / t as f64))
}

/// `δ·L_MAP + λ·L_GWD`.
#[allow(clippy::too_many_arguments)]
pub fn autoregressive_total<'t>(
    pred_plan: Var<'t>,
    gt_plan: &Trajectory,
    pred_map: Var<'t>,
    gt_points: &[Vec<[f64; 2]>],
    valid: &[bool],
    spec: &BevSpec,
    weights: &LossWeights,
) -> Result<AutoregLoss<'t>> {
    let map = autoregressive_map_loss(pred_plan, gt_plan, pred_map, gt_points, valid, spec, weights.epsilon)?;
    let gwd = autoregressive_gwd_loss(pred_plan, gt_plan, spec)?;
    let total = map.scale(weights.delta).add(gwd.scale(weights.lambda))?;
    Ok(AutoregLoss { map, gwd, total })
}
