//! Teacher→student BEV feature distillation. The teacher is always
//! detached here, so no gradient can reach its parameters.

use crate::error::{Error, Result};
use crate::geometry::{BevSpec, OrientedRect};
use crate::tensor::{Tensor, Var};

use super::LossWeights;

/// Components and weighted total of the distillation objective.
#[derive(Clone, Copy, Debug)]
pub struct DistillLoss<'t> {
    pub df: Var<'t>,
    pub ik: Var<'t>,
    pub ic: Var<'t>,
    pub total: Var<'t>,
}

fn check_pair(student: &Var<'_>, teacher: &Var<'_>, spec: &BevSpec, op: &'static str) -> Result<usize> {
    let (s, t) = (student.shape(), teacher.shape());
    if s.len() != 3 || s != t || s[1] != spec.height() || s[2] != spec.width() {
        return Err(Error::shape(op, &s, &t));
    }
    Ok(s[0])
}

/// `(row, col)` cells whose centers lie inside any box.
pub fn foreground_cells(spec: &BevSpec, boxes: &[OrientedRect]) -> Vec<usize> {
    let (h, w) = (spec.height(), spec.width());
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = spec.cell_center(r, c);
            if boxes.iter().any(|b| b.contains(p)) {
                out.push(r * w + c);
            }
        }
    }
    out
}

/// Per-cell weights: 1 on foreground, `bg` elsewhere.
pub fn foreground_weights(spec: &BevSpec, boxes: &[OrientedRect], bg: f64) -> Tensor {
    let (h, w) = (spec.height(), spec.width());
    let mut t = Tensor::full(&[1, h, w], bg);
    for cell in foreground_cells(spec, boxes) {
        t.data_mut()[cell] = 1.0;
    }
    t
}

/// Center and four corners of each box, in grid coordinates clamped to
/// the grid.
pub fn agent_keypoints(spec: &BevSpec, boxes: &[OrientedRect]) -> Vec<[f64; 2]> {
    let (w, h) = ((spec.width() - 1) as f64, (spec.height() - 1) as f64);
    boxes
        .iter()
        .flat_map(|b| std::iter::once(b.center).chain(b.corners()))
        .map(|p| {
            let g = spec.world_to_grid(p);
            [g[0].clamp(0.0, w), g[1].clamp(0.0, h)]
        })
        .collect()
}

/// Reweighted dense feature loss `Σ w‖Bs − Bt‖² / Σ w`.
pub fn distill_df<'t>(
    student: Var<'t>,
    teacher: Var<'t>,
    spec: &BevSpec,
    boxes: &[OrientedRect],
    bg_weight: f64,
) -> Result<Var<'t>> {
    check_pair(&student, &teacher, spec, "distill_df")?;
    let w = foreground_weights(spec, boxes, bg_weight);
    let total_w: f64 = w.data().iter().sum();
    let tape = student.tape();
    let diff = student.sub(teacher.detach())?;
    Ok(diff
        .square()
        .mul(tape.constant(w))?
        .sum()
        .scale(1.0 / total_w))
}

/// Rows scaled to unit length.
fn unit_rows<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let norm = x.square().sum_axis(1)?.add_scalar(1e-20).sqrt();
    let n = norm.shape()[0];
    x.div(norm.reshape(&[n, 1])?)
}

/// Mean absolute difference of keypoint cosine-similarity matrices.
/// `keypoints` are grid coordinates; fewer than two gives 0.
pub fn distill_ik<'t>(
    student: Var<'t>,
    teacher: Var<'t>,
    spec: &BevSpec,
    keypoints: &[[f64; 2]],
) -> Result<Var<'t>> {
    check_pair(&student, &teacher, spec, "distill_ik")?;
    let tape = student.tape();
    let n = keypoints.len();
    if n < 2 {
        return Ok(tape.scalar(0.0));
    }
    let pts = tape.constant(Tensor::new(&[n, 2], keypoints.iter().flatten().copied().collect())?);
    let sim = |g: Var<'t>| -> Result<Var<'t>> {
        let f = unit_rows(g.grid_sample(pts)?)?;
        f.matmul(f.transpose()?)
    };
    Ok(sim(student)?.sub(sim(teacher.detach())?)?.abs().mean())
}

/// Mean absolute difference of normalized channel Gram matrices over
/// foreground cells. No foreground gives 0.
pub fn distill_ic<'t>(
    student: Var<'t>,
    teacher: Var<'t>,
    spec: &BevSpec,
    boxes: &[OrientedRect],
) -> Result<Var<'t>> {
    let c = check_pair(&student, &teacher, spec, "distill_ic")?;
    let tape = student.tape();
    let cells = foreground_cells(spec, boxes);
    if cells.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let n = cells.len() as f64;
    let hw = spec.height() * spec.width();
    let gram = |g: Var<'t>| -> Result<Var<'t>> {
        let f = g.reshape(&[c, hw])?.transpose()?.index_select(&cells)?; // n×C
        let s = f.square().mean_axis(0)?.add_scalar(1e-12).sqrt(); // C
        let f = f.div(s)?;
        Ok(f.transpose()?.matmul(f)?.scale(1.0 / n))
    };
    Ok(gram(student)?.sub(gram(teacher.detach())?)?.abs().mean())
}

/// `α·L_DF + β·L_IK + γ·L_IC` with the teacher detached.
pub fn distill_total<'t>(
    student: Var<'t>,
    teacher: Var<'t>,
    spec: &BevSpec,
    boxes: &[OrientedRect],
    weights: &LossWeights,
) -> Result<DistillLoss<'t>> {
    let teacher = teacher.detach();
    let df = distill_df(student, teacher, spec, boxes, weights.bg_weight)?;
    let ik = distill_ik(student, teacher, spec, &agent_keypoints(spec, boxes))?;
    let ic = distill_ic(student, teacher, spec, boxes)?;
    let total = df
        .scale(weights.alpha)
        .add(ik.scale(weights.beta))?
        .add(ic.scale(weights.gamma))?;
    Ok(DistillLoss { df, ik, ic, total })
}
