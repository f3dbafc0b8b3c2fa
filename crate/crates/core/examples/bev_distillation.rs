//! Teacher-to-student BEV distillation: the loss reaches the student only.

use dbp::geometry::{BevSpec, OrientedRect};
use dbp::losses::{distill_total, LossWeights};
use dbp::tensor::{Tape, Tensor};

fn main() -> dbp::Result<()> {
    let spec = BevSpec::new([-4.0, 4.0], [-2.0, 2.0], 0.5)?;
    let (h, w) = (spec.height(), spec.width());
    let wave = |k: f64| Tensor::new(&[4, h, w], (0..4 * h * w).map(|i| (i as f64 * k).sin()).collect());
    let boxes = [OrientedRect::from_size([1.0, 0.5], 4.5, 1.9, 0.2)?];

    let tape = Tape::new();
    let student = tape.param(wave(0.11)?);
    let teacher = tape.param(wave(0.13)?);
    let d = distill_total(student, teacher, &spec, &boxes, &LossWeights::default())?;
    tape.backward(d.total)?;
    println!(
        "dense {:.4}  keypoint {:.4}  channel {:.4}  total {:.4}",
        d.df.item(),
        d.ik.item(),
        d.ic.item(),
        d.total.item()
    );
    let gs = tape.grad(student).map_or(0.0, |g| g.data().iter().map(|x| x.abs()).sum());
    let gt = tape.grad(teacher).map_or(0.0, |g| g.data().iter().map(|x| x.abs()).sum());
    println!("|grad| student {gs:.4}, teacher {gt}");

    let same = tape.constant(wave(0.11)?);
    let zero = distill_total(same, same, &spec, &boxes, &LossWeights::default())?;
    println!("identical features: {:e}", zero.total.item());
    Ok(())
}
