//! Mapping consistency along the plan: map points inside the overlap of the
//! predicted and true perception boxes are supervised, plus a GWD term that
//! pulls the predicted boxes onto the true ones.

use dbp::geometry::{gwd, BevSpec};
use dbp::losses::{autoregressive_total, key_region_masks, perception_boxes, LossWeights};
use dbp::tensor::{Tape, Tensor};
use dbp::types::Trajectory;

fn main() -> dbp::Result<()> {
    let spec = BevSpec::desk();
    let gt = Trajectory::new((1..=6).map(|k| [1.5 * k as f64, 0.0]).collect(), 0.5);
    let pred = Trajectory::new((1..=6).map(|k| [1.4 * k as f64, 0.08 * k as f64]).collect(), 0.5);
    let lines: Vec<Vec<[f64; 2]>> = [-1.75, 1.75]
        .iter()
        .map(|&y| (0..10).map(|i| [-5.0 + 3.0 * i as f64, y]).collect())
        .collect();
    let valid = [true, true];

    for (tau, (m, (a, b))) in key_region_masks(&pred, &gt, &lines, &valid, &spec)
        .iter()
        .zip(perception_boxes(&pred, &spec).iter().zip(perception_boxes(&gt, &spec).iter()))
        .enumerate()
    {
        println!("step {}: {:2} masked points, box GWD {:.4}", tau + 1, m.count(), gwd(a, b));
    }

    let tape = Tape::new();
    let plan = tape.param(Tensor::new(&[6, 2], pred.waypoints.iter().flatten().copied().collect())?);
    let noisy: Vec<f64> = lines.iter().flatten().flatten().enumerate().map(|(i, v)| v + 0.1 * (i as f64).cos()).collect();
    let map = tape.param(Tensor::new(&[2, 20], noisy)?);
    let loss = autoregressive_total(plan, &gt, map, &lines, &valid, &spec, &LossWeights::default())?;
    tape.backward(loss.total)?;
    println!("L_map {:.5}  L_gwd {:.5}  total {:.6}", loss.map.item(), loss.gwd.item(), loss.total.item());
    println!("plan gradient row 6: {:?}", &tape.grad(plan).unwrap().data()[10..]);
    Ok(())
}
