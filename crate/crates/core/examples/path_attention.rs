//! Where path attention looks compared with a single-anchor deformable head.
//!
//! Every head of path attention anchors at its own waypoint of a preliminary
//! trajectory; the deformable baseline puts all heads on one point.

use dbp::attention::{deformable_attention_baseline, path_attention, PathAttention, PathAttentionConfig};
use dbp::geometry::BevSpec;
use dbp::tensor::{ParamStore, Tape, Tensor};

fn main() -> dbp::Result<()> {
    let spec = BevSpec::desk();
    let (heads, samples, width) = (6, 4, 8);
    let mut store = ParamStore::new(0);
    let op = PathAttention::new(&mut store, "pa", PathAttentionConfig::new(heads, samples, width))?;

    // Channel 0 is the distance ahead of the rear edge of the grid.
    let (h, w) = (spec.height(), spec.width());
    let mut grid = Tensor::zeros(&[width, h, w]);
    for r in 0..h {
        for c in 0..w {
            grid.set(&[0, r, c], spec.grid_to_world([c as f64, r as f64])[0] - spec.x_range[0]);
        }
    }
    // A gentle left turn, one waypoint per head.
    let plan: Vec<[f64; 2]> = (1..=heads).map(|k| [2.0 * k as f64, 0.05 * (k * k) as f64]).collect();
    let refs: Vec<f64> = plan.iter().flat_map(|p| spec.world_to_grid(*p)).collect();

    let tape = Tape::new();
    let p = op.bind(&store.bind(&tape, false));
    let q = tape.constant(Tensor::full(&[1, width], 0.1));
    let g = tape.constant(grid);
    let along = path_attention(q, tape.constant(Tensor::new(&[1, heads, 2], refs)?), g, &p)?;
    let origin = spec.world_to_grid([0.0, 0.0]);
    let single = deformable_attention_baseline(q, tape.constant(Tensor::new(&[1, 2], origin.to_vec())?), g, &p)?;
    println!("waypoints (m): {plan:?}");
    println!("path attention output[0..4]:  {:?}", &along.value().data()[..4]);
    println!("deformable output[0..4]:      {:?}", &single.value().data()[..4]);
    Ok(())
}
