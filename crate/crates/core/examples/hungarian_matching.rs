//! Optimal one-to-one assignment for set prediction.

use dbp::losses::{assignment_cost, hungarian_match};

fn main() -> dbp::Result<()> {
    // Predictions (rows) against ground-truth boxes (columns), L1 center cost.
    let preds: [[f64; 2]; 4] = [[0.0, 0.0], [5.0, 1.0], [2.0, 2.0], [9.0, -1.0]];
    let gts = [[5.2, 0.8], [0.3, -0.1], [8.5, -1.5]];
    let cost: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| (p[0] - g[0]).abs() + (p[1] - g[1]).abs()).collect())
        .collect();
    let pairs = hungarian_match(&cost)?;
    for &(i, j) in &pairs {
        println!("prediction {i} -> gt {j}  (cost {:.2})", cost[i][j]);
    }
    println!("total {:.2}; prediction 2 stays unmatched", assignment_cost(&cost, &pairs));
    Ok(())
}
