//! One generated scenario: the raster the model sees, the plan it should
//! produce, and how a do-nothing plan scores.

use dbp::harness::eval::{evaluate, StationaryPlanner};
use dbp::metrics::EgoDims;
use dbp::world::{generate_dataset, generate_with, PerturbMode, WorldConfig, CHANNEL_NAMES};

fn main() -> dbp::Result<()> {
    let cfg = WorldConfig::default();
    let s = generate_with(11, true, &cfg)?;
    println!("seed {} {:?} command {:?} kappa {:.3}", s.seed, s.kind, s.command(), s.curvature);
    println!("ego v = {:?} m/s, {} agents, {} map elements", s.ego_status.velocity, s.agents.len(), s.map.instances.len());
    println!("gt plan: {:?}", s.gt_plan.waypoints);

    let obs = s.obs.tensor();
    let (h, w) = (obs.shape()[1], obs.shape()[2]);
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        let lit = (0..h * w).filter(|&i| obs.data()[c * h * w + i] > 0.0).count();
        println!("channel {c} {name:<15} {lit:4} non-zero cells");
    }
    // Agents as '#', lane lines as '-', crossings as '=', ego trail as '.'.
    for r in (0..h).rev() {
        let row: String = (0..w)
            .map(|col| {
                let v = |ch: usize| obs.data()[ch * h * w + r * w + col];
                if v(0) > 0.0 {
                    '#'
                } else if v(3) > 0.0 {
                    '='
                } else if v(1) > 0.0 || v(2) > 0.0 {
                    '-'
                } else if v(5) > 0.0 {
                    '.'
                } else {
                    ' '
                }
            })
            .collect();
        println!("|{row}|");
    }

    let data = generate_dataset(0, 40, &cfg)?;
    let m = evaluate(&StationaryPlanner, &data, PerturbMode::None, &EgoDims::default(), true, 1)?;
    for (split, pm) in m {
        println!("stationary plan {split:>3}: n={} L2 avg {:.3} m, CR avg {:.3}", pm.count, pm.l2_avg, pm.cr_avg);
    }
    Ok(())
}
