//! Train a small dual-branch planner, then probe it with ego-velocity
//! perturbations using the full and the scene-only paths.
//!
//! `cargo run --release --example train_and_perturb -- 20` trains 20 epochs.

use dbp::harness::eval::{evaluate, ModelPlanner};
use dbp::harness::{train, RunConfig};
use dbp::model::{Model, Variant};
use dbp::world::{generate_dataset, PerturbMode};

fn main() -> dbp::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let mut cfg = RunConfig::default();
    cfg.optimizer.epochs = epochs;
    cfg.optimizer.warmup = 10;
    let world = &cfg.data.world;
    let train_set = generate_dataset(0, 40, world)?;
    let val = generate_dataset(10_000, 16, world)?;

    let mut model = Model::new(cfg.model.clone())?;
    println!("{} parameters", model.store.num_scalars());
    let report = train(&mut model, &train_set, &val, &cfg, 1, |r| {
        println!("epoch {:3} total {:.3} plan {:.3} lr {:.1e}", r.epoch, r.total, r.plan, r.lr);
    })?;
    println!("validation L2 by epoch: {:?}", report.val_l2);

    for variant in [Variant::Full, Variant::SceneOnly] {
        let planner = ModelPlanner { model: &model, variant };
        for mode in PerturbMode::ALL {
            let m = evaluate(&planner, &val, mode, &cfg.experiment.ego_dims, false, 1)?[0].1;
            println!("{variant:?} {:>6}: L2 avg {:.3}  CR avg {:.3}", mode.name(), m.l2_avg, m.cr_avg);
        }
    }
    Ok(())
}
