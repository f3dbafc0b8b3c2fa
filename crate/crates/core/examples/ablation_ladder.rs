//! The five component configurations and what each one adds.

use dbp::model::{AblationFlags, Model, ModelConfig};
use dbp::world::{generate_with, WorldConfig};

fn main() -> dbp::Result<()> {
    let s = generate_with(3, false, &WorldConfig::default())?;
    for (id, flags) in AblationFlags::ladder() {
        let model = Model::new(ModelConfig {
            flags,
            ..ModelConfig::default()
        })?;
        let pred = model.predict(s.obs.tensor(), &s.ego_status, s.command(), Default::default())?;
        println!(
            "{id} {{{:<7}}} ego-enhanced scene BEV: {:<5} params {:6}  untrained plan end {:?}",
            flags.label(),
            flags.ego_enhancement,
            model.store.num_scalars(),
            pred.plan().waypoints.last().unwrap()
        );
    }
    let bad = AblationFlags {
        distill: true,
        ..AblationFlags::baseline()
    };
    println!("distill without the dual branch: {}", bad.validate().unwrap_err());
    Ok(())
}
