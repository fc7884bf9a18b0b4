//! Runs every untrained retriever on one planted instance of each kind.

use personal_rag::cli::{Experiment, RunConfig};
use personal_rag::corpus::PlantedBest;

fn main() -> personal_rag::Result<()> {
    let exp = Experiment::open(RunConfig {
        synthetic_users: 100,
        ..RunConfig::default()
    })?;
    let pool = exp.pool()?;

    for best in PlantedBest::ALL {
        let Some(inst) = exp.test.instances.iter().find(|i| i.planted.as_ref().is_some_and(|p| p.best == best)) else {
            continue;
        };
        let useful = inst.planted.as_ref().and_then(|p| p.useful_doc.clone());
        println!("{} planted {best}, useful {:?}", inst.instance_id, useful);
        let profile = pool.render(inst)?;
        for id in pool.members() {
            let list = pool.retrieve(id, inst, &profile, 3)?;
            let top: Vec<String> = list.items().iter().map(|(d, s)| format!("{d}:{s:.3e}")).collect();
            println!("  {:<16} {}", id.key(), top.join(" "));
        }
    }
    Ok(())
}
