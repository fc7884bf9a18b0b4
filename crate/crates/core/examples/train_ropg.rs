//! Trains the dense retriever from generator feedback with both objectives
//! and reports how often the useful document lands on top.
//!
//! `cargo run --release --example train_ropg [users] [epochs]`

use personal_rag::cli::{Experiment, RunConfig};
use personal_rag::corpus::PlantedBest;
use personal_rag::ropg::Algorithm;

fn main() -> personal_rag::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let out = std::env::temp_dir().join("personal-rag-train-ropg");
    let exp = Experiment::open(RunConfig {
        synthetic_users: args.next().unwrap_or(600),
        ropg_epochs: args.next().unwrap_or(5),
        out_dir: out,
        ..RunConfig::default()
    })?;

    let zero = exp.useful_top1(&exp.zero_shot(), &exp.test.instances, PlantedBest::Dense)?;
    println!("zero-shot top-1 on dense-best instances: {zero:.3}");

    for algo in [Algorithm::Kd, Algorithm::Rl] {
        let run = exp.train_ropg(algo)?;
        println!("\n{algo}: {} examples, {} skipped", run.examples, run.skipped);
        for e in &run.output.epochs {
            println!(
                "  epoch {:>2} loss {:>8} gain over baseline {:+.3} useful mass {:.3}",
                e.epoch,
                e.mean_loss.map_or("-".into(), |l| format!("{l:.4}")),
                e.expected_reward,
                e.useful_mass.unwrap_or(f64::NAN)
            );
        }
        let trained = exp.trained_from(algo, run.output.params);
        let top1 = exp.useful_top1(&trained, &exp.test.instances, PlantedBest::Dense)?;
        println!("  top-1 after training: {top1:.3}");
    }
    Ok(())
}
