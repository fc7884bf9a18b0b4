//! Per-input retriever selection: trains both selectors on pool outputs and
//! compares them with list-quality predictors and the oracle bounds.
//!
//! `cargo run --release --example retriever_selection [users]`

use personal_rag::cli::{EvalTarget, Experiment, RunConfig};
use personal_rag::ropg::Algorithm;
use personal_rag::selection::{Mode, QppMethod};

fn main() -> personal_rag::Result<()> {
    let users = std::env::args().nth(1).map_or(600, |a| a.parse().expect("numeric argument"));
    let exp = Experiment::open(RunConfig {
        synthetic_users: users,
        ropg_epochs: 5,
        rspg_epochs: 10,
        out_dir: std::env::temp_dir().join("personal-rag-selection"),
        ..RunConfig::default()
    })?;
    exp.train_ropg(Algorithm::Kd)?;
    exp.train_ropg(Algorithm::Rl)?;
    for mode in [Mode::Pre, Mode::Post] {
        let run = exp.train_rspg(mode)?;
        let losses = &run.output.epoch_losses;
        println!("rspg-{mode}: loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);
    }

    let mut targets = vec![EvalTarget::Rspg(Mode::Pre), EvalTarget::Rspg(Mode::Post)];
    targets.extend(QppMethod::ALL.map(EvalTarget::Qpp));
    targets.push(EvalTarget::Oracle);
    println!("\n{:<14} {:>8} {:>10}", "selector", "success", "mean eval");
    for target in targets {
        let report = exp.eval(target)?;
        if target == EvalTarget::Oracle {
            let b = &report.oracle.as_ref().expect("oracle report carries bounds")["mean_eval"];
            println!("{:<14} {:>8} {:>10.3}", "worst choice", "-", b.lower);
            println!("{:<14} {:>8} {:>10.3}", "best choice", "-", b.upper);
            continue;
        }
        let success = report.success_rate.map_or("-".into(), |s| format!("{s:.3}"));
        println!("{:<14} {:>8} {:>10.3}", report.name, success, report.metrics["mean_eval"]);
    }
    Ok(())
}
