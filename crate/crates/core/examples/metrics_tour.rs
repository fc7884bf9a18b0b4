//! Per-instance and corpus metrics on hand-made predictions.

use personal_rag::corpus::TaskKind;
use personal_rag::metrics::{corpus_metrics, eval_lamp3, paired_sign_test, rouge1, rouge_l};

fn main() -> personal_rag::Result<()> {
    let reference = "the cat sat on the mat";
    let candidate = "the cat lay on a mat";
    println!("rouge-1 {:.3}  rouge-L {:.3}", rouge1(reference, candidate), rouge_l(reference, candidate));

    for pred in ["5", "4 stars", "I'd say 1", "great"] {
        println!("rating gold 5, predicted {pred:?}: {:.2}", eval_lamp3(5, pred));
    }

    let golds: Vec<String> = ["4", "2", "5", "1"].map(String::from).into();
    let preds: Vec<String> = ["4", "3", "3", "1"].map(String::from).into();
    println!("rating corpus {:?}", corpus_metrics(TaskKind::ProductRating, &golds, &preds)?);

    let golds: Vec<String> = ["[1]", "[2]", "[1]"].map(String::from).into();
    let preds: Vec<String> = ["[1]", "[1]", "[1]"].map(String::from).into();
    println!("citation corpus {:?}", corpus_metrics(TaskKind::CitationIdent, &golds, &preds)?);

    let a = [0.9, 0.8, 0.7, 0.6, 0.9, 0.5, 0.4, 0.8];
    let b = [0.5, 0.8, 0.2, 0.1, 0.3, 0.6, 0.1, 0.2];
    let (wins, losses, p) = paired_sign_test(&a, &b)?;
    println!("sign test: {wins} wins, {losses} losses, p = {p:.4}");
    Ok(())
}
