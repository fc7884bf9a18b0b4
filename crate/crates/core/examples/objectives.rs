//! The two retriever-training objectives on a four-document toy problem:
//! distillation towards softmax(Eval) and the sampled policy gradient.

use std::sync::Arc;

use personal_rag::rng::substream;
use personal_rag::ropg::{kd_target, policy_probs};
use personal_rag::textmodel::{ScorerParams, Vocabulary};

fn main() {
    let query = "kettle lid broke";
    let docs = ["kettle boils fast", "lid broke quickly", "grinder is loud", "support never answered"];
    let evals = [0.2, 1.0, 0.0, 0.1];

    let vocab = Arc::new(Vocabulary::build(docs.iter().copied().chain([query])));
    let params = ScorerParams::init(vocab, 16, false, &mut substream(5, "init"));
    let probs = policy_probs(&params, query, &docs);
    let target = kd_target(&evals, 1.0);

    println!("{:<24} {:>6} {:>8} {:>8}", "document", "eval", "policy", "target");
    for i in 0..docs.len() {
        println!("{:<24} {:>6.2} {:>8.4} {:>8.4}", docs[i], evals[i], probs[i], target[i]);
    }
    let kl: f64 = target.iter().zip(&probs).map(|(t, p)| t * (t / p).ln()).sum();
    let expected: f64 = probs.iter().zip(&evals).map(|(p, e)| p * e).sum();
    println!("\nKL(target || policy) = {kl:.4}");
    println!("expected reward under policy = {expected:.4}");
    // Score-function gradient wrt document scores: p_i * (Eval_i - E[Eval]).
    for (d, (p, e)) in docs.iter().zip(probs.iter().zip(&evals)) {
        println!("  d reward / d score[{d}] = {:+.4}", p * (e - expected));
    }
}
