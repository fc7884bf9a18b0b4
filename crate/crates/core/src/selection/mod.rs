//! Choosing one retriever per input.
//!
//! Every retriever in the pool builds a prompt for the input; the generator
//! answers each; the per-retriever Eval scores define a target distribution.
//! A scorer with a linear head learns to rank the prompts (pre-generation) or
//! the prompt plus answer (post-generation) against that target.

mod pool;
mod qpp;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::PromptParts;
use crate::retrieval::RetrieverId;
use crate::textmodel::{softmax, words, GradientBundle, ScoreInput, ScorerParams, TokenBag};

pub use pool::{build_examples, RetrieverPool};
pub use qpp::{argmax, qpp_score, rrf_fuse, QppMethod, QPP_DEPTH, RRF_K};
pub use report::{
    evaluate_selections, oracle_bounds, success_rate, winning_rate, InstanceSelection, OracleBounds,
    SelectorSummary,
};
pub use train::{train_rspg, RspgConfig, RspgOutput};

/// Token cap on selection-model inputs.
pub const SELECTION_TOKEN_CAP: usize = 1024;
/// Placed between prompt and generated output in post-generation inputs.
pub const POST_SEPARATOR: &str = " <sep> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pre,
    Post,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Mode::Pre),
            "post" => Ok(Mode::Post),
            _ => Err(Error::Config(format!("unknown selection mode `{s}` (expected pre or post)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Pre => "pre",
            Mode::Post => "post",
        })
    }
}

/// Everything the pool produced for one instance, in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionExample {
    pub instance_id: String,
    pub target: String,
    pub retrievers: Vec<RetrieverId>,
    /// Prompt pieces as fed to the generator (already within the prompt cap).
    pub parts: Vec<PromptParts>,
    pub outputs: Vec<String>,
    pub evals: Vec<f64>,
    /// Full-profile score view of each retriever, in rank order, for list-quality prediction.
    pub qpp_views: Vec<Vec<f64>>,
    pub query_len: usize,
}

impl SelectionExample {
    pub fn prompt(&self, i: usize) -> String {
        self.parts[i].render()
    }

    /// Input text of the selection model for retriever `i`.
    pub fn selection_text(&self, i: usize, mode: Mode) -> String {
        match mode {
            Mode::Pre => {
                let mut parts = self.parts[i].clone();
                parts.fit(SELECTION_TOKEN_CAP);
                truncate_tokens(&parts.render(), SELECTION_TOKEN_CAP).to_string()
            }
            Mode::Post => post_text(&self.parts[i], &self.outputs[i], SELECTION_TOKEN_CAP),
        }
    }
}

/// First `n` tokens of `text`, cut right after the `n`-th token.
pub fn truncate_tokens(text: &str, n: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        let alnum = c.is_alphanumeric();
        if alnum && !in_token {
            if count == n {
                return text[..i].trim_end();
            }
            count += 1;
        }
        in_token = alnum;
    }
    text
}

/// Prompt, separator, output; over `cap` tokens, prompt entries go first
/// (from the tail), then the output is cut.
pub fn post_text(parts: &PromptParts, output: &str, cap: usize) -> String {
    let join = |p: &PromptParts, o: &str| format!("{}{POST_SEPARATOR}{o}", p.render());
    let mut parts = parts.clone();
    let out_len = words(output).len();
    while !parts.entries.is_empty() && words(&join(&parts, output)).len() > cap {
        parts.entries.pop();
    }
    let text = join(&parts, output);
    if words(&text).len() <= cap {
        return text;
    }
    let head = words(&parts.render()).len() + words(POST_SEPARATOR).len();
    let budget = cap.saturating_sub(head).min(out_len);
    let text = join(&parts, truncate_tokens(output, budget));
    truncate_tokens(&text, cap).to_string()
}

/// Softmax of the per-retriever Eval scores.
pub fn target_selection_distribution(evals: &[f64]) -> Vec<f64> {
    softmax(evals)
}

/// Pre-tokenized selection inputs of one example.
#[derive(Debug, Clone)]
pub struct SelectionItem {
    pub bags: Vec<TokenBag>,
    pub target: Vec<f64>,
}

impl SelectionItem {
    pub fn new(params: &ScorerParams, example: &SelectionExample, mode: Mode) -> Self {
        SelectionItem {
            bags: (0..example.retrievers.len())
                .map(|i| params.bag(&example.selection_text(i, mode)))
                .collect(),
            target: target_selection_distribution(&example.evals),
        }
    }

    pub fn scores(&self, params: &ScorerParams) -> Result<Vec<f64>> {
        self.bags.iter().map(|b| params.head_score_bag(b)).collect()
    }
}

/// Head score of each retriever's selection input.
pub fn selection_scores(params: &ScorerParams, example: &SelectionExample, mode: Mode) -> Result<Vec<f64>> {
    if mode == Mode::Post && example.outputs.len() != example.retrievers.len() {
        return Err(Error::Invalid(format!(
            "post-generation selection needs outputs for {}",
            example.instance_id
        )));
    }
    SelectionItem::new(params, example, mode).scores(params)
}

/// Retriever whose full-profile score view gets the highest `method` score.
pub fn qpp_select(method: QppMethod, example: &SelectionExample) -> usize {
    let scores: Vec<f64> = example
        .qpp_views
        .iter()
        .map(|v| qpp_score(method, v, example.query_len))
        .collect();
    argmax(&scores)
}

/// Highest selection score, ties to the lowest pool index.
pub fn select(scores: &[f64]) -> usize {
    argmax(scores)
}

pub fn rspg_loss(params: &ScorerParams, item: &SelectionItem) -> Result<f64> {
    let scores = item.scores(params)?;
    let log_pi = crate::textmodel::log_softmax(&scores);
    Ok(item
        .target
        .iter()
        .zip(&log_pi)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, lp)| t * (t.ln() - lp))
        .sum())
}

/// Gradient of `(1/|B|) sum KL(P_target || softmax(selection scores))`, and the mean loss.
pub fn rspg_step(batch: &[&SelectionItem], params: &ScorerParams) -> Result<(GradientBundle, f64)> {
    let mut grad = GradientBundle::zeros_like(params);
    let weight = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for item in batch {
        let pi = softmax(&item.scores(params)?);
        loss += weight * rspg_loss(params, item)?;
        for ((bag, p), t) in item.bags.iter().zip(&pi).zip(&item.target) {
            grad.accumulate(params, ScoreInput::Head(bag), weight * (p - t))?;
        }
    }
    Ok((grad, loss))
}

#[cfg(test)]
mod tests;
