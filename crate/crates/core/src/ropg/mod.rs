//! Training the dense retriever from downstream feedback.
//!
//! Both algorithms restrict the retriever's softmax to the top `l` documents
//! under the initial parameters and score each candidate once, up front, by
//! generating with a single-entry prompt. The policy-gradient variant samples
//! one document per instance and weights its log-probability by the Eval gain
//! over the initial top-1 document; the distillation variant pulls the
//! retriever's distribution toward a softmax of the Eval scores.

mod rewards;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::prompting::Templates;
use crate::retrieval::{dense_scores, RenderedProfile, RetrieverId, ScoredList};
use crate::textmodel::{log_softmax, softmax, GradientBundle, Pooling, ScoreInput, ScorerParams, TokenBag};

pub use rewards::{precompute_rewards, reward_table_path, RewardEntry, RewardTable};
pub use train::{train, EpochRecord, StepRecord, TrainConfig, TrainOutput};

pub const DEFAULT_CANDIDATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rl,
    Kd,
}

impl Algorithm {
    pub fn retriever_id(self) -> RetrieverId {
        match self {
            Algorithm::Rl => RetrieverId::RopgRl,
            Algorithm::Kd => RetrieverId::RopgKd,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rl" => Ok(Algorithm::Rl),
            "kd" => Ok(Algorithm::Kd),
            _ => Err(Error::Config(format!("unknown algorithm `{s}` (expected rl or kd)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Rl => "rl",
            Algorithm::Kd => "kd",
        })
    }
}

/// The top-`l` profile documents under the initial retriever, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub instance_id: String,
    pub docs: Vec<String>,
    pub l: usize,
}

pub fn build_candidates(
    instance: &Instance,
    profile: &RenderedProfile,
    initial: &ScorerParams,
    templates: &Templates,
    l: usize,
) -> CandidateSet {
    let query = templates.make_query(instance.task, &instance.input_text);
    let scores = dense_scores(initial, &Pooling::Mean, &query, profile);
    let items = profile.doc_ids().map(str::to_string).zip(scores).collect();
    let ranked = ScoredList::rank(RetrieverId::DenseZeroShot, items, l);
    CandidateSet {
        instance_id: instance.instance_id.clone(),
        docs: ranked.doc_ids().map(str::to_string).collect(),
        l,
    }
}

/// One instance ready for gradient steps: token bags for the query and every
/// rewarded candidate, with their Eval scores.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub instance_id: String,
    pub query: TokenBag,
    pub doc_ids: Vec<String>,
    pub docs: Vec<TokenBag>,
    pub evals: Vec<f64>,
    pub baseline_eval: f64,
    /// Index of the planted useful document, when known.
    pub useful: Option<usize>,
}

impl TrainingExample {
    pub fn new(
        instance: &Instance,
        profile: &RenderedProfile,
        entry: &RewardEntry,
        params: &ScorerParams,
        templates: &Templates,
    ) -> Result<Self> {
        let query = params.bag(&templates.make_query(instance.task, &instance.input_text));
        let mut doc_ids = Vec::new();
        let mut docs = Vec::new();
        let mut evals = Vec::new();
        for (doc_id, eval) in &entry.evals {
            let i = profile
                .doc_ids()
                .position(|d| d == doc_id)
                .ok_or_else(|| Error::UnknownDocument {
                    doc_id: doc_id.clone(),
                    user_id: profile.profile.user_id.clone(),
                })?;
            doc_ids.push(doc_id.clone());
            docs.push(params.bag(&profile.texts[i]));
            evals.push(*eval);
        }
        let useful = instance
            .planted
            .as_ref()
            .and_then(|p| p.useful_doc.as_ref())
            .and_then(|u| doc_ids.iter().position(|d| d == u));
        Ok(TrainingExample {
            instance_id: instance.instance_id.clone(),
            query,
            doc_ids,
            docs,
            evals,
            baseline_eval: entry.baseline_eval,
            useful,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn scores(&self, params: &ScorerParams) -> Vec<f64> {
        let q = params.encode_bag(&self.query);
        self.docs
            .iter()
            .map(|d| crate::textmodel::dot(&q, &params.encode_bag(d)))
            .collect()
    }

    /// Eval gain of each candidate over the baseline document.
    pub fn rewards(&self) -> Vec<f64> {
        self.evals.iter().map(|e| e - self.baseline_eval).collect()
    }

    fn inputs(&self) -> Vec<ScoreInput<'_>> {
        self.docs
            .iter()
            .map(|d| ScoreInput::Pair {
                query: &self.query,
                doc: d,
            })
            .collect()
    }

    /// Adds `sum_j upstream[j] * d(score_j)/d(params)` to `grad`.
    pub fn backprop(&self, params: &ScorerParams, upstream: &[f64], grad: &mut GradientBundle) -> Result<()> {
        for (input, &u) in self.inputs().into_iter().zip(upstream) {
            grad.accumulate(params, input, u)?;
        }
        Ok(())
    }
}

/// Softmax of candidate scores.
pub fn policy_probs(params: &ScorerParams, query: &str, candidates: &[&str]) -> Vec<f64> {
    let q = params.encode(query);
    let scores: Vec<f64> = candidates
        .iter()
        .map(|d| crate::textmodel::dot(&q, &params.encode(d)))
        .collect();
    softmax(&scores)
}

/// Distillation target: softmax of `evals / temperature`.
pub fn kd_target(evals: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = evals.iter().map(|e| e / temperature).collect();
    softmax(&scaled)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-sample policy-gradient contribution for having drawn candidate `sampled`:
/// the gradient of `-R(d) log pi(d)`, scaled by `weight`.
pub fn rl_sample_gradient(
    params: &ScorerParams,
    example: &TrainingExample,
    sampled: usize,
    weight: f64,
    grad: &mut GradientBundle,
) -> Result<()> {
    let probs = softmax(&example.scores(params));
    let reward = example.evals[sampled] - example.baseline_eval;
    let upstream: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, p)| -weight * reward * (f64::from(u8::from(j == sampled)) - p))
        .collect();
    example.backprop(params, &upstream, grad)
}

/// Summary of one batch step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss: f64,
    pub expected_reward: f64,
    pub useful_mass: Option<f64>,
    pub instances: usize,
}

fn batch_stats(params: &ScorerParams, batch: &[&TrainingExample]) -> (Vec<Vec<f64>>, f64, Option<f64>) {
    let probs: Vec<Vec<f64>> = batch.iter().map(|e| softmax(&e.scores(params))).collect();
    let n = batch.len().max(1) as f64;
    let expected = batch
        .iter()
        .zip(&probs)
        .map(|(e, p)| p.iter().zip(e.rewards()).map(|(a, r)| a * r).sum::<f64>())
        .sum::<f64>()
        / n;
    let useful: Vec<f64> = batch
        .iter()
        .zip(&probs)
        .filter_map(|(e, p)| e.useful.map(|u| p[u]))
        .collect();
    let mass = (!useful.is_empty()).then(|| useful.iter().sum::<f64>() / useful.len() as f64);
    (probs, expected, mass)
}

/// REINFORCE with a fixed baseline. Returns the gradient of
/// `-(1/|B|) sum R(d) log pi(d)` for one sampled `d` per instance, so that a
/// descent step on it ascends expected reward. Empty candidate sets are skipped.
pub fn rl_step<R: Rng>(
    batch: &[&TrainingExample],
    params: &ScorerParams,
    rng: &mut R,
) -> Result<(GradientBundle, BatchStats)> {
    let batch: Vec<&TrainingExample> = batch.iter().copied().filter(|e| !e.is_empty()).collect();
    let mut grad = GradientBundle::zeros_like(params);
    let (probs, expected_reward, useful_mass) = batch_stats(params, &batch);
    let weight = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for (example, p) in batch.iter().zip(&probs) {
        let d = sample_index(p, rng);
        let reward = example.evals[d] - example.baseline_eval;
        loss -= weight * reward * p[d].ln();
        let upstream: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, pj)| -weight * reward * (f64::from(u8::from(j == d)) - pj))
            .collect();
        example.backprop(params, &upstream, &mut grad)?;
    }
    Ok((
        grad,
        BatchStats {
            loss,
            expected_reward,
            useful_mass,
            instances: batch.len(),
        },
    ))
}

/// Forward KL from the distillation target to the policy, for one instance.
pub fn kd_loss(params: &ScorerParams, example: &TrainingExample, temperature: f64) -> f64 {
    let target = kd_target(&example.evals, temperature);
    let log_pi = log_softmax(&example.scores(params));
    target
        .iter()
        .zip(&log_pi)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, lp)| t * (t.ln() - lp))
        .sum()
}

/// Gradient of `(1/|B|) sum KL(p_t || pi)`.
pub fn kd_step(
    batch: &[&TrainingExample],
    params: &ScorerParams,
    temperature: f64,
) -> Result<(GradientBundle, BatchStats)> {
    let batch: Vec<&TrainingExample> = batch.iter().copied().filter(|e| !e.is_empty()).collect();
    let mut grad = GradientBundle::zeros_like(params);
    let (probs, expected_reward, useful_mass) = batch_stats(params, &batch);
    let weight = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for (example, p) in batch.iter().zip(&probs) {
        let target = kd_target(&example.evals, temperature);
        loss += weight * kd_loss(params, example, temperature);
        let upstream: Vec<f64> = p.iter().zip(&target).map(|(pi, t)| weight * (pi - t)).collect();
        example.backprop(params, &upstream, &mut grad)?;
    }
    Ok((
        grad,
        BatchStats {
            loss,
            expected_reward,
            useful_mass,
            instances: batch.len(),
        },
    ))
}
