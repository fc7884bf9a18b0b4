use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{RetrieverId, ScoredList};

pub const RRF_K: usize = 60;
/// Depth inspected by the list-quality predictors, matching the prompt depth.
pub const QPP_DEPTH: usize = 4;
const NQC_EPS: f64 = 1e-9;

/// Reciprocal-rank fusion: `sum 1 / (k_rrf + rank)` over the lists containing a
/// document. The no-retrieval list contributes nothing.
pub fn rrf_fuse(lists: &[ScoredList], k_rrf: usize) -> ScoredList {
    let mut fused: HashMap<&str, f64> = HashMap::new();
    for list in lists.iter().filter(|l| l.retriever != RetrieverId::None) {
        for (rank, doc) in list.doc_ids().enumerate() {
            *fused.entry(doc).or_insert(0.0) += 1.0 / (k_rrf + rank + 1) as f64;
        }
    }
    let items = fused.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
    ScoredList::rank(RetrieverId::Rrf, items, usize::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QppMethod {
    Wig,
    Nqc,
    SigmaMax,
    /// Spread of the scores within `p` of the top score.
    SigmaPct(f64),
}

impl QppMethod {
    pub const ALL: [QppMethod; 4] = [
        QppMethod::Wig,
        QppMethod::Nqc,
        QppMethod::SigmaMax,
        QppMethod::SigmaPct(0.5),
    ];

    pub fn name(self) -> String {
        match self {
            QppMethod::Wig => "wig".into(),
            QppMethod::Nqc => "nqc".into(),
            QppMethod::SigmaMax => "sigma_max".into(),
            QppMethod::SigmaPct(p) => format!("sigma_{}", (p * 100.0).round()),
        }
    }
}

impl std::str::FromStr for QppMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "wig" => Ok(QppMethod::Wig),
            "nqc" => Ok(QppMethod::Nqc),
            "sigma_max" | "sigmamax" => Ok(QppMethod::SigmaMax),
            "sigma_pct" | "sigma_50" | "sigma50" => Ok(QppMethod::SigmaPct(0.5)),
            other => other
                .strip_prefix("sigma_")
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| (0.0..=100.0).contains(p))
                .map(|p| QppMethod::SigmaPct(p / 100.0))
                .ok_or_else(|| Error::Config(format!("unknown QPP method `{s}`"))),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn pop_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Predicted quality of a ranked list from its full-profile score view
/// (`scores` in rank order). `query_len` is the query length in tokens.
pub fn qpp_score(method: QppMethod, scores: &[f64], query_len: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let k = QPP_DEPTH.min(scores.len());
    let top = &scores[..k];
    let mu = mean(scores);
    match method {
        QppMethod::Wig => {
            let q = query_len.max(1) as f64;
            top.iter().map(|s| s - mu).sum::<f64>() / k as f64 / q.sqrt()
        }
        QppMethod::Nqc => pop_std(top) / (mu.abs() + NQC_EPS),
        QppMethod::SigmaMax => (1..=k).map(|i| pop_std(&scores[..i])).fold(0.0, f64::max),
        QppMethod::SigmaPct(p) => {
            let s1 = scores[0];
            if s1 <= 0.0 {
                return 0.0;
            }
            let kept: Vec<f64> = scores.iter().copied().filter(|&s| s >= p * s1).collect();
            pop_std(&kept)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
