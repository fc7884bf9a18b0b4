//! Within-profile retrievers producing a common [`ScoredList`].

mod bm25;
mod dense;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{TaskKind, UserProfile};
use crate::error::{Error, Result};
use crate::prompting::Templates;

pub use bm25::{bm25_retrieve, Bm25Index, BM25_B, BM25_K1};
pub use dense::{dense_retrieve, dense_scores, DenseRetriever};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverId {
    None,
    Recency,
    Bm25,
    DenseZeroShot,
    RopgRl,
    RopgKd,
    /// Reciprocal-rank fusion of the other retrievers.
    Rrf,
}

impl RetrieverId {
    /// The selection pool, in its fixed order.
    pub const POOL: [RetrieverId; 6] = [
        RetrieverId::None,
        RetrieverId::Recency,
        RetrieverId::Bm25,
        RetrieverId::DenseZeroShot,
        RetrieverId::RopgRl,
        RetrieverId::RopgKd,
    ];

    pub fn key(self) -> &'static str {
        match self {
            RetrieverId::None => "none",
            RetrieverId::Recency => "recency",
            RetrieverId::Bm25 => "bm25",
            RetrieverId::DenseZeroShot => "dense_zero_shot",
            RetrieverId::RopgRl => "ropg_rl",
            RetrieverId::RopgKd => "ropg_kd",
            RetrieverId::Rrf => "rrf",
        }
    }
}

impl fmt::Display for RetrieverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RetrieverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "dense" | "contriever" | "zero_shot" => "dense_zero_shot",
            "rl" => "ropg_rl",
            "kd" => "ropg_kd",
            other => other,
        };
        RetrieverId::POOL
            .into_iter()
            .chain([RetrieverId::Rrf])
            .find(|r| r.key() == alias)
            .ok_or_else(|| Error::Config(format!("unknown retriever `{s}`")))
    }
}

/// Ranked `(doc_id, score)` pairs: scores non-increasing, ties by ascending doc_id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub retriever: RetrieverId,
    items: Vec<(String, f64)>,
}

impl ScoredList {
    /// Sorts by score descending (ties by ascending doc_id) and keeps the top `k`.
    pub fn rank(retriever: RetrieverId, mut items: Vec<(String, f64)>, k: usize) -> Self {
        items.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        items.truncate(k);
        ScoredList { retriever, items }
    }

    /// Wraps items that are already in rank order.
    pub fn from_ranked(retriever: RetrieverId, items: Vec<(String, f64)>) -> Self {
        debug_assert!(items.windows(2).all(|w| w[0].1 >= w[1].1));
        ScoredList { retriever, items }
    }

    pub fn empty(retriever: RetrieverId) -> Self {
        ScoredList {
            retriever,
            items: Vec::new(),
        }
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(d, _)| d.as_str())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|(_, s)| *s).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, k: usize) -> ScoredList {
        ScoredList {
            retriever: self.retriever,
            items: self.items.iter().take(k).cloned().collect(),
        }
    }

    /// Run-format lines: `instance_id doc_id rank score retriever_id`, tab separated, rank from 1.
    pub fn run_lines(&self, instance_id: &str) -> Vec<String> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, (doc, score))| format!("{instance_id}\t{doc}\t{}\t{score}\t{}", i + 1, self.retriever))
            .collect()
    }
}

/// Descending score, then ascending doc id.
pub(crate) fn rank_order(sa: f64, da: &str, sb: f64, db: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| da.cmp(db))
}

/// A profile together with each document's retrieval text.
#[derive(Debug, Clone)]
pub struct RenderedProfile {
    pub profile: Arc<UserProfile>,
    /// `texts[i]` renders `profile.docs[i]`.
    pub texts: Vec<String>,
}

impl RenderedProfile {
    pub fn new(profile: Arc<UserProfile>, task: TaskKind, templates: &Templates) -> Result<Self> {
        let texts = profile
            .docs
            .iter()
            .map(|d| templates.render_document(d, task))
            .collect::<Result<Vec<_>>>()?;
        Ok(RenderedProfile { profile, texts })
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.profile.docs.iter().map(|d| d.doc_id.as_str())
    }
}

/// Newest first (ties by ascending doc_id); the rank-`r` document scores `1/r`.
pub fn recency_retrieve(profile: &UserProfile, k: usize) -> ScoredList {
    let mut docs: Vec<_> = profile.docs.iter().collect();
    docs.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then_with(|| a.doc_id.cmp(&b.doc_id)));
    let items = docs
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| (d.doc_id.clone(), 1.0 / (i + 1) as f64))
        .collect();
    ScoredList::from_ranked(RetrieverId::Recency, items)
}

/// Retrieves nothing.
pub fn no_retrieval() -> ScoredList {
    ScoredList::empty(RetrieverId::None)
}

/// Score-0 view of every profile document, used when predicting list quality
/// for the no-retrieval option.
pub fn no_retrieval_view(profile: &UserProfile) -> ScoredList {
    let items = profile.docs.iter().map(|d| (d.doc_id.clone(), 0.0)).collect();
    ScoredList::rank(RetrieverId::None, items, usize::MAX)
}
