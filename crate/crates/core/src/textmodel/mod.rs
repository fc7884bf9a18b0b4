//! Trainable bag-of-embeddings text scorer.
//!
//! One architecture serves as both the dense retriever encoder and the
//! retriever-selection encoder: lowercase word tokenization, an embedding
//! table, (weighted) mean pooling, and either a dot product between two
//! encodings or a linear head on a single encoding. All gradients are exact
//! and analytic; see [`backprop_scores`].
//!
//! Mean pooling makes every encoding invariant to token order.

mod checkpoint;
mod grad;
mod optim;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use grad::{backprop_scores, GradientBundle, ScoreInput};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState, StepReport};

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const DEFAULT_DIM: usize = 64;

/// Lowercases and splits on any non-alphanumeric character.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token → id map. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Every token seen in `texts` (minimum frequency 1), ids in lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = BTreeSet::new();
        for t in texts {
            seen.extend(words(t));
        }
        Self::from_tokens(seen)
    }

    /// Builds from an explicit token list; id `i + 1` for the `i`-th token.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![UNKNOWN_TOKEN.to_string()];
        all.extend(tokens.into_iter().filter(|t| t != UNKNOWN_TOKEN));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens excluding the reserved unknown entry, in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[1..]
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        words(text).iter().map(|w| self.id(w)).collect()
    }
}

/// Sparse pooling weights over token ids. Weights sum to 1 unless empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenBag {
    entries: Vec<(u32, f64)>,
}

impl TokenBag {
    /// Uniform mean pooling over the given ids.
    pub fn mean(ids: &[u32]) -> Self {
        Self::weighted(ids, |_| 1.0)
    }

    /// Pooling where each occurrence of token `t` contributes `weight(t)`.
    pub fn weighted(ids: &[u32], weight: impl Fn(u32) -> f64) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for &id in ids {
            *acc.entry(id).or_insert(0.0) += weight(id);
        }
        let total: f64 = acc.values().sum();
        if total <= 0.0 {
            return TokenBag::default();
        }
        TokenBag {
            entries: acc.into_iter().map(|(id, w)| (id, w / total)).collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How token embeddings are pooled into an encoding.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    /// Occurrences weighted by inverse document frequency, indexed by token id.
    Idf(Arc<Vec<f64>>),
}

impl Pooling {
    /// IDF weights `ln(1 + (N - df + 0.5) / (df + 0.5))` over a document collection.
    /// Unknown tokens get the weight of a term seen in no document.
    pub fn idf<'a>(vocab: &Vocabulary, docs: impl IntoIterator<Item = &'a str>) -> Pooling {
        let mut df = vec![0usize; vocab.len()];
        let mut n = 0usize;
        for doc in docs {
            n += 1;
            let ids: BTreeSet<u32> = vocab.tokenize(doc).into_iter().collect();
            for id in ids {
                df[id as usize] += 1;
            }
        }
        let idf = |d: usize| (1.0 + (n as f64 - d as f64 + 0.5) / (d as f64 + 0.5)).ln();
        let mut weights: Vec<f64> = df.iter().map(|&d| idf(d)).collect();
        weights[0] = idf(0);
        Pooling::Idf(Arc::new(weights))
    }

    pub fn bag(&self, ids: &[u32]) -> TokenBag {
        match self {
            Pooling::Mean => TokenBag::mean(ids),
            Pooling::Idf(w) => TokenBag::weighted(ids, |id| w.get(id as usize).copied().unwrap_or(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Trainable parameters: an embedding table and an optional linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    vocab: Arc<Vocabulary>,
    dim: usize,
    embeddings: Vec<f64>,
    head: Option<Head>,
}

impl ScorerParams {
    /// Embeddings and head weights uniform in `[-0.5/d, 0.5/d]`, bias 0.
    pub fn init<R: Rng>(vocab: Arc<Vocabulary>, dim: usize, with_head: bool, rng: &mut R) -> Self {
        let bound = 0.5 / dim as f64;
        let embeddings = (0..vocab.len() * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let head = with_head.then(|| Head {
            weights: (0..dim).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: 0.0,
        });
        ScorerParams {
            vocab,
            dim,
            embeddings,
            head,
        }
    }

    pub fn from_parts(
        vocab: Arc<Vocabulary>,
        dim: usize,
        embeddings: Vec<f64>,
        head: Option<Head>,
    ) -> Result<Self> {
        if dim == 0 || embeddings.len() != vocab.len() * dim {
            return Err(Error::Shape(format!(
                "embedding table has {} entries, expected {} x {dim}",
                embeddings.len(),
                vocab.len()
            )));
        }
        if head.as_ref().is_some_and(|h| h.weights.len() != dim) {
            return Err(Error::Shape("head width differs from embedding dim".into()));
        }
        let p = ScorerParams {
            vocab,
            dim,
            embeddings,
            head,
        };
        if !p.is_finite() {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(p)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> Option<&mut Head> {
        self.head.as_mut()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.embeddings[start..start + self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().all(|v| v.is_finite())
            && self
                .head
                .as_ref()
                .is_none_or(|h| h.bias.is_finite() && h.weights.iter().all(|v| v.is_finite()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.vocab.tokenize(text)
    }

    pub fn bag(&self, text: &str) -> TokenBag {
        TokenBag::mean(&self.tokenize(text))
    }

    pub fn encode_bag(&self, bag: &TokenBag) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(id, w) in bag.entries() {
            for (o, e) in out.iter_mut().zip(self.row(id)) {
                *o += w * e;
            }
        }
        out
    }

    /// Mean of the token embeddings of `text`; zero vector for empty text.
    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_bag(&self.bag(text))
    }

    pub fn score_pair(&self, query: &str, doc: &str) -> f64 {
        dot(&self.encode(query), &self.encode(doc))
    }

    pub fn score_bags(&self, query: &TokenBag, doc: &TokenBag) -> f64 {
        dot(&self.encode_bag(query), &self.encode_bag(doc))
    }

    pub fn head_score(&self, text: &str) -> Result<f64> {
        self.head_score_bag(&self.bag(text))
    }

    pub fn head_score_bag(&self, bag: &TokenBag) -> Result<f64> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("scorer has no linear head".into()))?;
        Ok(dot(&head.weights, &self.encode_bag(bag)) + head.bias)
    }

    /// SHA-256 of the checkpoint serialization of these parameters.
    pub fn digest(&self) -> String {
        let bytes = Checkpoint {
            label: String::new(),
            params: self.clone(),
            optimizer: None,
        }
        .to_bytes();
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax (max subtracted first). Empty in, empty out.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln(softmax(xs))`, computed without forming the probabilities.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn toy(rows: &[&[f64]], tokens: &[&str]) -> ScorerParams {
        let vocab = Arc::new(Vocabulary::from_tokens(tokens.iter().map(|t| t.to_string())));
        let dim = rows[0].len();
        let mut emb = vec![0.0; dim];
        for r in rows {
            emb.extend_from_slice(r);
        }
        ScorerParams::from_parts(vocab, dim, emb, None).unwrap()
    }

    #[test]
    fn tokenize_rules() {
        let vocab = Vocabulary::build(["The cat, sat."]);
        let ids = vocab.tokenize("The cat, sat.");
        let expected: Vec<u32> = ["the", "cat", "sat"].iter().map(|t| vocab.id(t)).collect();
        assert_eq!(ids, expected);
        assert!(ids.iter().all(|&i| i != 0));
        assert!(vocab.tokenize("").is_empty());
        assert_eq!(vocab.tokenize("Zyzzyva!"), vec![0]);
    }

    #[test]
    fn vocabulary_ids_are_dense() {
        let vocab = Vocabulary::build(["b a", "c a"]);
        assert_eq!(vocab.len(), 4);
        let mut ids: Vec<u32> = ["a", "b", "c"].iter().map(|t| vocab.id(t)).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn encode_is_mean_of_rows() {
        let p = toy(&[&[1.0, 2.0], &[3.0, -1.0]], &["cat", "dog"]);
        assert_eq!(p.encode("cat"), vec![1.0, 2.0]);
        assert_eq!(p.encode("cat cat"), p.encode("cat"));
        assert_eq!(p.encode("cat dog"), vec![2.0, 0.5]);
        assert_eq!(p.encode("dog cat"), p.encode("cat dog"));
        assert_eq!(p.encode(""), vec![0.0, 0.0]);
    }

    #[test]
    fn score_pair_cases() {
        let p = toy(&[&[1.0, 0.0], &[0.5, 2.0]], &["q", "d"]);
        assert_eq!(p.score_pair("q", "d"), 0.5);
        assert_eq!(p.score_pair("", "d"), 0.0);
        assert_eq!(p.score_pair("d", "d"), 0.25 + 4.0);
        assert_eq!(p.score_pair("q d", "d"), p.score_pair("d", "q d"));
    }

    #[test]
    fn head_score_cases() {
        let vocab = Arc::new(Vocabulary::from_tokens(["a".to_string(), "b".to_string()]));
        let emb = vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.5];
        let head = Head {
            weights: vec![1.0, 1.0],
            bias: 0.0,
        };
        let p = ScorerParams::from_parts(vocab.clone(), 2, emb.clone(), Some(head)).unwrap();
        // encoding of "a b" = (0.25, 0.75)
        assert!((p.head_score("a b").unwrap() - 1.0).abs() < 1e-15);

        let zero = Head {
            weights: vec![0.0, 0.0],
            bias: 0.7,
        };
        let p = ScorerParams::from_parts(vocab.clone(), 2, emb.clone(), Some(zero)).unwrap();
        assert_eq!(p.head_score("a b a").unwrap(), 0.7);
        assert_eq!(p.head_score("").unwrap(), 0.7);

        let no_head = ScorerParams::from_parts(vocab, 2, emb, None).unwrap();
        assert!(matches!(no_head.head_score("a"), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let vocab = Arc::new(Vocabulary::build(["alpha beta gamma"]));
        let a = ScorerParams::init(vocab.clone(), 8, true, &mut substream(1, "init"));
        let b = ScorerParams::init(vocab, 8, true, &mut substream(1, "init"));
        assert_eq!(a, b);
        assert!(a.embeddings().iter().all(|v| v.abs() <= 0.5 / 8.0));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[1.0, 0.0]);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(softmax(&[2.0, 2.0, 2.0]), vec![1.0 / 3.0; 3]);
        assert_eq!(softmax(&[1000.0]), vec![1.0]);
        let shifted = softmax(&[1001.0, 1000.0]);
        assert!((shifted[0] - p[0]).abs() < 1e-12);
        let l = log_softmax(&[0.5, -1.0, 3.0]);
        for (a, b) in l.iter().zip(softmax(&[0.5, -1.0, 3.0])) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn idf_pooling_downweights_common_terms() {
        let vocab = Vocabulary::build(["common rare", "common", "common"]);
        let pooling = Pooling::idf(&vocab, ["common rare", "common", "common"]);
        let bag = pooling.bag(&vocab.tokenize("common rare"));
        let w: BTreeMap<u32, f64> = bag.entries().iter().copied().collect();
        assert!(w[&vocab.id("rare")] > w[&vocab.id("common")]);
        assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
