use std::collections::HashMap;

use super::{recency_retrieve, RenderedProfile, RetrieverId, ScoredList};
use crate::textmodel::words;

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// Okapi BM25 statistics over one rendered profile, stored as an inverted index.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    lengths: Vec<usize>,
    avg_len: f64,
    profile: RenderedProfile,
}

impl Bm25Index {
    pub fn build(profile: &RenderedProfile) -> Self {
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut lengths = Vec::with_capacity(profile.texts.len());
        for (i, text) in profile.texts.iter().enumerate() {
            let toks = words(text);
            lengths.push(toks.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((i, c));
            }
        }
        let n = lengths.len();
        let avg_len = if n == 0 {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / n as f64
        };
        Bm25Index {
            doc_ids: profile.doc_ids().map(str::to_string).collect(),
            postings,
            lengths,
            avg_len,
            profile: profile.clone(),
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every document, in profile order. Repeated query terms count repeatedly.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        let norm = if self.avg_len > 0.0 { self.avg_len } else { 1.0 };
        for term in words(query) {
            let Some(post) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(i, tf) in post {
                let tf = tf as f64;
                let len_norm = 1.0 - BM25_B + BM25_B * self.lengths[i] as f64 / norm;
                scores[i] += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm);
            }
        }
        scores
    }
}

/// Top-`k` documents by BM25. A query with no tokens yields zero scores in recency order.
pub fn bm25_retrieve(index: &Bm25Index, query: &str, k: usize) -> ScoredList {
    if words(query).is_empty() {
        let items = recency_retrieve(&index.profile.profile, k)
            .doc_ids()
            .map(|d| (d.to_string(), 0.0))
            .collect();
        return ScoredList::from_ranked(RetrieverId::Bm25, items);
    }
    let items = index.doc_ids.iter().cloned().zip(index.scores(query)).collect();
    ScoredList::rank(RetrieverId::Bm25, items, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ProfileDocument, TaskKind, UserProfile};
    use crate::prompting::Templates;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn rendered(texts: &[(&str, &str, &str)]) -> RenderedProfile {
        let docs = texts
            .iter()
            .map(|(id, text, date)| {
                let mut f = BTreeMap::new();
                f.insert("text".to_string(), text.to_string());
                if !date.is_empty() {
                    f.insert("date".to_string(), date.to_string());
                }
                ProfileDocument::new(*id, f)
            })
            .collect();
        let p = Arc::new(UserProfile {
            user_id: "u".into(),
            docs,
        });
        RenderedProfile::new(p, TaskKind::Synthetic, Templates::shipped()).unwrap()
    }

    #[test]
    fn unique_term_ranks_first() {
        let idx = Bm25Index::build(&rendered(&[("a", "x y", ""), ("b", "y z", ""), ("c", "q y", "")]));
        let l = bm25_retrieve(&idx, "z", 3);
        assert_eq!(l.doc_ids().next(), Some("b"));
        assert!(l.scores()[0] > 0.0);
        assert_eq!(&l.scores()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn no_matching_term_gives_zeros() {
        let idx = Bm25Index::build(&rendered(&[("a", "x y", ""), ("b", "y z", "")]));
        let l = bm25_retrieve(&idx, "nothing here", 5);
        assert_eq!(l.scores(), vec![0.0, 0.0]);
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn empty_query_is_recency_ordered() {
        let idx = Bm25Index::build(&rendered(&[
            ("a", "x", "2001-01-01"),
            ("b", "y", "2003-01-01"),
            ("c", "z", "2002-01-01"),
        ]));
        let l = bm25_retrieve(&idx, " ,, ", 3);
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        assert_eq!(l.scores(), vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_scores() {
        // doc lengths 3, 5, 1 (avg 3); query "cat dog"
        let idx = Bm25Index::build(&rendered(&[
            ("d1", "cat cat dog", ""),
            ("d2", "dog x y z w", ""),
            ("d3", "bird", ""),
        ]));
        let idf = |df: f64| (1.0 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        let term = |tf: f64, len: f64| tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * len / 3.0));
        let d1 = idf(1.0) * term(2.0, 3.0) + idf(2.0) * term(1.0, 3.0);
        let d2 = idf(2.0) * term(1.0, 5.0);
        let s = idx.scores("cat dog");
        assert!((s[0] - d1).abs() < 1e-9);
        assert!((s[1] - d2).abs() < 1e-9);
        assert_eq!(s[2], 0.0);
        assert!((idf(1.0) - (1.0f64 + 2.5 / 1.5).ln()).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_term_frequency() {
        let a = Bm25Index::build(&rendered(&[("a", "k x x x", ""), ("b", "y y y y", "")]));
        let b = Bm25Index::build(&rendered(&[("a", "k k x x", ""), ("b", "y y y y", "")]));
        assert!(b.scores("k")[0] >= a.scores("k")[0]);
    }
}
