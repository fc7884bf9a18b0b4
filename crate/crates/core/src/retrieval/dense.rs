use std::sync::Arc;

use super::{RenderedProfile, RetrieverId, ScoredList};
use crate::textmodel::{dot, Pooling, ScorerParams, TokenBag};

/// `score_pair` between the query and every rendered document, in profile order.
pub fn dense_scores(params: &ScorerParams, pooling: &Pooling, query: &str, profile: &RenderedProfile) -> Vec<f64> {
    let q = params.encode_bag(&pooling.bag(&params.tokenize(query)));
    profile
        .texts
        .iter()
        .map(|t| {
            let bag: TokenBag = pooling.bag(&params.tokenize(t));
            dot(&q, &params.encode_bag(&bag))
        })
        .collect()
}

/// Exact top-`k` by mean-pooled dot product.
pub fn dense_retrieve(params: &ScorerParams, query: &str, profile: &RenderedProfile, k: usize) -> ScoredList {
    DenseRetriever {
        id: RetrieverId::DenseZeroShot,
        params: Arc::new(params.clone()),
        pooling: Pooling::Mean,
    }
    .retrieve(query, profile, k)
}

/// A dense scorer bound to its parameters and pooling, labelled with a pool id.
#[derive(Debug, Clone)]
pub struct DenseRetriever {
    pub id: RetrieverId,
    pub params: Arc<ScorerParams>,
    pub pooling: Pooling,
}

impl DenseRetriever {
    pub fn retrieve(&self, query: &str, profile: &RenderedProfile, k: usize) -> ScoredList {
        let scores = dense_scores(&self.params, &self.pooling, query, profile);
        let items = profile.doc_ids().map(str::to_string).zip(scores).collect();
        ScoredList::rank(self.id, items, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ProfileDocument, TaskKind, UserProfile};
    use crate::prompting::Templates;
    use crate::rng::substream;
    use crate::textmodel::Vocabulary;
    use std::collections::BTreeMap;

    fn setup() -> (ScorerParams, RenderedProfile) {
        let texts = ["red apple", "green pear", "blue sky", "red sky", "apple pear"];
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut f = BTreeMap::new();
                f.insert("text".to_string(), t.to_string());
                ProfileDocument::new(format!("d{i}"), f)
            })
            .collect();
        let p = Arc::new(UserProfile {
            user_id: "u".into(),
            docs,
        });
        let r = RenderedProfile::new(p, TaskKind::Synthetic, Templates::shipped()).unwrap();
        let vocab = Arc::new(Vocabulary::build(texts));
        (ScorerParams::init(vocab, 8, false, &mut substream(5, "init")), r)
    }

    #[test]
    fn full_k_is_sorted_profile_and_prefix_property() {
        let (params, prof) = setup();
        let full = dense_retrieve(&params, "red pear", &prof, 5);
        assert_eq!(full.len(), 5);
        let s = full.scores();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        for k in 1..5 {
            assert_eq!(dense_retrieve(&params, "red pear", &prof, k), full.top(k));
        }
        for (doc, score) in full.items() {
            let i: usize = doc[1..].parse().unwrap();
            assert_eq!(*score, params.score_pair("red pear", &prof.texts[i]));
        }
    }

    #[test]
    fn single_doc_profile_always_returned() {
        let (params, prof) = setup();
        let one = RenderedProfile {
            profile: Arc::new(UserProfile {
                user_id: "u".into(),
                docs: vec![prof.profile.docs[0].clone()],
            }),
            texts: vec![prof.texts[0].clone()],
        };
        let l = dense_retrieve(&params, "blue", &one, 3);
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["d0"]);
    }
}
