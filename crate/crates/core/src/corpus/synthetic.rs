//! Planted synthetic benchmark.
//!
//! Every instance asks for a payload token associated with a marker token in
//! its input. Each user's profile is built so that exactly one retrieval
//! strategy is designed to surface the document carrying the answer:
//!
//! * `Bm25`: one old document repeats the marker literally.
//! * `Recency`: the newest document carries the marker; four older decoys
//!   repeat the query's topic words so term matching ranks them first.
//! * `Dense`: the useful document carries a synonym of the marker, which
//!   shares no surface form with it. The synonym table is global, so a
//!   trained dense scorer can learn it.
//! * `NoRetrieval`: every document repeats a marker from a reserved block
//!   with a wrong payload; the correct answer is what the generator emits
//!   without personalization.
//!
//! Documents are four tokens long so term-matching length normalization is
//! the same across the profile.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, PlantedInfo, ProfileDocument, TaskKind, UserProfile};
use crate::error::{Error, Result};
use crate::rng;

/// Target of instances that are answered best without retrieval.
pub const NONE_BEST_TARGET: &str = "unknown";

const TOPIC_VOCAB: usize = 24;
const FILLER_VOCAB: usize = 40;
const DATE_SPAN_DAYS: usize = 4000;
/// Planting assumes prompts built from this many entries.
const PROMPT_DEPTH: usize = 4;
const DECOYS: usize = 4;
pub(crate) const MIN_PROFILE_SIZE: usize = DECOYS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedBest {
    NoRetrieval,
    Recency,
    Bm25,
    Dense,
}

impl PlantedBest {
    pub const ALL: [PlantedBest; 4] = [
        PlantedBest::NoRetrieval,
        PlantedBest::Recency,
        PlantedBest::Bm25,
        PlantedBest::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlantedBest::NoRetrieval => "none",
            PlantedBest::Recency => "recency",
            PlantedBest::Bm25 => "bm25",
            PlantedBest::Dense => "dense",
        }
    }
}

impl fmt::Display for PlantedBest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantedBest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "no_retrieval" | "no-retrieval" => Ok(PlantedBest::NoRetrieval),
            "recency" => Ok(PlantedBest::Recency),
            "bm25" => Ok(PlantedBest::Bm25),
            "dense" => Ok(PlantedBest::Dense),
            other => Err(Error::InvalidSpec(format!("unknown retriever kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub profile_size: usize,
    pub marker_vocab_size: usize,
    pub payload_vocab_size: usize,
    pub best_retriever_mix: BTreeMap<PlantedBest, f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_users == 0 || self.marker_vocab_size == 0 {
            return bad("counts must be at least 1".into());
        }
        if self.profile_size < MIN_PROFILE_SIZE {
            return bad(format!(
                "profile_size must be at least {MIN_PROFILE_SIZE} to plant decoys"
            ));
        }
        if self.payload_vocab_size < 2 {
            return bad("payload_vocab_size must be at least 2".into());
        }
        if self.best_retriever_mix.values().any(|f| !f.is_finite() || *f < 0.0) {
            return bad("mix fractions must be non-negative".into());
        }
        let total: f64 = self.best_retriever_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mix fractions sum to {total}, expected 1"));
        }
        Ok(())
    }

    /// Parses `"bm25:0.3,recency:0.2,dense:0.3,none:0.2"`.
    pub fn parse_mix(s: &str) -> Result<BTreeMap<PlantedBest, f64>> {
        let mut mix = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidSpec(format!("bad mix entry `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad fraction in `{part}`")))?;
            mix.insert(k.parse()?, v);
        }
        Ok(mix)
    }
}

/// Global marker → synonym mapping used by the planted dense category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable {
    synonym_of: Vec<u32>,
    marker_of: Vec<u32>,
}

impl SynonymTable {
    pub fn from_permutation(synonym_of: Vec<u32>) -> Result<Self> {
        let mut marker_of = vec![u32::MAX; synonym_of.len()];
        for (m, &s) in synonym_of.iter().enumerate() {
            let slot = marker_of
                .get_mut(s as usize)
                .ok_or_else(|| Error::InvalidSpec("synonym table is not a permutation".into()))?;
            *slot = m as u32;
        }
        if marker_of.contains(&u32::MAX) {
            return Err(Error::InvalidSpec("synonym table is not a permutation".into()));
        }
        Ok(SynonymTable {
            synonym_of,
            marker_of,
        })
    }

    pub fn len(&self) -> usize {
        self.synonym_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonym_of.is_empty()
    }

    pub fn synonym_token(&self, marker: u32) -> String {
        format!("s{}", self.synonym_of[marker as usize])
    }

    /// Resolves a marker (`m17`) or a synonym (`s4`) token to its marker index.
    pub fn resolve(&self, token: &str) -> Option<u32> {
        if let Some(idx) = token.strip_prefix('m').and_then(numeric) {
            return Some(idx);
        }
        token
            .strip_prefix('s')
            .and_then(numeric)
            .and_then(|s| self.marker_of.get(s as usize).copied())
    }
}

fn numeric(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub spec: SyntheticSpec,
    pub dataset: Dataset,
    pub synonyms: SynonymTable,
}

/// Exact per-label quotas by largest remainder.
fn quotas(mix: &BTreeMap<PlantedBest, f64>, n: usize) -> Vec<(PlantedBest, usize)> {
    let mut out: Vec<(PlantedBest, usize, f64)> = mix
        .iter()
        .map(|(&k, &f)| {
            let exact = f * n as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = out.iter().map(|o| o.1).sum();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[b].2.total_cmp(&out[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        out[i].1 += 1;
    }
    out.into_iter().map(|(k, c, _)| (k, c)).collect()
}

fn filler<R: Rng>(rng: &mut R) -> String {
    format!("f{}", rng.random_range(0..FILLER_VOCAB))
}

fn other_payload<R: Rng>(rng: &mut R, vocab: usize, target: Option<usize>) -> String {
    loop {
        let p = rng.random_range(0..vocab);
        if Some(p) != target {
            return format!("p{p}");
        }
    }
}

/// Generates the planted benchmark. Pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, rng::SYNTHESIS);

    let mut perm: Vec<u32> = (0..spec.marker_vocab_size as u32).collect();
    perm.shuffle(&mut rng);
    let synonyms = SynonymTable::from_permutation(perm)?;

    let mut labels: Vec<PlantedBest> = quotas(&spec.best_retriever_mix, spec.num_users)
        .into_iter()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    labels.shuffle(&mut rng);

    let base = NaiveDate::from_ymd_opt(2012, 1, 1).expect("valid date");
    let p = spec.profile_size;
    let user_width = spec.num_users.saturating_sub(1).to_string().len().max(4);
    let doc_width = (p - 1).to_string().len().max(2);
    let m = spec.marker_vocab_size;

    let mut instances = Vec::with_capacity(spec.num_users);
    for (u, &label) in labels.iter().enumerate() {
        let marker = match label {
            PlantedBest::NoRetrieval => m + rng.random_range(0..m),
            _ => rng.random_range(0..m),
        };
        let topic_a = rng.random_range(0..TOPIC_VOCAB);
        let topic_b = loop {
            let t = rng.random_range(0..TOPIC_VOCAB);
            if t != topic_a {
                break t;
            }
        };
        let payload = rng.random_range(0..spec.payload_vocab_size);

        // Distinct dates, newest first: rank 0 is the most recent document.
        let mut offsets = rand::seq::index::sample(&mut rng, DATE_SPAN_DAYS, p).into_vec();
        offsets.sort_unstable_by(|a, b| b.cmp(a));

        let useful = match label {
            PlantedBest::NoRetrieval => None,
            PlantedBest::Dense => Some(rng.random_range(PROMPT_DEPTH..p)),
            _ => Some(rng.random_range(0..p)),
        };
        let useful_rank = match label {
            PlantedBest::Recency => Some(0),
            PlantedBest::Bm25 | PlantedBest::Dense => Some(rng.random_range(PROMPT_DEPTH..p)),
            PlantedBest::NoRetrieval => None,
        };
        let mut free_ranks: Vec<usize> = (0..p).filter(|r| Some(*r) != useful_rank).collect();
        free_ranks.shuffle(&mut rng);
        let mut free_ranks = free_ranks.into_iter();
        let ranks: Vec<usize> = (0..p)
            .map(|j| {
                if Some(j) == useful {
                    useful_rank.expect("useful doc has a rank")
                } else {
                    free_ranks.next().expect("enough ranks")
                }
            })
            .collect();

        let decoys: Vec<usize> = if label == PlantedBest::Recency {
            let others: Vec<usize> = (0..p).filter(|&j| Some(j) != useful).collect();
            others.choose_multiple(&mut rng, DECOYS).copied().collect()
        } else {
            Vec::new()
        };

        let user_id = format!("user-{u:0user_width$}");
        let docs: Vec<ProfileDocument> = (0..p)
            .map(|j| {
                let text = if Some(j) == useful {
                    let key = match label {
                        PlantedBest::Dense => synonyms.synonym_token(marker as u32),
                        _ => format!("m{marker}"),
                    };
                    format!("{key} p{payload} {} {}", filler(&mut rng), filler(&mut rng))
                } else if decoys.contains(&j) {
                    format!("t{topic_a} t{topic_b} t{topic_a} t{topic_b}")
                } else if label == PlantedBest::NoRetrieval {
                    format!(
                        "m{marker} {} {} {}",
                        other_payload(&mut rng, spec.payload_vocab_size, None),
                        filler(&mut rng),
                        filler(&mut rng)
                    )
                } else {
                    format!(
                        "{} {} {} {}",
                        other_payload(&mut rng, spec.payload_vocab_size, Some(payload)),
                        filler(&mut rng),
                        filler(&mut rng),
                        filler(&mut rng)
                    )
                };
                let date = base + Days::new(offsets[ranks[j]] as u64);
                let mut fields = BTreeMap::new();
                fields.insert("text".to_string(), text);
                fields.insert("date".to_string(), date.format("%Y-%m-%d").to_string());
                ProfileDocument::new(format!("{user_id}-d{j:0doc_width$}"), fields)
            })
            .collect();

        let useful_doc = useful.map(|j| docs[j].doc_id.clone());
        let target = match label {
            PlantedBest::NoRetrieval => NONE_BEST_TARGET.to_string(),
            _ => format!("p{payload}"),
        };
        instances.push(Instance {
            instance_id: format!("syn-{u:0user_width$}"),
            profile: Arc::new(UserProfile { user_id, docs }),
            input_text: format!("classify: m{marker} t{topic_a} t{topic_b}"),
            target,
            task: TaskKind::Synthetic,
            planted: Some(PlantedInfo {
                best: label,
                useful_doc,
            }),
        });
    }

    Ok(SyntheticBenchmark {
        spec: spec.clone(),
        dataset: Dataset {
            task: TaskKind::Synthetic,
            instances,
            skipped_empty_profiles: 0,
        },
        synonyms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::questions_to_json;

    fn spec(mix: &[(PlantedBest, f64)], users: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_users: users,
            profile_size: 12,
            marker_vocab_size: 20,
            payload_vocab_size: 30,
            best_retriever_mix: mix.iter().copied().collect(),
            seed: 11,
        }
    }

    #[test]
    fn single_label_mix() {
        let bench = generate_synthetic(&spec(&[(PlantedBest::Bm25, 1.0)], 10)).unwrap();
        assert_eq!(bench.dataset.len(), 10);
        assert!(bench
            .dataset
            .instances
            .iter()
            .all(|i| i.planted.as_ref().unwrap().best == PlantedBest::Bm25));
    }

    #[test]
    fn deterministic_in_seed() {
        let s = spec(&[(PlantedBest::Bm25, 0.5), (PlantedBest::Dense, 0.5)], 50);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(
            questions_to_json(&a.dataset.instances).to_string(),
            questions_to_json(&b.dataset.instances).to_string()
        );
        assert_eq!(a.synonyms, b.synonyms);
        let mut other = s.clone();
        other.seed += 1;
        let c = generate_synthetic(&other).unwrap();
        assert_ne!(
            questions_to_json(&a.dataset.instances).to_string(),
            questions_to_json(&c.dataset.instances).to_string()
        );
    }

    #[test]
    fn label_counts_follow_mix() {
        let bench = generate_synthetic(&spec(
            &[(PlantedBest::Bm25, 0.5), (PlantedBest::Recency, 0.5)],
            1000,
        ))
        .unwrap();
        let counts = bench.dataset.planted_counts();
        for label in [PlantedBest::Bm25, PlantedBest::Recency] {
            let c = counts[&label] as i64;
            assert!((c - 500).abs() <= 50, "{label}: {c}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(&[(PlantedBest::Bm25, 0.7)], 10);
        assert!(generate_synthetic(&s).is_err());
        s.best_retriever_mix.insert(PlantedBest::Dense, 0.3);
        assert!(generate_synthetic(&s).is_ok());
        s.profile_size = 4;
        assert!(generate_synthetic(&s).is_err());
        s.profile_size = 12;
        s.num_users = 0;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn planted_structure_holds() {
        let s = spec(
            &[
                (PlantedBest::Bm25, 0.25),
                (PlantedBest::Recency, 0.25),
                (PlantedBest::Dense, 0.25),
                (PlantedBest::NoRetrieval, 0.25),
            ],
            200,
        );
        let bench = generate_synthetic(&s).unwrap();
        for inst in &bench.dataset.instances {
            let planted = inst.planted.as_ref().unwrap();
            let mut by_recency: Vec<&ProfileDocument> = inst.profile.docs.iter().collect();
            by_recency.sort_by(|a, b| b.timestamp.cmp(&a.timestamp));
            let newest: Vec<&str> = by_recency[..4].iter().map(|d| d.doc_id.as_str()).collect();
            match planted.best {
                PlantedBest::NoRetrieval => {
                    assert_eq!(inst.target, NONE_BEST_TARGET);
                    assert!(planted.useful_doc.is_none());
                }
                PlantedBest::Recency => {
                    assert_eq!(newest[0], planted.useful_doc.as_deref().unwrap());
                }
                PlantedBest::Bm25 => {
                    assert!(!newest.contains(&planted.useful_doc.as_deref().unwrap()));
                }
                PlantedBest::Dense => {
                    let id = planted.useful_doc.as_deref().unwrap();
                    assert!(!newest.contains(&id));
                    let pos = inst.profile.docs.iter().position(|d| d.doc_id == id).unwrap();
                    assert!(pos >= 4);
                    let text = inst.profile.get(id).unwrap().field("text").unwrap();
                    assert!(text.starts_with('s'));
                }
            }
        }
    }

    #[test]
    fn synonym_table_resolves_both_forms() {
        let t = SynonymTable::from_permutation(vec![2, 0, 1]).unwrap();
        assert_eq!(t.resolve("m1"), Some(1));
        assert_eq!(t.resolve("s2"), Some(0));
        assert_eq!(t.resolve("s9"), None);
        assert_eq!(t.resolve("p3"), None);
        assert_eq!(t.resolve("m"), None);
        assert!(SynonymTable::from_permutation(vec![0, 0]).is_err());
    }
}
