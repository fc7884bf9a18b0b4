//! Data model for personalized-generation datasets.
//!
//! A dataset is a list of [`Instance`]s, each pairing a task input with a gold
//! output and the [`UserProfile`] of personal documents retrieval runs over.
//! Datasets come either from LaMP-layout JSON files ([`load_dataset`]) or from
//! the planted synthetic generator ([`generate_synthetic`]).

mod date;
mod lamp;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use date::parse_timestamp;
pub use lamp::{
    load_dataset, questions_to_json, golds_to_json, write_dataset, GoldRecord, OutputsFile,
};
pub use synthetic::{
    generate_synthetic, PlantedBest, SynonymTable, SyntheticBenchmark, SyntheticSpec,
    NONE_BEST_TARGET,
};

/// The seven LaMP tasks plus the planted synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CitationIdent,
    MovieTag,
    ProductRating,
    NewsHeadline,
    ScholarlyTitle,
    EmailSubject,
    TweetParaphrase,
    Synthetic,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::CitationIdent,
        TaskKind::MovieTag,
        TaskKind::ProductRating,
        TaskKind::NewsHeadline,
        TaskKind::ScholarlyTitle,
        TaskKind::EmailSubject,
        TaskKind::TweetParaphrase,
        TaskKind::Synthetic,
    ];

    /// Configuration key, also used as the template table name.
    pub fn key(self) -> &'static str {
        match self {
            TaskKind::CitationIdent => "citation_ident",
            TaskKind::MovieTag => "movie_tag",
            TaskKind::ProductRating => "product_rating",
            TaskKind::NewsHeadline => "news_headline",
            TaskKind::ScholarlyTitle => "scholarly_title",
            TaskKind::EmailSubject => "email_subject",
            TaskKind::TweetParaphrase => "tweet_paraphrase",
            TaskKind::Synthetic => "synthetic",
        }
    }

    pub fn lamp_name(self) -> Option<&'static str> {
        match self {
            TaskKind::CitationIdent => Some("LaMP-1"),
            TaskKind::MovieTag => Some("LaMP-2"),
            TaskKind::ProductRating => Some("LaMP-3"),
            TaskKind::NewsHeadline => Some("LaMP-4"),
            TaskKind::ScholarlyTitle => Some("LaMP-5"),
            TaskKind::EmailSubject => Some("LaMP-6"),
            TaskKind::TweetParaphrase => Some("LaMP-7"),
            TaskKind::Synthetic => None,
        }
    }

    /// Closed label set for classification tasks.
    pub fn classes(self) -> Option<&'static [&'static str]> {
        match self {
            TaskKind::CitationIdent => Some(&["[1]", "[2]"]),
            TaskKind::MovieTag => Some(&[
                "sci-fi",
                "based on a book",
                "comedy",
                "action",
                "twist ending",
                "dystopia",
                "dark comedy",
                "classic",
                "psychology",
                "fantasy",
                "romance",
                "thought-provoking",
                "social commentary",
                "violence",
                "true story",
            ]),
            TaskKind::ProductRating => Some(&["1", "2", "3", "4", "5"]),
            _ => None,
        }
    }

    pub fn is_generation(self) -> bool {
        matches!(
            self,
            TaskKind::NewsHeadline
                | TaskKind::ScholarlyTitle
                | TaskKind::EmailSubject
                | TaskKind::TweetParaphrase
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.lamp_name().unwrap_or(self.key()))
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '-' { '_' } else { c })
            .collect();
        TaskKind::ALL
            .into_iter()
            .find(|t| {
                t.key() == norm
                    || t
                        .lamp_name()
                        .is_some_and(|n| n.to_ascii_lowercase().replace('-', "_") == norm)
            })
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// One personal document. `fields` holds every source field except the id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileDocument {
    pub doc_id: String,
    pub fields: BTreeMap<String, String>,
    /// Seconds since the epoch, parsed from `fields["date"]`; 0 when absent or unparsable.
    pub timestamp: i64,
}

impl ProfileDocument {
    pub fn new(doc_id: impl Into<String>, fields: BTreeMap<String, String>) -> Self {
        let timestamp = fields.get("date").map_or(0, |d| parse_timestamp(d));
        ProfileDocument {
            doc_id: doc_id.into(),
            fields,
            timestamp,
        }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    pub fn date(&self) -> Option<&str> {
        self.field("date")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserProfile {
    pub user_id: String,
    pub docs: Vec<ProfileDocument>,
}

impl UserProfile {
    pub fn get(&self, doc_id: &str) -> Option<&ProfileDocument> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Ground truth recorded by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedInfo {
    pub best: PlantedBest,
    pub useful_doc: Option<String>,
}

/// A training or evaluation triple (user, input, target).
#[derive(Debug, Clone)]
pub struct Instance {
    pub instance_id: String,
    pub profile: Arc<UserProfile>,
    pub input_text: String,
    pub target: String,
    pub task: TaskKind,
    pub planted: Option<PlantedInfo>,
}

impl Instance {
    pub fn doc(&self, doc_id: &str) -> Result<&ProfileDocument> {
        self.profile.get(doc_id).ok_or_else(|| Error::UnknownDocument {
            doc_id: doc_id.to_string(),
            user_id: self.profile.user_id.clone(),
        })
    }
}

/// A loaded or generated dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: TaskKind,
    pub instances: Vec<Instance>,
    /// Instances dropped at ingestion because their profile was empty.
    pub skipped_empty_profiles: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Splits off the last `fraction` of instances as a held-out set.
    pub fn split_holdout(&self, fraction: f64) -> (Dataset, Dataset) {
        let held = ((self.instances.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let cut = self.instances.len() - held;
        let part = |instances: &[Instance]| Dataset {
            task: self.task,
            instances: instances.to_vec(),
            skipped_empty_profiles: 0,
        };
        (part(&self.instances[..cut]), part(&self.instances[cut..]))
    }

    /// SHA-256 over the canonical LaMP serialization of questions and golds.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.task.key().as_bytes());
        hasher.update(questions_to_json(&self.instances).to_string().as_bytes());
        hasher.update(golds_to_json(self.task, &self.instances).to_string().as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Mean and population standard deviation of profile sizes.
    pub fn profile_size_stats(&self) -> (f64, f64) {
        let n = self.instances.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let sizes: Vec<f64> = self.instances.iter().map(|i| i.profile.len() as f64).collect();
        let mean = sizes.iter().sum::<f64>() / n as f64;
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }

    /// Counts of planted-best labels, for synthetic datasets.
    pub fn planted_counts(&self) -> BTreeMap<PlantedBest, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            if let Some(p) = &inst.planted {
                *counts.entry(p.best).or_insert(0) += 1;
            }
        }
        counts
    }
}
