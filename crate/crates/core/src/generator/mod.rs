//! The language-model boundary: a backend behind a persistent prompt cache.

mod cache;
mod oracle;
mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SynonymTable;
use crate::error::{Error, Result};

pub use cache::{cache_key, prompt_hash, GenerationRecord, PromptCache};
pub use oracle::{OracleGenerator, ORACLE_FALLBACK};
pub use remote::RemoteGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub cache_dir: Option<PathBuf>,
    pub max_output_tokens: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Oracle,
            endpoint: None,
            timeout_secs: 60.0,
            retries: 3,
            cache_dir: None,
            max_output_tokens: 512,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == GeneratorKind::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config("remote generator requires an endpoint".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("generator timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Something that turns a prompt into text.
pub trait Backend: Send + Sync {
    /// Identifies the backend in cache keys so outputs of different models never mix.
    fn identity(&self) -> String;
    fn generate(&self, prompt: &str) -> Result<String>;
}

impl Backend for OracleGenerator {
    fn identity(&self) -> String {
        let table = serde_json::to_vec(self.synonyms()).expect("table serializes");
        format!("oracle:{}", hex::encode(&Sha256::digest(&table)[..8]))
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        Ok(OracleGenerator::generate(self, prompt))
    }
}

impl Backend for RemoteGenerator {
    fn identity(&self) -> String {
        format!("remote:{}:{}", self.endpoint(), self.max_tokens())
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        RemoteGenerator::generate(self, prompt)
    }
}

/// Cached generation front end. Safe to call from many threads.
pub struct Generator {
    backend: Box<dyn Backend>,
    identity: String,
    cache: PromptCache,
    backend_calls: AtomicU64,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("backend", &self.identity)
            .field("cached", &self.cache.len())
            .finish()
    }
}

impl Generator {
    pub fn new(backend: impl Backend + 'static, cache: PromptCache) -> Self {
        let identity = backend.identity();
        Generator {
            backend: Box::new(backend),
            identity,
            cache,
            backend_calls: AtomicU64::new(0),
        }
    }

    /// Oracle generators need the synthetic benchmark's synonym table.
    pub fn from_config(config: &GeneratorConfig, synonyms: Option<SynonymTable>) -> Result<Self> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => PromptCache::open(dir)?,
            None => PromptCache::in_memory(),
        };
        Ok(match config.kind {
            GeneratorKind::Oracle => {
                let table = synonyms.ok_or_else(|| {
                    Error::Config("the oracle generator only serves the synthetic task".into())
                })?;
                Generator::new(OracleGenerator::new(table), cache)
            }
            GeneratorKind::Remote => Generator::new(
                RemoteGenerator::new(
                    config.endpoint.as_deref().expect("validated"),
                    Duration::from_secs_f64(config.timeout_secs),
                    config.retries,
                    config.max_output_tokens,
                ),
                cache,
            ),
        })
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn generate(&self, prompt: &str) -> Result<String> {
        let key = cache_key(&self.identity, prompt);
        self.cache.get_or_insert_with(&key, || {
            let start = Instant::now();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            let output = self.backend.generate(prompt)?;
            Ok(GenerationRecord {
                key: key.clone(),
                prompt_hash: prompt_hash(prompt),
                prompt: prompt.to_string(),
                output,
                latency_ms: start.elapsed().as_millis() as u64,
            })
        })
    }

    /// Generates for every prompt in parallel; results keep input order.
    pub fn generate_many(&self, prompts: &[String]) -> Vec<Result<String>> {
        prompts.par_iter().map(|p| self.generate(p)).collect()
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache.hits()
    }

    pub fn cache_misses(&self) -> u64 {
        self.cache.misses()
    }

    /// Calls that reached the backend (cache misses, including failed ones).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }
}
