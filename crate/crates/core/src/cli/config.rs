use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SyntheticSpec, TaskKind};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorKind};
use crate::ropg::{Algorithm, TrainConfig, DEFAULT_CANDIDATES};
use crate::selection::RspgConfig;
use crate::textmodel::DEFAULT_DIM;

/// One flat key space for every command. Relative paths are resolved
/// against the directory of the file they were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    /// LaMP questions file; unused for the synthetic task.
    pub questions: Option<PathBuf>,
    pub outputs: Option<PathBuf>,
    pub synthetic_users: usize,
    pub synthetic_profile_size: usize,
    pub synthetic_markers: usize,
    pub synthetic_payloads: usize,
    /// `"bm25:0.3,recency:0.2,dense:0.3,none:0.2"`
    pub synthetic_mix: String,
    /// Trailing fraction of instances held out for evaluation.
    pub holdout_fraction: f64,
    pub templates: Option<PathBuf>,

    pub generator: GeneratorKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub max_output_tokens: usize,
    pub cache_dir: Option<PathBuf>,

    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,

    pub dim: usize,
    /// Retrieved entries per prompt.
    pub top_k: usize,
    pub candidates: usize,

    pub ropg_epochs: usize,
    pub ropg_batch_size: usize,
    pub ropg_accumulation: usize,
    pub ropg_lr: f64,
    pub ropg_warmup: f64,
    pub ropg_clip: f64,
    pub ropg_temperature: f64,

    pub rspg_epochs: usize,
    pub rspg_batch_size: usize,
    pub rspg_accumulation: usize,
    pub rspg_lr: f64,
    pub rspg_warmup: f64,
    pub rspg_clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ropg = TrainConfig::default();
        let rspg = RspgConfig::default();
        RunConfig {
            task: TaskKind::Synthetic,
            questions: None,
            outputs: None,
            synthetic_users: 2000,
            synthetic_profile_size: 8,
            synthetic_markers: 24,
            synthetic_payloads: 16,
            synthetic_mix: "bm25:0.3,recency:0.2,dense:0.3,none:0.2".into(),
            holdout_fraction: 0.2,
            templates: None,
            generator: GeneratorKind::Oracle,
            endpoint: None,
            timeout_secs: 60.0,
            retries: 3,
            max_output_tokens: 512,
            cache_dir: None,
            out_dir: PathBuf::from("run"),
            seed: 0,
            workers: None,
            dim: DEFAULT_DIM,
            top_k: crate::prompting::EVAL_ENTRIES,
            candidates: DEFAULT_CANDIDATES,
            ropg_epochs: ropg.epochs,
            ropg_batch_size: ropg.batch_size,
            ropg_accumulation: ropg.accumulation,
            ropg_lr: 0.05,
            ropg_warmup: ropg.warmup_fraction,
            ropg_clip: ropg.clip_norm,
            ropg_temperature: ropg.temperature,
            rspg_epochs: rspg.epochs,
            rspg_batch_size: rspg.batch_size,
            rspg_accumulation: rspg.accumulation,
            rspg_lr: 0.05,
            rspg_warmup: rspg.warmup_fraction,
            rspg_clip: rspg.clip_norm,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.questions, &mut self.outputs, &mut self.templates, &mut self.cache_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != TaskKind::Synthetic && (self.questions.is_none() || self.outputs.is_none()) {
            return Err(Error::Config(format!(
                "task {} needs `questions` and `outputs` paths",
                self.task
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must be in [0, 1)".into()));
        }
        if self.dim == 0 || self.top_k == 0 {
            return Err(Error::Config("dim and top_k must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.ropg(Algorithm::Kd).validate()?;
        self.generator_config().validate()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            num_users: self.synthetic_users,
            profile_size: self.synthetic_profile_size,
            marker_vocab_size: self.synthetic_markers,
            payload_vocab_size: self.synthetic_payloads,
            best_retriever_mix: SyntheticSpec::parse_mix(&self.synthetic_mix)?,
            seed: self.seed,
        })
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            kind: self.generator,
            endpoint: self.endpoint.clone(),
            timeout_secs: self.timeout_secs,
            retries: self.retries,
            cache_dir: Some(self.cache_dir().join("generations")),
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn ropg(&self, algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            algorithm,
            epochs: self.ropg_epochs,
            batch_size: self.ropg_batch_size,
            accumulation: self.ropg_accumulation,
            base_lr: self.ropg_lr,
            warmup_fraction: self.ropg_warmup,
            clip_norm: self.ropg_clip,
            l: self.candidates,
            seed: self.seed,
            temperature: self.ropg_temperature,
        }
    }

    pub fn rspg(&self) -> RspgConfig {
        RspgConfig {
            epochs: self.rspg_epochs,
            batch_size: self.rspg_batch_size,
            accumulation: self.rspg_accumulation,
            base_lr: self.rspg_lr,
            warmup_fraction: self.rspg_warmup,
            clip_norm: self.rspg_clip,
            dim: self.dim,
            seed: self.seed,
        }
    }
}
