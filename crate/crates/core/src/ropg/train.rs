use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_stats, kd_step, rl_step, Algorithm, TrainingExample, DEFAULT_CANDIDATES};
use crate::error::{Error, Result};
use crate::rng;
use crate::textmodel::{adam_step, AdamConfig, AdamState, Checkpoint, ScorerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    /// Micro-batches accumulated into one optimizer step.
    pub accumulation: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub l: usize,
    pub seed: u64,
    /// Distillation target temperature; 1 leaves Eval scores unscaled.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Kd,
            epochs: 10,
            batch_size: 8,
            accumulation: 8,
            base_lr: 1e-5,
            warmup_fraction: 0.05,
            clip_norm: 1.0,
            l: DEFAULT_CANDIDATES,
            seed: 0,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.accumulation
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation == 0 || self.l == 0 {
            return Err(Error::Config("batch size, accumulation and l must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.temperature > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate, temperature and clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, examples: usize) -> u64 {
        (self.epochs * examples.div_ceil(self.effective_batch())) as u64
    }

    pub fn adam(&self, examples: usize) -> AdamConfig {
        AdamConfig {
            warmup_fraction: self.warmup_fraction,
            clip_norm: Some(self.clip_norm),
            ..AdamConfig::new(self.base_lr, self.total_steps(examples))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub expected_reward: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Whole-dataset statistics; epoch 0 describes the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    pub expected_reward: f64,
    pub useful_mass: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ScorerParams,
    pub optimizer: AdamState,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn dataset_record(params: &ScorerParams, examples: &[TrainingExample], epoch: usize) -> EpochRecord {
    let all: Vec<&TrainingExample> = examples.iter().filter(|e| !e.is_empty()).collect();
    let (_, expected_reward, useful_mass) = batch_stats(params, &all);
    EpochRecord {
        epoch,
        mean_loss: None,
        expected_reward,
        useful_mass,
        checkpoint: None,
    }
}

/// Runs `config.epochs` passes of shuffled effective batches through Adam.
/// With `checkpoint_dir`, writes `ropg-<algo>-epochNN.ckpt` after each epoch.
pub fn train(
    examples: &[TrainingExample],
    initial: &ScorerParams,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut params = initial.clone();
    let mut optimizer = AdamState::new(&params);
    let adam = config.adam(examples.len());
    let mut shuffle = rng::substream(config.seed, rng::SHUFFLE);
    let mut sampling = rng::substream(config.seed, rng::SAMPLING);
    let mut steps = Vec::new();
    let mut epochs = vec![dataset_record(&params, examples, 0)];
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut losses = Vec::new();
        for group in order.chunks(config.effective_batch()) {
            let micro: Vec<Vec<&TrainingExample>> = group
                .chunks(config.batch_size)
                .map(|c| c.iter().map(|&i| &examples[i]).collect())
                .collect();
            let scale = 1.0 / micro.len() as f64;
            let mut grad = crate::textmodel::GradientBundle::zeros_like(&params);
            let (mut loss, mut expected) = (0.0, 0.0);
            for batch in &micro {
                let (g, stats) = match config.algorithm {
                    Algorithm::Rl => rl_step(batch, &params, &mut sampling)?,
                    Algorithm::Kd => kd_step(batch, &params, config.temperature)?,
                };
                grad.add_assign(&g)?;
                loss += stats.loss * scale;
                expected += stats.expected_reward * scale;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            grad.scale(scale);
            let report = adam_step(&mut params, &grad, &mut optimizer, &adam)?;
            losses.push(loss);
            steps.push(StepRecord {
                epoch,
                step: optimizer.step,
                loss,
                expected_reward: expected,
                lr: report.lr,
                grad_norm: report.grad_norm,
            });
        }
        let mut record = dataset_record(&params, examples, epoch);
        record.mean_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("ropg-{}-epoch{epoch:02}.ckpt", config.algorithm));
            Checkpoint {
                label: format!("ropg-{}", config.algorithm),
                params: params.clone(),
                optimizer: Some(optimizer.clone()),
            }
            .save(&path)?;
            record.checkpoint = Some(path);
        }
        log::info!(
            "epoch {epoch}: loss {:?} expected reward {:.4} useful mass {:?}",
            record.mean_loss,
            record.expected_reward,
            record.useful_mass
        );
        epochs.push(record);
    }
    Ok(TrainOutput {
        params,
        optimizer,
        steps,
        epochs,
    })
}
