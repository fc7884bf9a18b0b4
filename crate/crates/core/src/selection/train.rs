use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rspg_step, Mode, SelectionExample, SelectionItem};
use crate::error::{Error, Result};
use crate::rng;
use crate::textmodel::{adam_step, AdamConfig, AdamState, GradientBundle, ScorerParams, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RspgConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for RspgConfig {
    fn default() -> Self {
        RspgConfig {
            epochs: 20,
            batch_size: 8,
            accumulation: 8,
            base_lr: 1e-5,
            warmup_fraction: 0.05,
            clip_norm: 1.0,
            dim: crate::textmodel::DEFAULT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RspgOutput {
    pub params: ScorerParams,
    pub optimizer: AdamState,
    /// Mean loss per epoch, initial parameters first.
    pub epoch_losses: Vec<f64>,
}

/// Builds a vocabulary over the training inputs, initializes a scorer with a
/// head, and trains it for `config.epochs` against the Eval-softmax targets.
pub fn train_rspg(examples: &[SelectionExample], mode: Mode, config: &RspgConfig) -> Result<RspgOutput> {
    if config.batch_size == 0 || config.accumulation == 0 || config.dim == 0 {
        return Err(Error::Config("batch size, accumulation and dim must be positive".into()));
    }
    let texts: Vec<String> = examples
        .iter()
        .flat_map(|e| (0..e.retrievers.len()).map(move |i| e.selection_text(i, mode)))
        .collect();
    let vocab = Arc::new(Vocabulary::build(texts.iter().map(String::as_str)));
    let mut params = ScorerParams::init(vocab, config.dim, true, &mut rng::substream(config.seed, rng::INIT));
    let items: Vec<SelectionItem> = examples.iter().map(|e| SelectionItem::new(&params, e, mode)).collect();

    let effective = config.batch_size * config.accumulation;
    let total = (config.epochs * items.len().div_ceil(effective)) as u64;
    let adam = AdamConfig {
        warmup_fraction: config.warmup_fraction,
        clip_norm: Some(config.clip_norm),
        ..AdamConfig::new(config.base_lr, total)
    };
    let mut optimizer = AdamState::new(&params);
    let mut shuffle = rng::substream(config.seed, rng::SHUFFLE);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let all: Vec<&SelectionItem> = items.iter().collect();
    let mut epoch_losses = vec![rspg_step(&all, &params)?.1];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        for group in order.chunks(effective) {
            let micro: Vec<Vec<&SelectionItem>> = group
                .chunks(config.batch_size)
                .map(|c| c.iter().map(|&i| &items[i]).collect())
                .collect();
            let scale = 1.0 / micro.len() as f64;
            let mut grad = GradientBundle::zeros_like(&params);
            let mut loss = 0.0;
            for batch in &micro {
                let (g, l) = rspg_step(batch, &params)?;
                grad.add_assign(&g)?;
                loss += l * scale;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("selection loss at epoch {epoch}")));
            }
            grad.scale(scale);
            adam_step(&mut params, &grad, &mut optimizer, &adam)?;
        }
        let loss = rspg_step(&all, &params)?.1;
        log::info!("rspg-{mode} epoch {epoch}: loss {loss:.5}");
        epoch_losses.push(loss);
    }
    Ok(RspgOutput {
        params,
        optimizer,
        epoch_losses,
    })
}
