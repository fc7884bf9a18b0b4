use super::{GradientBundle, ScorerParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_fraction: f64,
    pub total_steps: u64,
    /// Global L2 norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        AdamConfig {
            base_lr,
            warmup_fraction: 0.05,
            total_steps,
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).floor() as u64
    }

    /// Learning rate for 0-based step `step`: linear ramp from 0 over the
    /// warmup, then linear decay reaching 0 at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.warmup_steps();
        let t = self.total_steps;
        if step < w {
            self.base_lr * step as f64 / w as f64
        } else if step >= t {
            0.0
        } else {
            self.base_lr * (t - step) as f64 / (t - w) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: GradientBundle,
    pub v: GradientBundle,
}

impl AdamState {
    pub fn new(params: &ScorerParams) -> Self {
        AdamState {
            step: 0,
            m: GradientBundle::zeros_like(params),
            v: GradientBundle::zeros_like(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub grad_norm: f64,
}

/// Rescales `grad` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut GradientBundle, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm && norm > 0.0 {
        grad.scale(max_norm / norm);
    }
    norm
}

/// One Adam update that descends `grads`. Non-finite gradients are rejected
/// before anything is modified.
pub fn adam_step(
    params: &mut ScorerParams,
    grads: &GradientBundle,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<StepReport> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if grads.embeddings.len() != params.embeddings().len()
        || grads.head.is_some() != params.head().is_some()
        || state.m.embeddings.len() != grads.embeddings.len()
    {
        return Err(Error::Shape("gradient does not match parameters".into()));
    }
    let mut g = grads.clone();
    let grad_norm = match cfg.clip_norm {
        Some(max) => clip_global_norm(&mut g, max),
        None => g.norm(),
    };
    let lr = cfg.lr_at(state.step);
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    };

    for (((p, g), m), v) in params
        .embeddings_mut()
        .iter_mut()
        .zip(&g.embeddings)
        .zip(state.m.embeddings.iter_mut())
        .zip(state.v.embeddings.iter_mut())
    {
        update(p, *g, m, v);
    }
    if let (Some(h), Some(gh), Some(mh), Some(vh)) =
        (params.head_mut(), g.head.as_ref(), state.m.head.as_mut(), state.v.head.as_mut())
    {
        for (((p, g), m), v) in h
            .weights
            .iter_mut()
            .zip(&gh.weights)
            .zip(mh.weights.iter_mut())
            .zip(vh.weights.iter_mut())
        {
            update(p, *g, m, v);
        }
        update(&mut h.bias, gh.bias, &mut mh.bias, &mut vh.bias);
    }
    Ok(StepReport { lr, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::textmodel::Vocabulary;
    use std::sync::Arc;

    fn params() -> ScorerParams {
        let vocab = Arc::new(Vocabulary::build(["a b c"]));
        ScorerParams::init(vocab, 4, true, &mut substream(0, "init"))
    }

    #[test]
    fn warmup_schedule() {
        let cfg = AdamConfig::new(1e-5, 100);
        assert_eq!(cfg.warmup_steps(), 5);
        assert!((cfg.lr_at(1) - 2e-6).abs() < 1e-18);
        assert_eq!(cfg.lr_at(0), 0.0);
        assert_eq!(cfg.lr_at(5), 1e-5);
        assert!((cfg.lr_at(55) - 1e-5 * 45.0 / 95.0).abs() < 1e-18);
        assert_eq!(cfg.lr_at(100), 0.0);
    }

    #[test]
    fn clipping_scales_to_unit_norm() {
        let p = params();
        let mut g = GradientBundle::zeros_like(&p);
        g.embeddings[0] = 6.0;
        g.embeddings[1] = 8.0;
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 10.0).abs() < 1e-12);
        assert!((g.norm() - 1.0).abs() < 1e-9);
        assert!((g.embeddings[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = params();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let mut g = GradientBundle::zeros_like(&p);
        g.embeddings[3] = f64::NAN;
        let r = adam_step(&mut p, &g, &mut state, &AdamConfig::new(0.1, 10));
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = params();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let mut cfg = AdamConfig::new(0.01, 10);
        cfg.warmup_fraction = 0.0;
        let mut g = GradientBundle::zeros_like(&p);
        g.embeddings[4] = 0.5;
        g.embeddings[5] = -0.25;
        let report = adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        assert_eq!(report.lr, 0.01);
        // Bias-corrected first Adam step has magnitude lr (up to eps).
        assert!((before.embeddings()[4] - p.embeddings()[4] - 0.01).abs() < 1e-8);
        assert!((p.embeddings()[5] - before.embeddings()[5] - 0.01).abs() < 1e-8);
        assert_eq!(p.embeddings()[6], before.embeddings()[6]);
    }
}
