use super::{dot, Head, ScorerParams, TokenBag};
use crate::error::{Error, Result};

/// Gradient with the same shape as a [`ScorerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub dim: usize,
    pub embeddings: Vec<f64>,
    pub head: Option<Head>,
}

/// One score whose gradient should be accumulated.
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    /// `encode(query) . encode(doc)`
    Pair { query: &'a TokenBag, doc: &'a TokenBag },
    /// `head . encode(text) + bias`
    Head(&'a TokenBag),
}

impl GradientBundle {
    pub fn zeros_like(params: &ScorerParams) -> Self {
        GradientBundle {
            dim: params.dim(),
            embeddings: vec![0.0; params.embeddings().len()],
            head: params.head().map(|h| Head {
                weights: vec![0.0; h.weights.len()],
                bias: 0.0,
            }),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        let head = self.head.iter().flat_map(|h| h.weights.iter().chain(std::iter::once(&h.bias)));
        self.embeddings.iter().chain(head)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let head = self
            .head
            .iter_mut()
            .flat_map(|h| h.weights.iter_mut().chain(std::iter::once(&mut h.bias)));
        self.embeddings.iter_mut().chain(head)
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        if self.embeddings.len() != other.embeddings.len() || self.head.is_some() != other.head.is_some() {
            return Err(Error::Shape("gradient bundles differ in shape".into()));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `upstream * d(score)/d(params)` for one score.
    pub fn accumulate(&mut self, params: &ScorerParams, input: ScoreInput<'_>, upstream: f64) -> Result<()> {
        if self.embeddings.len() != params.embeddings().len() {
            return Err(Error::Shape("gradient bundle does not match parameters".into()));
        }
        if upstream == 0.0 {
            return Ok(());
        }
        let dim = self.dim;
        match input {
            ScoreInput::Pair { query, doc } => {
                let q = params.encode_bag(query);
                let d = params.encode_bag(doc);
                self.add_rows(query, &d, upstream, dim);
                self.add_rows(doc, &q, upstream, dim);
            }
            ScoreInput::Head(bag) => {
                let head = params
                    .head()
                    .ok_or_else(|| Error::Config("scorer has no linear head".into()))?;
                let enc = params.encode_bag(bag);
                let g = self.head.as_mut().expect("bundle shaped like params");
                for (gw, e) in g.weights.iter_mut().zip(&enc) {
                    *gw += upstream * e;
                }
                g.bias += upstream;
                let h = head.weights.clone();
                self.add_rows(bag, &h, upstream, dim);
            }
        }
        Ok(())
    }

    fn add_rows(&mut self, bag: &TokenBag, vector: &[f64], upstream: f64, dim: usize) {
        for &(id, w) in bag.entries() {
            let row = &mut self.embeddings[id as usize * dim..(id as usize + 1) * dim];
            for (r, v) in row.iter_mut().zip(vector) {
                *r += upstream * w * v;
            }
        }
    }

    /// Inner product with another bundle (used for directional checks).
    pub fn dot(&self, other: &GradientBundle) -> f64 {
        let mut total = dot(&self.embeddings, &other.embeddings);
        if let (Some(a), Some(b)) = (&self.head, &other.head) {
            total += dot(&a.weights, &b.weights) + a.bias * b.bias;
        }
        total
    }
}

/// Gradient of `sum_i upstream[i] * score_i` with respect to all parameters.
pub fn backprop_scores(
    params: &ScorerParams,
    inputs: &[ScoreInput<'_>],
    upstream: &[f64],
) -> Result<GradientBundle> {
    if inputs.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} upstream gradients",
            inputs.len(),
            upstream.len()
        )));
    }
    let mut grad = GradientBundle::zeros_like(params);
    for (input, &u) in inputs.iter().zip(upstream) {
        grad.accumulate(params, *input, u)?;
    }
    Ok(grad)
}
