//! Downstream evaluation: classification, rating, and overlap metrics, the
//! per-task `[0, 1]` Eval used as training signal, and corpus aggregates.

mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

pub use rouge::{rouge1, rouge_l};

/// Eval score of one output, with the raw metrics it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub instance_id: String,
    /// Retriever id or doc id the output was produced with.
    pub variant: String,
    pub score: f64,
    pub raw_metrics: BTreeMap<String, f64>,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} golds but {b} predictions")));
    }
    Ok(())
}

/// Case-folded, trimmed label.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn accuracy(golds: &[String], preds: &[String]) -> Result<f64> {
    check_len(golds.len(), preds.len())?;
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = golds
        .iter()
        .zip(preds)
        .filter(|(g, p)| normalize_label(g) == normalize_label(p))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Mean per-class F1 over `classes`; a class never gold nor predicted scores 0.
pub fn f1_macro(golds: &[String], preds: &[String], classes: &[&str]) -> Result<f64> {
    check_len(golds.len(), preds.len())?;
    if classes.is_empty() {
        return Ok(0.0);
    }
    let golds: Vec<String> = golds.iter().map(|g| normalize_label(g)).collect();
    let preds: Vec<String> = preds.iter().map(|p| normalize_label(p)).collect();
    let mut total = 0.0;
    for class in classes {
        let c = normalize_label(class);
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (g, p) in golds.iter().zip(&preds) {
            match (*g == c, *p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fne += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fne;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(total / classes.len() as f64)
}

/// First integer in `text`, clamped to the 1..=5 rating scale.
pub fn parse_rating(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |e| start + e);
    let negative = start > 0 && bytes[start - 1] == b'-';
    // Very long digit runs saturate; they clamp to the scale edge anyway.
    let magnitude: i64 = text[start..end].parse().unwrap_or(i64::MAX);
    let value = if negative { -magnitude } else { magnitude };
    Some(value.clamp(1, 5))
}

fn rating_gold(y: &str) -> Result<i64> {
    y.trim()
        .parse::<i64>()
        .ok()
        .filter(|v| (1..=5).contains(v))
        .ok_or_else(|| Error::Invalid(format!("rating gold `{y}` is not an integer in 1..=5")))
}

fn worst_error(y: i64) -> f64 {
    (y - 1).abs().max((5 - y).abs()) as f64
}

fn rating_errors(golds: &[String], preds: &[String]) -> Result<Vec<f64>> {
    check_len(golds.len(), preds.len())?;
    golds
        .iter()
        .zip(preds)
        .map(|(g, p)| {
            let y = rating_gold(g)?;
            Ok(parse_rating(p).map_or(worst_error(y), |v| (y - v).abs() as f64))
        })
        .collect()
}

/// Mean absolute rating error; unparsable predictions count as the worst case for their gold.
pub fn mae(golds: &[String], preds: &[String]) -> Result<f64> {
    let errs = rating_errors(golds, preds)?;
    if errs.is_empty() {
        return Ok(0.0);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

pub fn rmse(golds: &[String], preds: &[String]) -> Result<f64> {
    let errs = rating_errors(golds, preds)?;
    if errs.is_empty() {
        return Ok(0.0);
    }
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Rating reward: 1 for an exact prediction, 0 at the farthest point of the
/// scale (and for unparsable text), linear in between.
pub fn eval_lamp3(y: i64, prediction: &str) -> f64 {
    let worst = worst_error(y);
    match parse_rating(prediction) {
        Some(v) => (worst - (y - v).abs() as f64) / worst,
        None => 0.0,
    }
}

/// Per-task Eval in `[0, 1]`.
pub fn eval_dispatch(task: TaskKind, y: &str, output: &str) -> f64 {
    match task {
        TaskKind::ProductRating => match rating_gold(y) {
            Ok(y) => eval_lamp3(y, output),
            Err(_) => 0.0,
        },
        t if t.is_generation() => rouge1(y, output),
        _ => f64::from(u8::from(normalize_label(y) == normalize_label(output))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMetric {
    Accuracy,
    F1Macro,
    Mae,
    Rmse,
    Rouge1,
    RougeL,
    /// Mean of per-instance Eval.
    MeanEval,
}

impl CorpusMetric {
    pub fn key(self) -> &'static str {
        match self {
            CorpusMetric::Accuracy => "accuracy",
            CorpusMetric::F1Macro => "f1_macro",
            CorpusMetric::Mae => "mae",
            CorpusMetric::Rmse => "rmse",
            CorpusMetric::Rouge1 => "rouge1",
            CorpusMetric::RougeL => "rouge_l",
            CorpusMetric::MeanEval => "mean_eval",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, CorpusMetric::Mae | CorpusMetric::Rmse)
    }

    /// The metrics reported for a task, headline metric first.
    pub fn for_task(task: TaskKind) -> &'static [CorpusMetric] {
        match task {
            TaskKind::CitationIdent | TaskKind::Synthetic => &[CorpusMetric::Accuracy],
            TaskKind::MovieTag => &[CorpusMetric::Accuracy, CorpusMetric::F1Macro],
            TaskKind::ProductRating => &[CorpusMetric::Mae, CorpusMetric::Rmse],
            _ => &[CorpusMetric::Rouge1, CorpusMetric::RougeL],
        }
    }

    pub fn compute(self, task: TaskKind, golds: &[String], preds: &[String]) -> Result<f64> {
        check_len(golds.len(), preds.len())?;
        let mean = |f: &dyn Fn(&str, &str) -> f64| {
            if golds.is_empty() {
                0.0
            } else {
                golds.iter().zip(preds).map(|(g, p)| f(g, p)).sum::<f64>() / golds.len() as f64
            }
        };
        match self {
            CorpusMetric::Accuracy => accuracy(golds, preds),
            CorpusMetric::F1Macro => f1_macro(golds, preds, task.classes().unwrap_or(&[])),
            CorpusMetric::Mae => mae(golds, preds),
            CorpusMetric::Rmse => rmse(golds, preds),
            CorpusMetric::Rouge1 => Ok(mean(&rouge1)),
            CorpusMetric::RougeL => Ok(mean(&rouge_l)),
            CorpusMetric::MeanEval => Ok(mean(&|g, p| eval_dispatch(task, g, p))),
        }
    }
}

/// Every task metric plus mean Eval, keyed by metric name.
pub fn corpus_metrics(task: TaskKind, golds: &[String], preds: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for &m in CorpusMetric::for_task(task).iter().chain(&[CorpusMetric::MeanEval]) {
        out.insert(m.key().to_string(), m.compute(task, golds, preds)?);
    }
    Ok(out)
}

/// Two-sided exact sign test p-value for `wins` vs `losses` (ties excluded).
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let m = wins.min(losses);
    // Binomial(n, 1/2) tail in log space; 0.5^n underflows for large n.
    let mut log_pmf = n as f64 * 0.5f64.ln();
    let mut tail = 0.0;
    for i in 0..=m {
        tail += log_pmf.exp();
        log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (2.0 * tail).min(1.0)
}

/// Paired comparison of two score vectors: (wins of `a`, losses of `a`, p-value).
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> Result<(usize, usize, f64)> {
    check_len(a.len(), b.len())?;
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    Ok((wins, losses, sign_test(wins, losses)))
}
