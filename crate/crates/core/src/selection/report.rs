use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::qpp::argmax;
use super::SelectionExample;
use crate::corpus::TaskKind;
use crate::error::{Error, Result};
use crate::metrics::{corpus_metrics, CorpusMetric};
use crate::retrieval::RetrieverId;

fn is_best(example: &SelectionExample, i: usize) -> bool {
    let max = example.evals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    example.evals[i] == max
}

/// Fraction of instances whose chosen retriever ties the best Eval.
pub fn success_rate(selections: &[usize], examples: &[SelectionExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = selections
        .iter()
        .zip(examples)
        .filter(|(&s, e)| is_best(e, s))
        .count();
    hits as f64 / examples.len() as f64
}

/// Per pool position, the fraction of instances where it ties the best Eval.
pub fn winning_rate(examples: &[SelectionExample]) -> Vec<f64> {
    let Some(first) = examples.first() else {
        return Vec::new();
    };
    (0..first.retrievers.len())
        .map(|i| examples.iter().filter(|e| is_best(e, i)).count() as f64 / examples.len() as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBounds {
    /// Metric when every instance uses its worst retriever.
    pub lower: f64,
    /// Metric when every instance uses its best retriever.
    pub upper: f64,
}

fn worst_index(evals: &[f64]) -> usize {
    let neg: Vec<f64> = evals.iter().map(|e| -e).collect();
    argmax(&neg)
}

/// Corpus `metric` under per-instance worst and best Eval choices. For error
/// metrics the "upper" bound is the numerically smaller one.
pub fn oracle_bounds(examples: &[SelectionExample], task: TaskKind, metric: CorpusMetric) -> Result<OracleBounds> {
    let golds: Vec<String> = examples.iter().map(|e| e.target.clone()).collect();
    let pick = |choose: &dyn Fn(&[f64]) -> usize| -> Vec<String> {
        examples.iter().map(|e| e.outputs[choose(&e.evals)].clone()).collect()
    };
    Ok(OracleBounds {
        lower: metric.compute(task, &golds, &pick(&worst_index))?,
        upper: metric.compute(task, &golds, &pick(&argmax))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSelection {
    pub instance_id: String,
    pub chosen: RetrieverId,
    pub evals: BTreeMap<RetrieverId, f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSummary {
    pub selector: String,
    pub success_rate: f64,
    pub metrics: BTreeMap<String, f64>,
    pub instances: Vec<InstanceSelection>,
}

/// Per-instance records and corpus metrics for one selector's choices.
pub fn evaluate_selections(
    selector: &str,
    selections: &[usize],
    examples: &[SelectionExample],
    task: TaskKind,
) -> Result<SelectorSummary> {
    if selections.len() != examples.len() {
        return Err(Error::Shape(format!(
            "{} selections for {} examples",
            selections.len(),
            examples.len()
        )));
    }
    let golds: Vec<String> = examples.iter().map(|e| e.target.clone()).collect();
    let outputs: Vec<String> = selections
        .iter()
        .zip(examples)
        .map(|(&s, e)| e.outputs[s].clone())
        .collect();
    let instances = selections
        .iter()
        .zip(examples)
        .map(|(&s, e)| InstanceSelection {
            instance_id: e.instance_id.clone(),
            chosen: e.retrievers[s],
            evals: e.retrievers.iter().copied().zip(e.evals.iter().copied()).collect(),
            success: is_best(e, s),
        })
        .collect();
    Ok(SelectorSummary {
        selector: selector.to_string(),
        success_rate: success_rate(selections, examples),
        metrics: corpus_metrics(task, &golds, &outputs)?,
        instances,
    })
}
