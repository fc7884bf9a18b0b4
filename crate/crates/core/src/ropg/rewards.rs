use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CandidateSet;
use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::eval_dispatch;
use crate::prompting::Templates;

/// Eval of every candidate's single-entry prompt, plus the baseline (initial top-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub instance_id: String,
    /// `(doc_id, Eval)` in candidate order.
    pub evals: Vec<(String, f64)>,
    pub baseline_doc: String,
    pub baseline_eval: f64,
}

impl RewardEntry {
    /// `Eval(d) - Eval(d_b)`, which is exactly 0 for the baseline itself.
    pub fn reward(&self, doc_id: &str) -> Option<f64> {
        self.evals
            .iter()
            .find(|(d, _)| d == doc_id)
            .map(|(_, e)| e - self.baseline_eval)
    }
}

/// Scores every candidate of one instance. Returns `None` when the baseline
/// document cannot be generated for; other failing documents are dropped.
pub fn precompute_rewards(
    instance: &Instance,
    candidates: &CandidateSet,
    generator: &Generator,
    templates: &Templates,
) -> Result<Option<RewardEntry>> {
    let Some(baseline_doc) = candidates.docs.first() else {
        return Ok(None);
    };
    let mut evals = Vec::with_capacity(candidates.docs.len());
    for doc_id in &candidates.docs {
        let doc = instance.doc(doc_id)?;
        let prompt = templates.build_prompt_from_docs(instance, &[doc])?;
        match generator.generate(&prompt) {
            Ok(out) => evals.push((doc_id.clone(), eval_dispatch(instance.task, &instance.target, &out))),
            Err(e @ Error::Generation { .. }) => {
                if doc_id == baseline_doc {
                    log::warn!("skipping {}: baseline generation failed: {e}", instance.instance_id);
                    return Ok(None);
                }
                log::warn!("dropping {doc_id} from {}: {e}", instance.instance_id);
            }
            Err(e) => return Err(e),
        }
    }
    let baseline_eval = evals[0].1;
    Ok(Some(RewardEntry {
        instance_id: instance.instance_id.clone(),
        evals,
        baseline_doc: baseline_doc.clone(),
        baseline_eval,
    }))
}

/// Reward entries by instance id, optionally backed by a JSON-lines file so
/// interrupted runs resume without regenerating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTable {
    pub entries: BTreeMap<String, RewardEntry>,
    /// Instances skipped because their baseline failed to generate.
    pub skipped: Vec<String>,
}

/// File name keyed by the dataset and the initial parameters.
pub fn reward_table_path(dir: &Path, dataset_digest: &str, params_digest: &str) -> PathBuf {
    dir.join(format!("rewards-{}-{}.jsonl", &dataset_digest[..16], &params_digest[..16]))
}

const CHUNK: usize = 256;

impl RewardTable {
    pub fn load(path: &Path) -> Result<Self> {
        let mut table = RewardTable::default();
        let f = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(table),
            Err(e) => return Err(Error::io(path, e)),
        };
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if let Ok(entry) = serde_json::from_str::<RewardEntry>(&line) {
                table.entries.insert(entry.instance_id.clone(), entry);
            }
        }
        Ok(table)
    }

    pub fn get(&self, instance_id: &str) -> Option<&RewardEntry> {
        self.entries.get(instance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fills in every instance not yet in the table, generating in parallel.
    /// New entries are appended to `path` in instance order, chunk by chunk.
    pub fn complete(
        &mut self,
        work: &[(&Instance, CandidateSet)],
        generator: &Generator,
        templates: &Templates,
        path: Option<&Path>,
    ) -> Result<()> {
        let todo: Vec<&(&Instance, CandidateSet)> = work
            .iter()
            .filter(|(i, _)| !self.entries.contains_key(&i.instance_id))
            .collect();
        for chunk in todo.chunks(CHUNK) {
            let results: Vec<Result<Option<RewardEntry>>> = chunk
                .par_iter()
                .map(|(inst, cands)| precompute_rewards(inst, cands, generator, templates))
                .collect();
            let mut lines = String::new();
            for ((inst, _), r) in chunk.iter().zip(results) {
                match r? {
                    Some(entry) => {
                        lines.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
                        lines.push('\n');
                        self.entries.insert(entry.instance_id.clone(), entry);
                    }
                    None => self.skipped.push(inst.instance_id.clone()),
                }
            }
            if let Some(path) = path {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                f.write_all(lines.as_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }
}
