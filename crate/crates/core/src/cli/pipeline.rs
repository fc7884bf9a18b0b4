use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::corpus::{generate_synthetic, load_dataset, Dataset, Instance, PlantedBest, SynonymTable, TaskKind};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::{corpus_metrics, eval_dispatch, CorpusMetric};
use crate::prompting::Templates;
use crate::retrieval::{DenseRetriever, RenderedProfile, RetrieverId};
use crate::rng;
use crate::ropg::{self, build_candidates, reward_table_path, Algorithm, CandidateSet, RewardTable, TrainingExample};
use crate::selection::{
    build_examples, evaluate_selections, oracle_bounds, qpp_select, select, selection_scores, train_rspg,
    winning_rate, Mode, OracleBounds, QppMethod, RetrieverPool, SelectionExample,
};
use crate::textmodel::{Checkpoint, Pooling, ScorerParams, Vocabulary};

/// What `eval` scores on the held-out split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalTarget {
    Retriever(RetrieverId),
    Rspg(Mode),
    Qpp(QppMethod),
    Oracle,
}

impl EvalTarget {
    pub fn name(&self) -> String {
        match self {
            EvalTarget::Retriever(id) => id.key().to_string(),
            EvalTarget::Rspg(mode) => format!("rspg-{mode}"),
            EvalTarget::Qpp(m) => format!("qpp-{}", m.name()),
            EvalTarget::Oracle => "oracle".into(),
        }
    }

    /// Parses a `--selector` value: `rspg-pre`, `rspg-post`, `rrf` or `qpp:<method>`.
    pub fn parse_selector(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        match norm.as_str() {
            "rspg-pre" | "rspg_pre" => Ok(EvalTarget::Rspg(Mode::Pre)),
            "rspg-post" | "rspg_post" => Ok(EvalTarget::Rspg(Mode::Post)),
            "rrf" => Ok(EvalTarget::Retriever(RetrieverId::Rrf)),
            _ => match norm.strip_prefix("qpp:") {
                Some(m) => Ok(EvalTarget::Qpp(m.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown selector `{s}` (expected rspg-pre, rspg-post, rrf or qpp:<method>)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub retriever: RetrieverId,
    pub output: String,
    pub eval: f64,
}

/// One `eval` result. Everything in it is a function of config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub task: TaskKind,
    pub config_digest: String,
    pub dataset_digest: String,
    pub generator: String,
    /// Checkpoint file name to SHA-256 of its bytes.
    pub checkpoints: BTreeMap<String, String>,
    pub instances: usize,
    pub dropped: usize,
    pub metrics: BTreeMap<String, f64>,
    pub success_rate: Option<f64>,
    pub winning_rates: Option<BTreeMap<RetrieverId, f64>>,
    pub oracle: Option<BTreeMap<String, OracleBounds>>,
    pub rows: Vec<InstanceRow>,
}

impl EvalReport {
    pub fn evals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub task: TaskKind,
    pub instances: usize,
    pub train: usize,
    pub test: usize,
    pub skipped_empty_profiles: usize,
    pub profile_size_mean: f64,
    pub profile_size_std: f64,
    pub planted: BTreeMap<PlantedBest, usize>,
    pub digest: String,
}

pub struct RopgRun {
    pub checkpoint: PathBuf,
    pub output: ropg::TrainOutput,
    pub examples: usize,
    pub skipped: usize,
}

pub struct RspgRun {
    pub checkpoint: PathBuf,
    pub output: crate::selection::RspgOutput,
    pub examples: usize,
    pub dropped: usize,
}

/// Loaded dataset, generator and initial scorer for one configuration.
pub struct Experiment {
    pub config: RunConfig,
    pub templates: Templates,
    pub dataset: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub synonyms: Option<SynonymTable>,
    pub generator: Generator,
    /// Shared starting point of every dense retriever.
    pub initial: Arc<ScorerParams>,
    pub idf: Pooling,
}

pub fn load_data(config: &RunConfig) -> Result<(Dataset, Option<SynonymTable>)> {
    if config.task == TaskKind::Synthetic {
        let bench = generate_synthetic(&config.synthetic_spec()?)?;
        return Ok((bench.dataset, Some(bench.synonyms)));
    }
    let (q, o) = config
        .questions
        .as_deref()
        .zip(config.outputs.as_deref())
        .ok_or_else(|| Error::Config("`questions` and `outputs` are required".into()))?;
    Ok((load_dataset(q, o, config.task)?, None))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Experiment {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let templates = match &config.templates {
            Some(p) => Templates::load(p)?,
            None => Templates::shipped().clone(),
        };
        let (dataset, synonyms) = load_data(&config)?;
        let (train, test) = dataset.split_holdout(config.holdout_fraction);
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let generator = Generator::from_config(&config.generator_config(), synonyms.clone())?;

        let rendered: Vec<RenderedProfile> = train
            .instances
            .iter()
            .map(|i| RenderedProfile::new(i.profile.clone(), i.task, &templates))
            .collect::<Result<_>>()?;
        let mut texts: Vec<String> = train
            .instances
            .iter()
            .map(|i| templates.make_query(i.task, &i.input_text))
            .collect();
        texts.extend(rendered.into_iter().flat_map(|r| r.texts));
        let vocab = Arc::new(Vocabulary::build(texts.iter().map(String::as_str)));
        let idf = Pooling::idf(&vocab, texts.iter().map(String::as_str));
        let initial = Arc::new(ScorerParams::init(
            vocab,
            config.dim,
            false,
            &mut rng::substream(config.seed, rng::INIT),
        ));
        Ok(Experiment {
            config,
            templates,
            dataset,
            train,
            test,
            synonyms,
            generator,
            initial,
            idf,
        })
    }

    pub fn summary(&self) -> DatasetSummary {
        let (mean, std) = self.dataset.profile_size_stats();
        DatasetSummary {
            task: self.dataset.task,
            instances: self.dataset.len(),
            train: self.train.len(),
            test: self.test.len(),
            skipped_empty_profiles: self.dataset.skipped_empty_profiles,
            profile_size_mean: mean,
            profile_size_std: std,
            planted: self.dataset.planted_counts(),
            digest: self.dataset.digest(),
        }
    }

    pub fn zero_shot(&self) -> DenseRetriever {
        DenseRetriever {
            id: RetrieverId::DenseZeroShot,
            params: self.initial.clone(),
            pooling: self.idf.clone(),
        }
    }

    pub fn ropg_checkpoint(&self, algorithm: Algorithm) -> PathBuf {
        self.config.checkpoint_dir().join(format!("ropg-{algorithm}.ckpt"))
    }

    pub fn rspg_checkpoint(&self, mode: Mode) -> PathBuf {
        self.config.checkpoint_dir().join(format!("rspg-{mode}.ckpt"))
    }

    pub fn trained(&self, algorithm: Algorithm) -> Result<DenseRetriever> {
        let ck = Checkpoint::load(&self.ropg_checkpoint(algorithm))?;
        Ok(self.trained_from(algorithm, ck.params))
    }

    pub fn trained_from(&self, algorithm: Algorithm, params: ScorerParams) -> DenseRetriever {
        DenseRetriever {
            id: algorithm.retriever_id(),
            params: Arc::new(params),
            pooling: Pooling::Mean,
        }
    }

    /// Pool with whichever trained retrievers have checkpoints.
    pub fn pool(&self) -> Result<RetrieverPool> {
        let load = |algo| match self.trained(algo) {
            Ok(r) => Ok(Some(r)),
            Err(Error::MissingCheckpoint(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(RetrieverPool {
            templates: self.templates.clone(),
            zero_shot: self.zero_shot(),
            rl: load(Algorithm::Rl)?,
            kd: load(Algorithm::Kd)?,
        })
    }

    /// Candidate sets and precomputed rewards for the training split.
    pub fn ropg_examples(&self) -> Result<(Vec<TrainingExample>, usize)> {
        let l = self.config.candidates;
        let staged: Vec<(RenderedProfile, CandidateSet)> = self
            .train
            .instances
            .par_iter()
            .map(|inst| {
                let profile = RenderedProfile::new(inst.profile.clone(), inst.task, &self.templates)?;
                let cands = build_candidates(inst, &profile, &self.initial, &self.templates, l);
                Ok((profile, cands))
            })
            .collect::<Result<_>>()?;
        let path = reward_table_path(
            &self.config.cache_dir().join("rewards"),
            &self.train.digest(),
            &format!("{}{l:04}", self.initial.digest()),
        );
        let mut table = RewardTable::load(&path)?;
        let work: Vec<(&Instance, CandidateSet)> = self
            .train
            .instances
            .iter()
            .zip(&staged)
            .map(|(i, (_, c))| (i, c.clone()))
            .collect();
        table.complete(&work, &self.generator, &self.templates, Some(&path))?;
        let examples: Vec<TrainingExample> = self
            .train
            .instances
            .par_iter()
            .zip(&staged)
            .filter_map(|(inst, (profile, _))| {
                table
                    .get(&inst.instance_id)
                    .map(|entry| TrainingExample::new(inst, profile, entry, &self.initial, &self.templates))
            })
            .collect::<Result<_>>()?;
        let skipped = self.train.len() - examples.len();
        if examples.is_empty() {
            return Err(Error::Generation {
                prompt_hash: String::new(),
                message: format!("no reward could be generated ({skipped} instances skipped)"),
            });
        }
        Ok((examples, skipped))
    }

    pub fn train_ropg(&self, algorithm: Algorithm) -> Result<RopgRun> {
        let (examples, skipped) = self.ropg_examples()?;
        let config = self.config.ropg(algorithm);
        let dir = self.config.checkpoint_dir();
        let output = ropg::train(&examples, &self.initial, &config, Some(&dir))?;
        let checkpoint = self.ropg_checkpoint(algorithm);
        Checkpoint {
            label: format!("ropg-{algorithm}"),
            params: output.params.clone(),
            optimizer: Some(output.optimizer.clone()),
        }
        .save(&checkpoint)?;
        write_json(&dir.join(format!("ropg-{algorithm}.log.json")), &output.epochs)?;
        Ok(RopgRun {
            checkpoint,
            output,
            examples: examples.len(),
            skipped,
        })
    }

    /// Pool outputs for `instances`; needs both trained retrievers.
    pub fn selection_examples(&self, instances: &[Instance]) -> Result<(Vec<SelectionExample>, usize)> {
        let pool = self.pool()?;
        pool.require_full()?;
        build_examples(instances, &pool, &self.generator, self.config.top_k)
    }

    pub fn train_rspg(&self, mode: Mode) -> Result<RspgRun> {
        let (examples, dropped) = self.selection_examples(&self.train.instances)?;
        let output = train_rspg(&examples, mode, &self.config.rspg())?;
        let checkpoint = self.rspg_checkpoint(mode);
        Checkpoint {
            label: format!("rspg-{mode}"),
            params: output.params.clone(),
            optimizer: Some(output.optimizer.clone()),
        }
        .save(&checkpoint)?;
        write_json(
            &self.config.checkpoint_dir().join(format!("rspg-{mode}.log.json")),
            &output.epoch_losses,
        )?;
        Ok(RspgRun {
            checkpoint,
            output,
            examples: examples.len(),
            dropped,
        })
    }

    fn checkpoint_digests(&self, names: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        names
            .iter()
            .map(|p| {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, file_digest(p)?))
            })
            .collect()
    }

    fn report_base(&self, name: String, checkpoints: &[PathBuf]) -> Result<EvalReport> {
        Ok(EvalReport {
            name,
            task: self.test.task,
            config_digest: self.config.digest(),
            dataset_digest: self.dataset.digest(),
            generator: self.generator.identity().to_string(),
            checkpoints: self.checkpoint_digests(checkpoints)?,
            instances: 0,
            dropped: 0,
            metrics: BTreeMap::new(),
            success_rate: None,
            winning_rates: None,
            oracle: None,
            rows: Vec::new(),
        })
    }

    /// Scores `target` on the held-out split.
    pub fn eval(&self, target: EvalTarget) -> Result<EvalReport> {
        let instances = &self.test.instances;
        if instances.is_empty() {
            return Err(Error::Config("held-out split is empty".into()));
        }
        let task = self.test.task;
        match target {
            EvalTarget::Retriever(id) => {
                let mut ckpts = Vec::new();
                for (rid, algo) in [(RetrieverId::RopgRl, Algorithm::Rl), (RetrieverId::RopgKd, Algorithm::Kd)] {
                    if id == rid || id == RetrieverId::Rrf {
                        let path = self.ropg_checkpoint(algo);
                        if !path.exists() {
                            return Err(Error::MissingCheckpoint(path));
                        }
                        ckpts.push(path);
                    }
                }
                let pool = self.pool()?;
                let prompts: Vec<String> = instances
                    .par_iter()
                    .map(|inst| {
                        let profile = pool.render(inst)?;
                        Ok(pool.prompt_parts(id, inst, &profile, self.config.top_k)?.render())
                    })
                    .collect::<Result<_>>()?;
                let outputs = self.generator.generate_many(&prompts);
                let mut report = self.report_base(target.name(), &ckpts)?;
                let mut golds = Vec::new();
                let mut preds = Vec::new();
                let mut first_failure = None;
                for (inst, out) in instances.iter().zip(outputs) {
                    let output = match out {
                        Ok(o) => o,
                        Err(e @ Error::Generation { .. }) => {
                            log::warn!("dropping {}: {e}", inst.instance_id);
                            report.dropped += 1;
                            first_failure.get_or_insert(e);
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    report.rows.push(InstanceRow {
                        instance_id: inst.instance_id.clone(),
                        retriever: id,
                        eval: eval_dispatch(task, &inst.target, &output),
                        output: output.clone(),
                    });
                    golds.push(inst.target.clone());
                    preds.push(output);
                }
                if let (true, Some(e)) = (report.rows.is_empty(), first_failure) {
                    return Err(e);
                }
                report.instances = report.rows.len();
                report.metrics = corpus_metrics(task, &golds, &preds)?;
                Ok(report)
            }
            EvalTarget::Rspg(_) | EvalTarget::Qpp(_) | EvalTarget::Oracle => {
                let mut ckpts = vec![self.ropg_checkpoint(Algorithm::Rl), self.ropg_checkpoint(Algorithm::Kd)];
                let rspg = match target {
                    EvalTarget::Rspg(mode) => {
                        let path = self.rspg_checkpoint(mode);
                        let ck = Checkpoint::load(&path)?;
                        ckpts.push(path);
                        Some((mode, ck.params))
                    }
                    _ => None,
                };
                for p in &ckpts {
                    if !p.exists() {
                        return Err(Error::MissingCheckpoint(p.clone()));
                    }
                }
                let (examples, dropped) = self.selection_examples(instances)?;
                self.selection_report(target, &examples, dropped, rspg.as_ref().map(|(m, p)| (*m, p)), &ckpts)
            }
        }
    }

    /// Report for a selector over precomputed pool outputs.
    pub fn selection_report(
        &self,
        target: EvalTarget,
        examples: &[SelectionExample],
        dropped: usize,
        rspg: Option<(Mode, &ScorerParams)>,
        checkpoints: &[PathBuf],
    ) -> Result<EvalReport> {
        let task = self.test.task;
        let mut report = self.report_base(target.name(), checkpoints)?;
        report.dropped = dropped;
        report.instances = examples.len();
        let winning = winning_rate(examples);
        if let Some(first) = examples.first() {
            report.winning_rates = Some(first.retrievers.iter().copied().zip(winning).collect());
        }
        let mut bounds = BTreeMap::new();
        for &m in CorpusMetric::for_task(task).iter().chain(&[CorpusMetric::MeanEval]) {
            bounds.insert(m.key().to_string(), oracle_bounds(examples, task, m)?);
        }
        report.oracle = Some(bounds);
        let selections: Vec<usize> = match target {
            EvalTarget::Oracle => return Ok(report),
            EvalTarget::Qpp(method) => examples.iter().map(|e| qpp_select(method, e)).collect(),
            EvalTarget::Rspg(mode) => {
                let (m, params) = rspg.ok_or_else(|| Error::Config("selection model not loaded".into()))?;
                debug_assert_eq!(m, mode);
                examples
                    .par_iter()
                    .map(|e| Ok(select(&selection_scores(params, e, mode)?)))
                    .collect::<Result<_>>()?
            }
            EvalTarget::Retriever(id) => {
                let i = examples
                    .first()
                    .and_then(|e| e.retrievers.iter().position(|r| *r == id))
                    .ok_or_else(|| Error::Config(format!("{id} is not in the pool")))?;
                vec![i; examples.len()]
            }
        };
        let summary = evaluate_selections(&report.name, &selections, examples, task)?;
        report.success_rate = Some(summary.success_rate);
        report.metrics = summary.metrics;
        report.rows = selections
            .iter()
            .zip(examples)
            .map(|(&s, e)| InstanceRow {
                instance_id: e.instance_id.clone(),
                retriever: e.retrievers[s],
                output: e.outputs[s].clone(),
                eval: e.evals[s],
            })
            .collect();
        Ok(report)
    }

    /// Fraction of instances planted as `best` whose useful document is ranked
    /// first by `retriever`.
    pub fn useful_top1(&self, retriever: &DenseRetriever, instances: &[Instance], best: PlantedBest) -> Result<f64> {
        let hits: Vec<bool> = instances
            .par_iter()
            .filter_map(|inst| {
                let planted = inst.planted.as_ref()?;
                let useful = planted.useful_doc.as_ref()?;
                (planted.best == best).then_some((inst, useful))
            })
            .map(|(inst, useful)| {
                let profile = RenderedProfile::new(inst.profile.clone(), inst.task, &self.templates)?;
                let query = self.templates.make_query(inst.task, &inst.input_text);
                let top = retriever.retrieve(&query, &profile, 1);
                let hit = top.doc_ids().next() == Some(useful.as_str());
                Ok(hit)
            })
            .collect::<Result<_>>()?;
        if hits.is_empty() {
            return Ok(0.0);
        }
        Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        record: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Markdown table over every saved report, one row per report.
pub fn render_summary(reports: &[EvalReport]) -> String {
    let mut metric_keys: Vec<&str> = Vec::new();
    for r in reports {
        let bound_keys = r.oracle.iter().flat_map(|o| o.keys());
        for k in r.metrics.keys().chain(bound_keys) {
            if !metric_keys.contains(&k.as_str()) {
                metric_keys.push(k);
            }
        }
    }
    let mut out = String::from("| run | n |");
    for k in &metric_keys {
        out.push_str(&format!(" {k} |"));
    }
    out.push_str(" success |\n|---|---|");
    out.push_str(&"---|".repeat(metric_keys.len() + 1));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} | {} |", r.name, r.instances));
        for k in &metric_keys {
            match r.metrics.get(*k) {
                Some(v) => out.push_str(&format!(" {v:.4} |")),
                None => out.push_str(" - |"),
            }
        }
        match r.success_rate {
            Some(s) => out.push_str(&format!(" {s:.4} |\n")),
            None => out.push_str(" - |\n"),
        }
        if let Some(oracle) = &r.oracle {
            if r.name == "oracle" {
                for (bound, pick) in [("lower", 0), ("upper", 1)] {
                    out.push_str(&format!("| oracle-{bound} | {} |", r.instances));
                    for k in &metric_keys {
                        match oracle.get(*k) {
                            Some(b) => out.push_str(&format!(" {:.4} |", if pick == 0 { b.lower } else { b.upper })),
                            None => out.push_str(" - |"),
                        }
                    }
                    out.push_str(" - |\n");
                }
            }
        }
    }
    out
}
