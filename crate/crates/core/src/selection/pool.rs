use rayon::prelude::*;

use super::qpp::{rrf_fuse, RRF_K};
use super::SelectionExample;
use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::eval_dispatch;
use crate::prompting::{PromptParts, Templates};
use crate::retrieval::{
    bm25_retrieve, no_retrieval, no_retrieval_view, recency_retrieve, Bm25Index, DenseRetriever, RenderedProfile,
    RetrieverId, ScoredList,
};
use crate::textmodel::words;

/// The configured retrievers. Trained retrievers are optional so single
/// retrievers can be evaluated before training; selection needs all six.
#[derive(Debug, Clone)]
pub struct RetrieverPool {
    pub templates: Templates,
    pub zero_shot: DenseRetriever,
    pub rl: Option<DenseRetriever>,
    pub kd: Option<DenseRetriever>,
}

impl RetrieverPool {
    /// Pool members in fixed order, skipping untrained retrievers.
    pub fn members(&self) -> Vec<RetrieverId> {
        RetrieverId::POOL
            .into_iter()
            .filter(|id| match id {
                RetrieverId::RopgRl => self.rl.is_some(),
                RetrieverId::RopgKd => self.kd.is_some(),
                _ => true,
            })
            .collect()
    }

    pub fn require_full(&self) -> Result<()> {
        if self.rl.is_none() || self.kd.is_none() {
            return Err(Error::Config("retriever selection needs both trained retrievers".into()));
        }
        Ok(())
    }

    fn dense(&self, id: RetrieverId) -> Result<&DenseRetriever> {
        let found = match id {
            RetrieverId::DenseZeroShot => Some(&self.zero_shot),
            RetrieverId::RopgRl => self.rl.as_ref(),
            RetrieverId::RopgKd => self.kd.as_ref(),
            _ => None,
        };
        found.ok_or_else(|| Error::Config(format!("retriever {id} is not available")))
    }

    pub fn render(&self, instance: &Instance) -> Result<RenderedProfile> {
        RenderedProfile::new(instance.profile.clone(), instance.task, &self.templates)
    }

    pub fn retrieve(
        &self,
        id: RetrieverId,
        instance: &Instance,
        profile: &RenderedProfile,
        k: usize,
    ) -> Result<ScoredList> {
        let query = self.templates.make_query(instance.task, &instance.input_text);
        Ok(match id {
            RetrieverId::None => no_retrieval(),
            RetrieverId::Recency => recency_retrieve(&profile.profile, k),
            RetrieverId::Bm25 => bm25_retrieve(&Bm25Index::build(profile), &query, k),
            RetrieverId::Rrf => {
                let n = profile.profile.len();
                let lists = self
                    .members()
                    .into_iter()
                    .map(|m| self.retrieve(m, instance, profile, n))
                    .collect::<Result<Vec<_>>>()?;
                rrf_fuse(&lists, RRF_K).top(k)
            }
            dense => self.dense(dense)?.retrieve(&query, profile, k),
        })
    }

    /// The whole profile as scored by `id`; all zeros for no retrieval.
    pub fn qpp_view(&self, id: RetrieverId, instance: &Instance, profile: &RenderedProfile) -> Result<ScoredList> {
        if id == RetrieverId::None {
            return Ok(no_retrieval_view(&profile.profile));
        }
        self.retrieve(id, instance, profile, profile.profile.len())
    }

    /// Prompt pieces for `instance` built from `id`'s top-`k` list, fitted to the prompt cap.
    pub fn prompt_parts(
        &self,
        id: RetrieverId,
        instance: &Instance,
        profile: &RenderedProfile,
        k: usize,
    ) -> Result<PromptParts> {
        let list = self.retrieve(id, instance, profile, k)?;
        let docs = list.doc_ids().map(|d| instance.doc(d)).collect::<Result<Vec<_>>>()?;
        let mut parts = self.templates.prompt_parts(instance, &docs)?;
        parts.fit(self.templates.token_cap);
        Ok(parts)
    }
}

struct Staged {
    parts: Vec<PromptParts>,
    views: Vec<Vec<f64>>,
    query_len: usize,
}

/// Runs every pool retriever on every instance and generates for each prompt.
/// Instances where any generation fails are dropped and counted; if all are
/// dropped, the first generation error is returned.
pub fn build_examples(
    instances: &[Instance],
    pool: &RetrieverPool,
    generator: &Generator,
    k: usize,
) -> Result<(Vec<SelectionExample>, usize)> {
    let members = pool.members();
    let staged: Vec<Staged> = instances
        .par_iter()
        .map(|inst| {
            let profile = pool.render(inst)?;
            let mut parts = Vec::with_capacity(members.len());
            let mut views = Vec::with_capacity(members.len());
            for &id in &members {
                parts.push(pool.prompt_parts(id, inst, &profile, k)?);
                views.push(pool.qpp_view(id, inst, &profile)?.scores());
            }
            let query_len = words(&pool.templates.make_query(inst.task, &inst.input_text)).len();
            Ok(Staged {
                parts,
                views,
                query_len,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prompts: Vec<String> = staged.iter().flat_map(|s| s.parts.iter().map(PromptParts::render)).collect();
    let mut outputs = generator.generate_many(&prompts).into_iter();

    let mut examples = Vec::with_capacity(instances.len());
    let mut dropped = 0;
    let mut first_failure = None;
    for (inst, stage) in instances.iter().zip(staged) {
        let mut outs = Vec::with_capacity(members.len());
        let mut failed = false;
        for _ in 0..members.len() {
            match outputs.next().expect("one output per prompt") {
                Ok(o) => outs.push(o),
                Err(e @ Error::Generation { .. }) => {
                    log::warn!("dropping {} from selection: {e}", inst.instance_id);
                    failed = true;
                    first_failure.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            dropped += 1;
            continue;
        }
        let evals = outs.iter().map(|o| eval_dispatch(inst.task, &inst.target, o)).collect();
        examples.push(SelectionExample {
            instance_id: inst.instance_id.clone(),
            target: inst.target.clone(),
            retrievers: members.clone(),
            parts: stage.parts,
            outputs: outs,
            evals,
            qpp_views: stage.views,
            query_len: stage.query_len,
        });
    }
    if let (true, Some(e)) = (examples.is_empty(), first_failure) {
        return Err(e);
    }
    Ok((examples, dropped))
}
