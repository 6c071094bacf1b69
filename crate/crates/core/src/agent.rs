//! Observe, plan and execute for a batch of source entities.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::executor::{execute, AlignmentOutcome, ExecConfig, ExecError};
use crate::kg::{AttributeWhitelist, Iri, KnowledgeGraph};
use crate::llm::{Gateway, Tag, Usage};
use crate::planner::{PlanningObservation, PlanningPolicy, ToolPath};
use crate::retrieval::CandidateMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Observe,
    Plan,
    Execute,
    Reward,
    Rewrite,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Observe => "observe",
            Stage::Plan => "plan",
            Stage::Execute => "execute",
            Stage::Reward => "reward",
            Stage::Rewrite => "rewrite",
        })
    }
}

/// A per-entity error; batch runs record it and carry on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFailure {
    pub entity: Iri,
    pub stage: Stage,
    pub message: String,
    /// The failure came from the chat backend.
    #[serde(default)]
    pub backend: bool,
}

impl EntityFailure {
    pub fn new(entity: &Iri, stage: Stage, message: impl fmt::Display) -> Self {
        Self { entity: entity.clone(), stage, message: message.to_string(), backend: false }
    }

    fn backend(entity: &Iri, stage: Stage, message: impl fmt::Display) -> Self {
        Self { backend: true, ..Self::new(entity, stage, message) }
    }

    pub fn from_exec(entity: &Iri, err: ExecError) -> Self {
        match err {
            ExecError::Llm(e) => Self::backend(entity, Stage::Execute, e),
            e => Self::new(entity, Stage::Execute, e),
        }
    }
}

impl fmt::Display for EntityFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.entity, self.stage, self.message)
    }
}

/// Everything needed to align one entity.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub source_graph: &'a KnowledgeGraph,
    pub target_graph: &'a KnowledgeGraph,
    pub candidates: &'a CandidateMap,
    pub gateway: &'a Gateway,
    pub exec: &'a ExecConfig,
    /// Attributes that count as a name signal in the planner statistics.
    pub name_whitelist: &'a AttributeWhitelist,
}

impl AgentContext<'_> {
    pub fn observe(&self, entity: &Iri) -> Result<PlanningObservation, EntityFailure> {
        let cands = self
            .candidates
            .get(entity)
            .ok_or_else(|| EntityFailure::new(entity, Stage::Observe, "no candidate set"))?;
        PlanningObservation::observe(self.source_graph, entity.as_str(), cands, self.name_whitelist)
            .map_err(|e| EntityFailure::new(entity, Stage::Observe, e))
    }

    /// Plans and reports the planning usage and duration.
    pub fn plan(
        &self,
        policy: &dyn PlanningPolicy,
        observation: &PlanningObservation,
    ) -> Result<(ToolPath, Usage, f64), EntityFailure> {
        let entity = &observation.entity;
        let before = self.gateway.usage(entity, Tag::Plan);
        let started = Instant::now();
        let path = policy.plan(observation).map_err(|e| EntityFailure::backend(entity, Stage::Plan, e))?;
        let seconds = if self.exec.record_timing { started.elapsed().as_secs_f64() } else { 0.0 };
        let after = self.gateway.usage(entity, Tag::Plan);
        let used = Usage {
            prompt_tokens: after.prompt_tokens - before.prompt_tokens,
            completion_tokens: after.completion_tokens - before.completion_tokens,
            calls: after.calls - before.calls,
        };
        Ok((path, used, seconds))
    }

    pub fn align(
        &self,
        policy: &dyn PlanningPolicy,
        entity: &Iri,
    ) -> Result<(PlanningObservation, AlignmentOutcome), EntityFailure> {
        let observation = self.observe(entity)?;
        let (path, planning_tokens, planning_seconds) = self.plan(policy, &observation)?;
        let cands = &self.candidates[entity];
        let mut outcome = execute(&path, entity, self.source_graph, self.target_graph, cands, self.gateway, self.exec)
            .map_err(|e| EntityFailure::from_exec(entity, e))?;
        outcome.planning_tokens = planning_tokens;
        outcome.planning_seconds = planning_seconds;
        Ok((observation, outcome))
    }
}

/// Sorted, de-duplicated entity list, the processing order of every batch.
pub fn batch_order<'a>(entities: impl IntoIterator<Item = &'a Iri>) -> Vec<Iri> {
    entities.into_iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Applies `f` to each entity in parallel; results come back in
/// [`batch_order`], failures separately.
pub fn for_each_entity<'a, T, F>(entities: impl IntoIterator<Item = &'a Iri>, f: F) -> (Vec<T>, Vec<EntityFailure>)
where
    T: Send,
    F: Fn(&Iri) -> Result<T, EntityFailure> + Sync,
{
    let order = batch_order(entities);
    let results: Vec<Result<T, EntityFailure>> = order.par_iter().map(&f).collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("{e}");
                failed.push(e);
            }
        }
    }
    (ok, failed)
}

/// Plans and aligns every entity with `policy`.
pub fn align_entities<'a>(
    ctx: &AgentContext<'_>,
    policy: &dyn PlanningPolicy,
    entities: impl IntoIterator<Item = &'a Iri>,
) -> (Vec<AlignmentOutcome>, Vec<EntityFailure>) {
    for_each_entity(entities, |e| ctx.align(policy, e).map(|(_, o)| o))
}
