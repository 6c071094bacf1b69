//! Reward scoring, reward-guided path rewriting and training rounds.

mod dataset;
mod replay;
mod reward;

use std::collections::{BTreeMap, HashMap};

use crate::agent::{for_each_entity, AgentContext, EntityFailure, Stage};
use crate::executor::AlignmentOutcome;
use crate::kg::Iri;
use crate::llm::{Gateway, LlmError, Tag};
use crate::planner::{parse_plan, PathOrigin, PlanningObservation, PlanningPolicy, ToolPath};
use crate::prompt::{self, PromptError};

pub use dataset::{
    export_sft_dataset, read_sft, write_records, DatasetError, PolicyUpdateTriple, SftRecord, TrajectoryDataset,
};
pub use replay::{replay_policy, BucketKey, ReplayPolicy};
pub use reward::{compute_reward, reward_from_flags, ReflectionEffect, RewardBreakdown, RewardConfig, RewardConfigError};

pub fn rewrite_vars(
    observation: &PlanningObservation,
    old_path: &ToolPath,
    reward: &RewardBreakdown,
) -> HashMap<&'static str, String> {
    let mut vars = observation.prompt_vars();
    vars.insert("old_tools", old_path.render());
    vars.insert("reward", format!("{:.2}", reward.total));
    vars
}

pub fn render_rewrite_prompt(
    observation: &PlanningObservation,
    old_path: &ToolPath,
    reward: &RewardBreakdown,
) -> Result<String, PromptError> {
    prompt::render(prompt::REWRITE, &rewrite_vars(observation, old_path, reward))
}

/// Used when the model never produces a valid rewrite: drop a penalized
/// reflector, otherwise keep the executed path.
pub fn repair_path(old_path: &ToolPath, reward: &RewardBreakdown) -> ToolPath {
    let repaired = if reward.penalizes_reflector() { old_path.without_reflector() } else { None };
    repaired.unwrap_or_else(|| old_path.clone()).with_origin(PathOrigin::Fallback)
}

/// Asks for an improved path; one corrective retry, then [`repair_path`].
pub fn rewrite_path(
    gateway: &Gateway,
    observation: &PlanningObservation,
    old_path: &ToolPath,
    reward: &RewardBreakdown,
) -> Result<ToolPath, LlmError> {
    let text = render_rewrite_prompt(observation, old_path, reward).map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
    let entity = &observation.entity;
    let first = gateway.ask(entity, Tag::Rewrite, text.clone())?;
    if let Ok(p) = parse_plan(&first.text) {
        return Ok(p.with_origin(PathOrigin::Rewritten));
    }
    let second = gateway.ask(entity, Tag::Rewrite, text + prompt::PLAN_CORRECTION)?;
    match parse_plan(&second.text) {
        Ok(p) => Ok(p.with_origin(PathOrigin::Rewritten)),
        Err(e) => {
            log::debug!("{entity}: invalid rewrite ({e}); repairing");
            Ok(repair_path(old_path, reward))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundResult {
    pub records: Vec<PolicyUpdateTriple>,
    pub outcomes: Vec<AlignmentOutcome>,
    pub failures: Vec<EntityFailure>,
}

/// Plan, execute, score and rewrite each entity. Records come back sorted
/// by source IRI; a failing entity is reported and skipped.
pub fn run_training_round<'a>(
    ctx: &AgentContext<'_>,
    policy: &dyn PlanningPolicy,
    entities: impl IntoIterator<Item = &'a Iri>,
    gold: &BTreeMap<Iri, Iri>,
    reward_config: &RewardConfig,
    round: u32,
) -> RoundResult {
    let (done, failures) = for_each_entity(entities, |entity| {
        let target = gold.get(entity).ok_or_else(|| EntityFailure::new(entity, Stage::Reward, "no gold link"))?;
        let (observation, outcome) = ctx.align(policy, entity)?;
        let reward = compute_reward(&outcome, target, reward_config);
        let rewritten = rewrite_path(ctx.gateway, &observation, &outcome.path, &reward)
            .map_err(|e| EntityFailure { backend: true, ..EntityFailure::new(entity, Stage::Rewrite, e) })?;
        let record = PolicyUpdateTriple {
            entity: entity.clone(),
            round,
            observation,
            path: outcome.path.clone(),
            reward,
            rewritten_path: rewritten,
        };
        Ok((record, outcome))
    });
    let (records, outcomes) = done.into_iter().unzip();
    RoundResult { records, outcomes, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityStatistics;
    use crate::llm::ScriptedMock;
    use crate::planner::ToolId::*;

    fn obs() -> PlanningObservation {
        PlanningObservation {
            entity: Iri::new("http://fr/e").unwrap(),
            statistics: EntityStatistics { attr_cnt_all: 3, attr_cnt: 2, rel_cnt_all: 1, rel_cnt: 1, signal_attr: false },
            top1: 0.8,
            top2: 0.75,
            top3: 0.2,
        }
    }

    fn four_step() -> ToolPath {
        ToolPath::new(vec![AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool, Reflector], PathOrigin::Llm)
            .unwrap()
    }

    #[test]
    fn rewrite_prompt_shows_reward_and_tools() {
        let harmful = reward_from_flags(true, Some(false), 4, &RewardConfig::default());
        let text = render_rewrite_prompt(&obs(), &four_step(), &harmful).unwrap();
        assert!(text.contains("Reward: -0.55"));
        assert!(text.contains("Previous Tools:\n1. AttributeTripleSelector\n2. RelationTripleSelector"));
        let mut vars = rewrite_vars(&obs(), &four_step(), &harmful);
        vars.remove("reward");
        assert_eq!(prompt::render(prompt::REWRITE, &vars), Err(PromptError::MissingPlaceholder("reward".into())));
    }

    #[test]
    fn invalid_rewrites_are_repaired() {
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Rewrite, "keep it"));
        let harmful = reward_from_flags(true, Some(false), 4, &RewardConfig::default());
        let p = rewrite_path(&gw, &obs(), &four_step(), &harmful).unwrap();
        assert_eq!(p.steps(), &[AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool]);
        assert_eq!(p.origin(), PathOrigin::Fallback);
        assert_eq!(gw.ledger().total().calls, 2);

        let helpful = reward_from_flags(false, Some(true), 4, &RewardConfig::default());
        assert_eq!(rewrite_path(&gw, &obs(), &four_step(), &helpful).unwrap().steps(), four_step().steps());
    }

    #[test]
    fn valid_rewrite_is_used() {
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Rewrite, crate::llm::ORACLE_PLAN));
        let good = reward_from_flags(true, None, 3, &RewardConfig::default());
        let p = rewrite_path(&gw, &obs(), &four_step(), &good).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.origin(), PathOrigin::Rewritten);
    }
}
