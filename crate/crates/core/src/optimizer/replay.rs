//! Planning policy backed by the trajectory dataset.
//!
//! Stands in for a fine-tuned planner: observations are bucketed by
//! `(signal_attr, gap below threshold)` and each bucket replays the
//! rewritten path of its highest-reward record.

use std::collections::HashMap;

use super::dataset::TrajectoryDataset;
use crate::llm::LlmError;
use crate::planner::{rule_based_plan, PathOrigin, PlanningObservation, PlanningPolicy, RulePolicy, ToolPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketKey {
    pub signal_attr: bool,
    pub ambiguous: bool,
}

impl BucketKey {
    pub fn of(observation: &PlanningObservation, threshold: f64) -> Self {
        Self { signal_attr: observation.statistics.signal_attr, ambiguous: observation.is_ambiguous(threshold) }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    table: HashMap<BucketKey, (f64, ToolPath)>,
    fallback: RulePolicy,
}

impl ReplayPolicy {
    pub fn new(dataset: &TrajectoryDataset, fallback: RulePolicy) -> Self {
        let mut table: HashMap<BucketKey, (f64, ToolPath)> = HashMap::new();
        for r in dataset.records() {
            let key = BucketKey::of(&r.observation, fallback.threshold);
            let total = r.reward.total;
            // on equal reward the later record wins
            if table.get(&key).is_none_or(|(best, _)| total >= *best) {
                table.insert(key, (total, r.rewritten_path.clone().with_origin(PathOrigin::Rewritten)));
            }
        }
        Self { table, fallback }
    }

    pub fn lookup(&self, key: BucketKey) -> Option<&ToolPath> {
        self.table.get(&key).map(|(_, p)| p)
    }

    pub fn buckets(&self) -> usize {
        self.table.len()
    }
}

/// Replay policy with the default rule-based fallback.
pub fn replay_policy(dataset: &TrajectoryDataset) -> ReplayPolicy {
    ReplayPolicy::new(dataset, RulePolicy::default())
}

impl PlanningPolicy for ReplayPolicy {
    fn name(&self) -> &str {
        "replay"
    }

    fn plan(&self, observation: &PlanningObservation) -> Result<ToolPath, LlmError> {
        let key = BucketKey::of(observation, self.fallback.threshold);
        Ok(match self.lookup(key) {
            Some(p) => p.clone(),
            None => rule_based_plan(observation, self.fallback.threshold),
        })
    }
}
