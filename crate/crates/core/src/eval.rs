//! Alignment metrics over collected outcomes.
//!
//! The agent outputs one IRI per entity, so ranking metrics use a
//! constructed ranking: the final prediction first, then the remaining
//! candidates in retrieval order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::AlignmentOutcome;
use crate::kg::Iri;
use crate::optimizer::TrajectoryDataset;
use crate::planner::ToolPath;
use crate::retrieval::{CandidateMap, CandidateSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold link for {0}")]
    MissingGold(Iri),
    #[error("no candidate set for {0}")]
    MissingCandidates(Iri),
}

pub type GoldMap = BTreeMap<Iri, Iri>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_entities: usize,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    pub reflector_rate: f64,
    pub avg_path_length: f64,
    pub avg_tokens_per_entity: f64,
    /// Mean (planning, alignment) seconds.
    pub avg_seconds_per_entity: (f64, f64),
    pub degraded: usize,
}

/// 1-based rank of `gold` in the constructed ranking, `None` if absent.
pub fn constructed_rank(final_prediction: &Iri, candidates: &CandidateSet, gold: &Iri) -> Option<usize> {
    if final_prediction == gold {
        return Some(1);
    }
    candidates
        .targets()
        .filter(|t| *t != final_prediction)
        .position(|t| t == gold)
        .map(|p| p + 2)
}

fn ranks(outcomes: &[AlignmentOutcome], candidates: &CandidateMap, gold: &GoldMap) -> Result<Vec<Option<usize>>, EvalError> {
    outcomes
        .iter()
        .map(|o| {
            let g = gold.get(&o.source).ok_or_else(|| EvalError::MissingGold(o.source.clone()))?;
            let c = candidates.get(&o.source).ok_or_else(|| EvalError::MissingCandidates(o.source.clone()))?;
            Ok(constructed_rank(&o.final_prediction, c, g))
        })
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction with gold at rank ≤ `k`. For k=1 this is final-prediction
/// accuracy; for k at least the candidate count it is candidate recall.
pub fn hits_at_k(
    outcomes: &[AlignmentOutcome],
    candidates: &CandidateMap,
    gold: &GoldMap,
    k: usize,
) -> Result<f64, EvalError> {
    Ok(mean(ranks(outcomes, candidates, gold)?.into_iter().map(|r| if r.is_some_and(|r| r <= k) { 1.0 } else { 0.0 })))
}

pub fn mrr(outcomes: &[AlignmentOutcome], candidates: &CandidateMap, gold: &GoldMap) -> Result<f64, EvalError> {
    Ok(mean(ranks(outcomes, candidates, gold)?.into_iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64))))
}

pub fn reflector_rate<'a>(paths: impl IntoIterator<Item = &'a ToolPath>) -> f64 {
    mean(paths.into_iter().map(|p| if p.has_reflector() { 1.0 } else { 0.0 }))
}

pub fn avg_path_length<'a>(paths: impl IntoIterator<Item = &'a ToolPath>) -> f64 {
    mean(paths.into_iter().map(|p| p.len() as f64))
}

pub fn evaluate(outcomes: &[AlignmentOutcome], candidates: &CandidateMap, gold: &GoldMap) -> Result<EvalReport, EvalError> {
    let hits_at_1 = hits_at_k(outcomes, candidates, gold, 1)?;
    let hits_at_10 = hits_at_k(outcomes, candidates, gold, 10)?;
    debug_assert!(hits_at_1 <= hits_at_10);
    Ok(EvalReport {
        n_entities: outcomes.len(),
        hits_at_1,
        hits_at_10,
        mrr: mrr(outcomes, candidates, gold)?,
        reflector_rate: reflector_rate(outcomes.iter().map(|o| &o.path)),
        avg_path_length: avg_path_length(outcomes.iter().map(|o| &o.path)),
        avg_tokens_per_entity: mean(outcomes.iter().map(|o| o.total_tokens() as f64)),
        avg_seconds_per_entity: (
            mean(outcomes.iter().map(|o| o.planning_seconds)),
            mean(outcomes.iter().map(|o| o.alignment_seconds)),
        ),
        degraded: outcomes.iter().filter(|o| o.degraded).count(),
    })
}

/// Path statistics for one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub records: usize,
    pub reflector_rate: f64,
    pub avg_path_length: f64,
    pub rewritten_reflector_rate: f64,
    pub rewritten_avg_path_length: f64,
    pub mean_reward: f64,
}

pub fn round_summaries(dataset: &TrajectoryDataset) -> Vec<RoundSummary> {
    let rounds: BTreeSet<u32> = dataset.records().iter().map(|r| r.round).collect();
    rounds
        .into_iter()
        .map(|round| {
            let recs: Vec<_> = dataset.round(round).collect();
            RoundSummary {
                round,
                records: recs.len(),
                reflector_rate: reflector_rate(recs.iter().map(|r| &r.path)),
                avg_path_length: avg_path_length(recs.iter().map(|r| &r.path)),
                rewritten_reflector_rate: reflector_rate(recs.iter().map(|r| &r.rewritten_path)),
                rewritten_avg_path_length: avg_path_length(recs.iter().map(|r| &r.rewritten_path)),
                mean_reward: mean(recs.iter().map(|r| r.reward.total)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Usage;
    use crate::planner::{PathOrigin, ToolId::*};
    use crate::retrieval::ScoredCandidate;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn set(source: &str, targets: &[&str]) -> CandidateSet {
        let c = targets
            .iter()
            .enumerate()
            .map(|(i, t)| ScoredCandidate { target: iri(t), score: 1.0 - i as f64 * 0.01 })
            .collect();
        CandidateSet::normalize(iri(source), c, 10).0
    }

    fn outcome(source: &str, pred: &str, reflect: bool) -> AlignmentOutcome {
        let mut steps = vec![AttributeTripleSelector, EntityAlignmentTool];
        if reflect {
            steps.push(Reflector);
        }
        AlignmentOutcome {
            source: iri(source),
            path: ToolPath::new(steps, PathOrigin::Rule).unwrap(),
            selected_attr: vec![],
            selected_rel: vec![],
            initial_prediction: iri(pred),
            refined_prediction: reflect.then(|| iri(pred)),
            final_prediction: iri(pred),
            transcript: vec![],
            tokens: Usage::default(),
            planning_tokens: Usage::default(),
            planning_seconds: 0.0,
            alignment_seconds: 0.0,
            degraded: false,
        }
    }

    #[test]
    fn two_entity_mrr() {
        let cands: CandidateMap = [("a", set("a", &["ta", "x"])), ("b", set("b", &["y", "tb", "z"]))]
            .into_iter()
            .map(|(k, v)| (iri(k), v))
            .collect();
        let gold: GoldMap = [("a", "ta"), ("b", "tb")].into_iter().map(|(k, v)| (iri(k), iri(v))).collect();
        // b predicts y, so the ranking is y, tb, z: gold at 2
        let outs = vec![outcome("a", "ta", false), outcome("b", "y", false)];
        assert_eq!(mrr(&outs, &cands, &gold).unwrap(), 0.75);
        assert_eq!(hits_at_k(&outs, &cands, &gold, 1).unwrap(), 0.5);
        assert_eq!(hits_at_k(&outs, &cands, &gold, 10).unwrap(), 1.0);
        let outs = vec![outcome("a", "ta", false), outcome("b", "z", false)];
        assert!((mrr(&outs, &cands, &gold).unwrap() - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gold_outside_candidates() {
        let cands: CandidateMap = [(iri("a"), set("a", &["x", "y"]))].into_iter().collect();
        let gold: GoldMap = [(iri("a"), iri("g"))].into_iter().collect();
        let outs = vec![outcome("a", "x", false)];
        assert_eq!(hits_at_k(&outs, &cands, &gold, 10).unwrap(), 0.0);
        assert_eq!(mrr(&outs, &cands, &gold).unwrap(), 0.0);
        assert_eq!(
            hits_at_k(&outs, &cands, &GoldMap::new(), 1),
            Err(EvalError::MissingGold(iri("a")))
        );
    }

    #[test]
    fn path_statistics() {
        let outs = [outcome("a", "x", true), outcome("b", "x", false), outcome("c", "x", true)];
        let paths: Vec<_> = outs.iter().map(|o| &o.path).collect();
        assert!((avg_path_length(paths.iter().copied()) - 8.0 / 3.0).abs() < 1e-12);
        assert!((reflector_rate(paths.iter().copied()) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(reflector_rate(std::iter::empty()), 0.0);
    }

    #[test]
    fn perfect_run() {
        let cands: CandidateMap = ["a", "b", "c"].iter().map(|s| (iri(s), set(s, &["x", &format!("t{s}")]))).collect();
        let gold: GoldMap = ["a", "b", "c"].iter().map(|s| (iri(s), iri(&format!("t{s}")))).collect();
        let outs: Vec<_> = ["a", "b", "c"].iter().map(|s| outcome(s, &format!("t{s}"), false)).collect();
        let r = evaluate(&outs, &cands, &gold).unwrap();
        assert_eq!((r.hits_at_1, r.hits_at_10, r.mrr), (1.0, 1.0, 1.0));
        assert_eq!(r.n_entities, 3);
    }
}
