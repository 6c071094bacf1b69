//! The offline trajectory dataset and its SFT projection.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::reward::RewardBreakdown;
use crate::kg::Iri;
use crate::planner::{render_planning_prompt, PlanningObservation, ToolPath};
use crate::prompt::{self, PromptError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {index} has round {round}, after a record of round {previous}")]
    RoundDecreased { index: usize, round: u32, previous: u32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One trajectory: what the planner saw, what ran, how it scored and the
/// path it should have produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdateTriple {
    pub entity: Iri,
    pub round: u32,
    pub observation: PlanningObservation,
    pub path: ToolPath,
    pub reward: RewardBreakdown,
    pub rewritten_path: ToolPath,
}

/// Append-only list of trajectories with non-decreasing rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryDataset {
    records: Vec<PolicyUpdateTriple>,
}

impl TrajectoryDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: PolicyUpdateTriple) -> Result<(), DatasetError> {
        if let Some(last) = self.records.last() {
            if record.round < last.round {
                return Err(DatasetError::RoundDecreased {
                    index: self.records.len(),
                    round: record.round,
                    previous: last.round,
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = PolicyUpdateTriple>) -> Result<(), DatasetError> {
        for r in records {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[PolicyUpdateTriple] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_round(&self) -> Option<u32> {
        self.records.last().map(|r| r.round)
    }

    pub fn round(&self, round: u32) -> impl Iterator<Item = &PolicyUpdateTriple> {
        self.records.iter().filter(move |r| r.round == round)
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<(), DatasetError> {
        write_records(w, &self.records)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, DatasetError> {
        let mut ds = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PolicyUpdateTriple =
                serde_json::from_str(&line).map_err(|e| DatasetError::Json { line: i + 1, message: e.to_string() })?;
            ds.push(rec)?;
        }
        Ok(ds)
    }

    /// SHA-256 over the JSONL serialization of the first `n` records.
    pub fn prefix_hash(&self, n: usize) -> String {
        let mut h = Sha256::new();
        for r in &self.records[..n.min(self.records.len())] {
            h.update(serde_json::to_string(r).expect("records serialize"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[PolicyUpdateTriple]) -> Result<(), DatasetError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

impl SftRecord {
    pub fn from_triple(record: &PolicyUpdateTriple) -> Result<Self, PromptError> {
        Ok(Self {
            prompt: render_planning_prompt(&record.observation, prompt::TOOL_POOL)?,
            completion: record.rewritten_path.render(),
        })
    }
}

/// Writes one `{prompt, completion}` line per record and returns the count.
pub fn export_sft_dataset<W: Write>(dataset: &TrajectoryDataset, mut w: W) -> Result<usize, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    for r in dataset.records() {
        serde_json::to_writer(&mut w, &SftRecord::from_triple(r)?).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(dataset.len())
}

pub fn read_sft<R: BufRead>(reader: R) -> Result<Vec<SftRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Json { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kg::EntityStatistics;
    use crate::optimizer::reward::{reward_from_flags, RewardConfig};
    use crate::planner::{PathOrigin, ToolId::*};

    pub(crate) fn record(entity: &str, round: u32, gap: f64, reflect: bool, refined_correct: bool) -> PolicyUpdateTriple {
        let mut steps = vec![AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool];
        if reflect {
            steps.push(Reflector);
        }
        let path = ToolPath::new(steps, PathOrigin::Llm).unwrap();
        PolicyUpdateTriple {
            entity: Iri::new(entity).unwrap(),
            round,
            observation: PlanningObservation {
                entity: Iri::new(entity).unwrap(),
                statistics: EntityStatistics { attr_cnt_all: 4, attr_cnt: 3, rel_cnt_all: 2, rel_cnt: 1, signal_attr: true },
                top1: 0.9,
                top2: 0.9 - gap,
                top3: 0.1,
            },
            rewritten_path: path.without_reflector().unwrap().with_origin(PathOrigin::Rewritten),
            reward: reward_from_flags(true, reflect.then_some(refined_correct), path.len(), &RewardConfig::default()),
            path,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mut ds = TrajectoryDataset::new();
        ds.push(record("e1", 0, 0.1, true, false)).unwrap();
        ds.push(record("e2", 1, 0.5, false, true)).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"reward\":{\"mu\":0.0,\"ref\":-1.0"));
        assert_eq!(TrajectoryDataset::read_jsonl(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rounds_must_not_decrease() {
        let mut ds = TrajectoryDataset::new();
        ds.push(record("e1", 1, 0.1, true, true)).unwrap();
        assert!(matches!(ds.push(record("e2", 0, 0.1, true, true)), Err(DatasetError::RoundDecreased { .. })));
    }

    #[test]
    fn prefix_hash_is_stable_under_append() {
        let mut ds = TrajectoryDataset::new();
        ds.push(record("e1", 0, 0.1, true, true)).unwrap();
        let h = ds.prefix_hash(1);
        ds.push(record("e2", 1, 0.1, true, true)).unwrap();
        assert_eq!(ds.prefix_hash(1), h);
        assert_ne!(ds.prefix_hash(2), h);
    }

    #[test]
    fn sft_export() {
        let mut ds = TrajectoryDataset::new();
        assert!(matches!(export_sft_dataset(&ds, Vec::new()), Err(DatasetError::EmptyDataset)));
        ds.push(record("e1", 0, 0.1, true, false)).unwrap();
        let mut buf = Vec::new();
        assert_eq!(export_sft_dataset(&ds, &mut buf).unwrap(), 1);
        let back = read_sft(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].prompt.contains("Entity: e1"));
        assert_eq!(back[0].completion, "1. AttributeTripleSelector\n2. RelationTripleSelector\n3. EntityAlignmentTool");
        assert_eq!(back[0], SftRecord::from_triple(&ds.records()[0]).unwrap());
    }
}
