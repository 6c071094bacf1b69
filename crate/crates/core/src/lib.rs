//! Entity alignment between two knowledge graphs with a tool-planning
//! agent: candidate retrieval, triple selectors, LLM-driven alignment and
//! reflection, reward-guided path rewriting and evaluation.

pub mod agent;
pub mod config;
pub mod eval;
pub mod executor;
pub mod ingest;
pub mod kg;
pub mod llm;
pub mod optimizer;
pub mod pipeline;
pub mod planner;
pub mod prompt;
pub mod retrieval;
pub mod selectors;
pub mod synthetic;

use std::fmt;

pub use agent::{AgentContext, EntityFailure, Stage};
pub use config::{BackendKind, PolicyKind, RunConfig};
pub use eval::{evaluate, EvalReport, GoldMap};
pub use executor::{execute, AlignmentOutcome, ExecConfig};
pub use ingest::DatasetBundle;
pub use kg::{AlignmentPair, AttributeTriple, AttributeWhitelist, EntityStatistics, Iri, KnowledgeGraph, RelationTriple};
pub use llm::{ChatBackend, Gateway, GatewaySettings, OracleMock, ScriptedMock};
pub use optimizer::{compute_reward, PolicyUpdateTriple, RewardBreakdown, RewardConfig, TrajectoryDataset};
pub use pipeline::run_pipeline;
pub use planner::{PathOrigin, PlanningObservation, PlanningPolicy, ToolId, ToolPath};
pub use retrieval::{CandidateMap, CandidateSet, ScoredCandidate};
pub use selectors::SelectionConfig;

/// Broad failure class, mapped to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Backend,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Backend => 3,
        }
    }
}

/// A stage-tagged error from a command or the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Error {
    pub kind: ErrorKind,
    pub stage: String,
    pub message: String,
}

impl Error {
    pub fn new(kind: ErrorKind, stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { kind, stage: stage.into(), message: message.to_string() }
    }

    pub fn config(stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, stage, message)
    }

    pub fn data(stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, stage, message)
    }

    pub fn backend(stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Backend, stage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for Error {}
