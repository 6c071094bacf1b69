//! Tool paths and the planning policies that produce them.
//!
//! A valid path is one or two distinct triple selectors, then the alignment
//! tool, then optionally the reflector. That gives exactly eight shapes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{AttributeWhitelist, EntityStatistics, Iri, KgError, KnowledgeGraph};
use crate::llm::{Gateway, LlmError, Tag};
use crate::prompt::{self, PromptError};
use crate::retrieval::{top_scores, CandidateSet};

/// Similarity gap below which the rule-based planner adds the reflector.
pub const DEFAULT_GAP_THRESHOLD: f64 = 0.3;

/// Absorbs float noise in `top1 - top2`, so a gap printed as 0.30 is not
/// treated as below a 0.3 threshold.
const GAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolId {
    AttributeTripleSelector,
    RelationTripleSelector,
    EntityAlignmentTool,
    Reflector,
}

impl ToolId {
    pub const ALL: [ToolId; 4] =
        [ToolId::AttributeTripleSelector, ToolId::RelationTripleSelector, ToolId::EntityAlignmentTool, ToolId::Reflector];

    pub fn name(self) -> &'static str {
        match self {
            ToolId::AttributeTripleSelector => "AttributeTripleSelector",
            ToolId::RelationTripleSelector => "RelationTripleSelector",
            ToolId::EntityAlignmentTool => "EntityAlignmentTool",
            ToolId::Reflector => "Reflector",
        }
    }

    pub fn is_selector(self) -> bool {
        matches!(self, ToolId::AttributeTripleSelector | ToolId::RelationTripleSelector)
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToolId {
    type Err = ParseError;

    /// Case-insensitive; ignores whitespace, underscores and hyphens.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && !matches!(c, '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        ToolId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(&key))
            .ok_or_else(|| ParseError::UnknownTool(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathOrigin {
    #[default]
    Llm,
    Rule,
    Rewritten,
    Fallback,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("path has {0} steps, expected 2 to 4")]
    Length(usize),
    #[error("path has no EntityAlignmentTool")]
    MissingAlignmentTool,
    #[error("path uses more than two selectors")]
    TooManySelectors,
    #[error("{0} appears more than once")]
    Duplicate(ToolId),
    #[error("Reflector must be the last step, after EntityAlignmentTool")]
    ReflectorMisplaced,
    #[error("selectors must come before EntityAlignmentTool")]
    SelectorAfterAlignment,
    #[error("path needs at least one selector")]
    MissingSelector,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no numbered tool lines found")]
    NoToolLines,
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid path: {0}")]
    InvalidPath(#[from] PathError),
}

/// A validated tool sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPath")]
pub struct ToolPath {
    steps: Vec<ToolId>,
    origin: PathOrigin,
}

#[derive(Deserialize)]
struct RawPath {
    steps: Vec<ToolId>,
    #[serde(default)]
    origin: PathOrigin,
}

impl TryFrom<RawPath> for ToolPath {
    type Error = PathError;

    fn try_from(raw: RawPath) -> Result<Self, Self::Error> {
        ToolPath::new(raw.steps, raw.origin)
    }
}

pub fn validate_steps(steps: &[ToolId]) -> Result<(), PathError> {
    if !(2..=4).contains(&steps.len()) {
        return Err(PathError::Length(steps.len()));
    }
    let Some(ea) = steps.iter().position(|&t| t == ToolId::EntityAlignmentTool) else {
        return Err(PathError::MissingAlignmentTool);
    };
    if steps.iter().filter(|t| t.is_selector()).count() > 2 {
        return Err(PathError::TooManySelectors);
    }
    for (i, t) in steps.iter().enumerate() {
        if steps[..i].contains(t) {
            return Err(PathError::Duplicate(*t));
        }
    }
    if let Some(r) = steps.iter().position(|&t| t == ToolId::Reflector) {
        if r != steps.len() - 1 || r < ea {
            return Err(PathError::ReflectorMisplaced);
        }
    }
    if steps[ea + 1..].iter().any(|t| t.is_selector()) {
        return Err(PathError::SelectorAfterAlignment);
    }
    if ea == 0 {
        return Err(PathError::MissingSelector);
    }
    Ok(())
}

impl ToolPath {
    pub fn new(steps: Vec<ToolId>, origin: PathOrigin) -> Result<Self, PathError> {
        validate_steps(&steps)?;
        Ok(Self { steps, origin })
    }

    pub fn steps(&self) -> &[ToolId] {
        &self.steps
    }

    pub fn origin(&self) -> PathOrigin {
        self.origin
    }

    pub fn with_origin(mut self, origin: PathOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, tool: ToolId) -> bool {
        self.steps.contains(&tool)
    }

    pub fn has_reflector(&self) -> bool {
        self.contains(ToolId::Reflector)
    }

    /// Same path with the reflector removed; `None` when that would be too short.
    pub fn without_reflector(&self) -> Option<ToolPath> {
        let steps: Vec<ToolId> = self.steps.iter().copied().filter(|&t| t != ToolId::Reflector).collect();
        ToolPath::new(steps, self.origin).ok()
    }

    /// `1. Tool` lines, the format the planner is asked to produce.
    pub fn render(&self) -> String {
        render_steps(&self.steps)
    }

    /// Every valid step sequence.
    pub fn all_shapes() -> Vec<Vec<ToolId>> {
        use ToolId::*;
        let prefixes: [&[ToolId]; 4] = [
            &[AttributeTripleSelector],
            &[RelationTripleSelector],
            &[AttributeTripleSelector, RelationTripleSelector],
            &[RelationTripleSelector, AttributeTripleSelector],
        ];
        let mut out = Vec::new();
        for p in prefixes {
            for reflect in [false, true] {
                let mut s = p.to_vec();
                s.push(EntityAlignmentTool);
                if reflect {
                    s.push(Reflector);
                }
                out.push(s);
            }
        }
        out
    }
}

impl fmt::Display for ToolPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.steps.iter().map(|t| t.name()).collect();
        f.write_str(&names.join(" → "))
    }
}

pub fn render_steps(steps: &[ToolId]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

fn strip_markup(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '_' | '`' | '-' | '•' | '>' | '#'))
}

/// Parses one `N. ToolName` line into `(N, name)`.
fn numbered_line(line: &str) -> Option<(u32, &str)> {
    let line = strip_markup(line);
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let n: u32 = line[..digits].parse().ok()?;
    let rest = line[digits..].strip_prefix(['.', ')', ':'])?;
    let rest = strip_markup(rest);
    let end = rest.find(['(', '[', ':', ',', '—', '–']).unwrap_or(rest.len());
    let mut name = strip_markup(&rest[..end]);
    // "EntityAlignmentTool - aligns ..." style explanations
    if let Some(idx) = name.find(" - ") {
        name = strip_markup(&name[..idx]);
    }
    Some((n, name))
}

/// Extracts numbered tool lines in numeric order and validates the path.
pub fn parse_plan(text: &str) -> Result<ToolPath, ParseError> {
    let mut lines: Vec<(u32, &str)> = text.lines().filter_map(numbered_line).collect();
    if lines.is_empty() {
        return Err(ParseError::NoToolLines);
    }
    lines.sort_by_key(|(n, _)| *n);
    let steps = lines.into_iter().map(|(_, name)| name.parse()).collect::<Result<Vec<ToolId>, _>>()?;
    Ok(ToolPath::new(steps, PathOrigin::Llm)?)
}

/// What the planner sees about one source entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningObservation {
    pub entity: Iri,
    pub statistics: EntityStatistics,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
}

impl PlanningObservation {
    pub fn observe(
        graph: &KnowledgeGraph,
        entity: &str,
        candidates: &CandidateSet,
        name_whitelist: &AttributeWhitelist,
    ) -> Result<Self, KgError> {
        let statistics = graph.entity_statistics(entity, name_whitelist)?;
        let (top1, top2, top3) = top_scores(candidates);
        let entity = graph.entity(entity).cloned().expect("entity_statistics checked membership");
        Ok(Self { entity, statistics, top1, top2, top3 })
    }

    pub fn gap(&self) -> f64 {
        self.top1 - self.top2
    }

    /// True when the top-two gap is below `threshold`.
    pub fn is_ambiguous(&self, threshold: f64) -> bool {
        self.gap() < threshold - GAP_EPSILON
    }

    /// Placeholder values shared by the planning and rewriting prompts.
    pub fn prompt_vars(&self) -> HashMap<&'static str, String> {
        let s = &self.statistics;
        HashMap::from([
            ("entity_iri", self.entity.to_string()),
            ("entity", self.entity.to_string()),
            ("attr_cnt_all", s.attr_cnt_all.to_string()),
            ("attr_cnt", s.attr_cnt.to_string()),
            ("rel_cnt_all", s.rel_cnt_all.to_string()),
            ("rel_cnt", s.rel_cnt.to_string()),
            ("signal_attr", s.signal_attr.to_string()),
            ("top1_score", format!("{:.2}", self.top1)),
            ("top2_score", format!("{:.2}", self.top2)),
            ("top3_score", format!("{:.2}", self.top3)),
        ])
    }
}

pub fn render_planning_prompt(observation: &PlanningObservation, tool_pool: &str) -> Result<String, PromptError> {
    let mut vars = observation.prompt_vars();
    vars.insert("tool_pool", tool_pool.to_string());
    prompt::render(prompt::PLANNING, &vars)
}

/// Selectors then alignment; the reflector only when the top-two gap is
/// strictly below `threshold`.
pub fn rule_based_plan(observation: &PlanningObservation, threshold: f64) -> ToolPath {
    use ToolId::*;
    let mut steps = vec![AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool];
    if observation.is_ambiguous(threshold) {
        steps.push(Reflector);
    }
    ToolPath::new(steps, PathOrigin::Rule).expect("rule paths are valid")
}

/// Produces a tool path for one observation.
pub trait PlanningPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn plan(&self, observation: &PlanningObservation) -> Result<ToolPath, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RulePolicy {
    pub threshold: f64,
}

impl Default for RulePolicy {
    fn default() -> Self {
        Self { threshold: DEFAULT_GAP_THRESHOLD }
    }
}

impl PlanningPolicy for RulePolicy {
    fn name(&self) -> &str {
        "rule"
    }

    fn plan(&self, observation: &PlanningObservation) -> Result<ToolPath, LlmError> {
        Ok(rule_based_plan(observation, self.threshold))
    }
}

/// Asks the model for a path. An invalid reply gets one corrective
/// re-prompt; a second failure falls back to the rule-based plan.
#[derive(Debug, Clone)]
pub struct LlmPolicy {
    gateway: Arc<Gateway>,
    fallback: RulePolicy,
}

impl LlmPolicy {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway, fallback: RulePolicy::default() }
    }

    pub fn with_fallback(mut self, fallback: RulePolicy) -> Self {
        self.fallback = fallback;
        self
    }
}

impl PlanningPolicy for LlmPolicy {
    fn name(&self) -> &str {
        "llm"
    }

    fn plan(&self, observation: &PlanningObservation) -> Result<ToolPath, LlmError> {
        let prompt = render_planning_prompt(observation, prompt::TOOL_POOL)
            .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let first = self.gateway.ask(&observation.entity, Tag::Plan, prompt.clone())?;
        let err = match parse_plan(&first.text) {
            Ok(path) => return Ok(path),
            Err(e) => e,
        };
        log::debug!("{}: invalid plan ({err}); re-prompting", observation.entity);
        let second = self.gateway.ask(&observation.entity, Tag::Plan, prompt + prompt::PLAN_CORRECTION)?;
        match parse_plan(&second.text) {
            Ok(path) => Ok(path),
            Err(e) => {
                log::warn!("{}: invalid plan after repair ({e}); using rule-based plan", observation.entity);
                Ok(rule_based_plan(observation, self.fallback.threshold).with_origin(PathOrigin::Fallback))
            }
        }
    }
}
