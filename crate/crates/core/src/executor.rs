//! Runs a tool path for one source entity and collects the outcome.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{AttributeTriple, Iri, KgError, KnowledgeGraph, RelationTriple};
use crate::llm::{ChatResponse, Gateway, LlmError, Tag, Usage};
use crate::planner::{ToolId, ToolPath};
use crate::prompt::{self, PromptError};
use crate::retrieval::CandidateSet;
use crate::selectors::{
    select_attribute_triples, select_relation_triples, EntropyScope, EntropyTable, SelectError, SelectionConfig,
};

pub const DEFAULT_RAW_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnswerError {
    #[error("no IRI found in the answer")]
    NoAnswer,
    #[error("{0} is not a candidate")]
    NotACandidate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub selection: SelectionConfig,
    /// Per-type triple cap when the matching selector is not in the path.
    pub raw_cap: usize,
    /// Record wall-clock durations; off gives byte-stable outcome files.
    pub record_timing: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self { selection: SelectionConfig::default(), raw_cap: DEFAULT_RAW_CAP, record_timing: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tag: Tag,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub source: Iri,
    pub path: ToolPath,
    pub selected_attr: Vec<AttributeTriple>,
    pub selected_rel: Vec<RelationTriple>,
    pub initial_prediction: Iri,
    pub refined_prediction: Option<Iri>,
    pub final_prediction: Iri,
    pub transcript: Vec<TranscriptEntry>,
    /// Usage of the alignment and reflection calls.
    pub tokens: Usage,
    /// Usage of the planning call(s) that produced `path`.
    #[serde(default)]
    pub planning_tokens: Usage,
    #[serde(default)]
    pub planning_seconds: f64,
    #[serde(default)]
    pub alignment_seconds: f64,
    /// An answer could not be parsed and a fallback prediction was used.
    #[serde(default)]
    pub degraded: bool,
}

impl AlignmentOutcome {
    pub fn reflector_ran(&self) -> bool {
        self.refined_prediction.is_some()
    }

    pub fn total_tokens(&self) -> u64 {
        self.tokens.total() + self.planning_tokens.total()
    }
}

/// One candidate as shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBlock {
    pub target: Iri,
    pub score: f64,
    pub triples: Vec<String>,
}

pub fn format_attribute(t: &AttributeTriple) -> String {
    format!("({}, {}, {})", t.entity, t.attribute, t.value)
}

pub fn format_relation(t: &RelationTriple) -> String {
    format!("({}, {}, {})", t.head, t.relation, t.tail)
}

fn triple_lines(lines: &[String]) -> String {
    if lines.is_empty() {
        "(no triples)".to_string()
    } else {
        lines.join("\n")
    }
}

fn candidate_blocks_text(blocks: &[CandidateBlock]) -> String {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| format!("Candidate {}: {} (similarity {:.4})\n{}", i + 1, b.target, b.score, triple_lines(&b.triples)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn shared_vars(source: &Iri, source_triples: &[String], blocks: &[CandidateBlock]) -> HashMap<&'static str, String> {
    HashMap::from([
        ("source_iri", source.to_string()),
        ("source_triples", triple_lines(source_triples)),
        ("candidate_blocks", candidate_blocks_text(blocks)),
    ])
}

/// Blocks are rendered in the given order, which callers keep in
/// descending score order.
pub fn render_alignment_prompt(
    source: &Iri,
    source_triples: &[String],
    blocks: &[CandidateBlock],
) -> Result<String, ExecError> {
    if blocks.is_empty() {
        return Err(ExecError::EmptyCandidates);
    }
    Ok(prompt::render(prompt::ALIGNMENT, &shared_vars(source, source_triples, blocks))?)
}

pub fn render_reflection_prompt(
    source: &Iri,
    source_triples: &[String],
    blocks: &[CandidateBlock],
    initial_choice: &Iri,
) -> Result<String, ExecError> {
    if blocks.is_empty() {
        return Err(ExecError::EmptyCandidates);
    }
    let mut vars = shared_vars(source, source_triples, blocks);
    if blocks.iter().any(|b| &b.target == initial_choice) {
        vars.insert("initial_choice", initial_choice.to_string());
    }
    Ok(prompt::render(prompt::REFLECTION, &vars)?)
}

/// First `[...]` token, else the longest candidate IRI quoted verbatim.
pub fn parse_iri_answer(text: &str, candidates: &CandidateSet) -> Result<Iri, AnswerError> {
    if let Some(open) = text.find('[') {
        if let Some(len) = text[open + 1..].find(']') {
            let token = text[open + 1..open + 1 + len].trim().trim_start_matches('<').trim_end_matches('>').trim();
            if !token.is_empty() {
                return candidates
                    .targets()
                    .find(|t| t.as_str() == token)
                    .cloned()
                    .ok_or_else(|| AnswerError::NotACandidate(token.to_string()));
            }
        }
    }
    candidates
        .targets()
        .filter(|t| text.contains(t.as_str()))
        .max_by(|a, b| a.as_str().len().cmp(&b.as_str().len()).then_with(|| b.cmp(a)))
        .cloned()
        .ok_or(AnswerError::NoAnswer)
}

fn raw_attributes(graph: &KnowledgeGraph, entity: &str, cap: usize) -> Vec<AttributeTriple> {
    graph.attributes_of(entity).take(cap).cloned().collect()
}

/// Outgoing triples then incoming ones, each in file order.
fn raw_relations(graph: &KnowledgeGraph, entity: &str, cap: usize) -> Vec<RelationTriple> {
    graph
        .outgoing(entity)
        .chain(graph.incoming(entity).filter(|t| t.head.as_str() != entity))
        .take(cap)
        .cloned()
        .collect()
}

struct EntityView {
    attrs: Vec<AttributeTriple>,
    rels: Vec<RelationTriple>,
}

impl EntityView {
    fn lines(&self) -> Vec<String> {
        self.attrs.iter().map(format_attribute).chain(self.rels.iter().map(format_relation)).collect()
    }
}

fn view(
    graph: &KnowledgeGraph,
    entity: &str,
    path: &ToolPath,
    scope: &EntropyTable<'_>,
    config: &ExecConfig,
) -> Result<EntityView, ExecError> {
    if !graph.contains(entity) {
        return Ok(EntityView { attrs: Vec::new(), rels: Vec::new() });
    }
    let attrs = if path.contains(ToolId::AttributeTripleSelector) {
        select_attribute_triples(graph, entity, scope, &config.selection)?
    } else {
        raw_attributes(graph, entity, config.raw_cap)
    };
    let rels = if path.contains(ToolId::RelationTripleSelector) {
        select_relation_triples(graph, entity, &config.selection)?
    } else {
        raw_relations(graph, entity, config.raw_cap)
    };
    Ok(EntityView { attrs, rels })
}

/// Calls the model and parses an IRI, retrying once with a correction note.
/// `Ok(None)` means both answers were unusable.
fn ask_for_iri(
    gateway: &Gateway,
    source: &Iri,
    tag: Tag,
    prompt_text: String,
    candidates: &CandidateSet,
    transcript: &mut Vec<TranscriptEntry>,
    tokens: &mut Usage,
) -> Result<Option<Iri>, LlmError> {
    let mut text = prompt_text;
    for attempt in 0..2 {
        if attempt == 1 {
            text.push_str(prompt::ANSWER_CORRECTION);
        }
        let ChatResponse { text: reply, prompt_tokens, completion_tokens, .. } = gateway.ask(source, tag, text.clone())?;
        tokens.add(&Usage { prompt_tokens, completion_tokens, calls: 1 });
        let parsed = parse_iri_answer(&reply, candidates);
        transcript.push(TranscriptEntry { tag, prompt: text.clone(), response: reply });
        match parsed {
            Ok(iri) => return Ok(Some(iri)),
            Err(e) => log::debug!("{source}: unusable {tag} answer ({e})"),
        }
    }
    log::warn!("{source}: no usable {tag} answer after retry");
    Ok(None)
}

/// Runs `path` for `source`. Selector steps make no model calls; the
/// alignment tool yields the initial prediction and the reflector, when
/// present, the refined one.
pub fn execute(
    path: &ToolPath,
    source: &Iri,
    source_graph: &KnowledgeGraph,
    target_graph: &KnowledgeGraph,
    candidates: &CandidateSet,
    gateway: &Gateway,
    config: &ExecConfig,
) -> Result<AlignmentOutcome, ExecError> {
    let started = Instant::now();
    let Some(top) = candidates.top() else {
        return Err(ExecError::EmptyCandidates);
    };
    if !source_graph.contains(source.as_str()) {
        return Err(KgError::UnknownEntity(source.clone()).into());
    }

    let source_view = view(source_graph, source.as_str(), path, &EntropyTable::whole_graph(source_graph), config)?;
    let candidate_scope = match config.selection.entropy_scope {
        EntropyScope::WholeGraph => EntropyTable::whole_graph(target_graph),
        EntropyScope::CandidateSet => EntropyTable::over_entities(target_graph, candidates.targets()),
    };
    let blocks = candidates
        .candidates()
        .iter()
        .map(|c| {
            let v = view(target_graph, c.target.as_str(), path, &candidate_scope, config)?;
            Ok(CandidateBlock { target: c.target.clone(), score: c.score, triples: v.lines() })
        })
        .collect::<Result<Vec<_>, ExecError>>()?;
    let source_lines = source_view.lines();

    let mut transcript = Vec::new();
    let mut tokens = Usage::default();
    let mut degraded = false;

    let align_prompt = render_alignment_prompt(source, &source_lines, &blocks)?;
    let initial =
        match ask_for_iri(gateway, source, Tag::Align, align_prompt, candidates, &mut transcript, &mut tokens)? {
            Some(iri) => iri,
            None => {
                degraded = true;
                top.target.clone()
            }
        };

    let refined = if path.has_reflector() {
        let reflect_prompt = render_reflection_prompt(source, &source_lines, &blocks, &initial)?;
        match ask_for_iri(gateway, source, Tag::Reflect, reflect_prompt, candidates, &mut transcript, &mut tokens)? {
            Some(iri) => Some(iri),
            None => {
                degraded = true;
                Some(initial.clone())
            }
        }
    } else {
        None
    };

    Ok(AlignmentOutcome {
        source: source.clone(),
        path: path.clone(),
        selected_attr: source_view.attrs,
        selected_rel: source_view.rels,
        final_prediction: refined.clone().unwrap_or_else(|| initial.clone()),
        initial_prediction: initial,
        refined_prediction: refined,
        transcript,
        tokens,
        planning_tokens: Usage::default(),
        planning_seconds: 0.0,
        alignment_seconds: if config.record_timing { started.elapsed().as_secs_f64() } else { 0.0 },
        degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{OracleMock, ScriptedMock};
    use crate::planner::PathOrigin;
    use crate::retrieval::ScoredCandidate;
    use ToolId::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn graphs() -> (KnowledgeGraph, KnowledgeGraph) {
        let name = iri("http://x/name");
        let src = KnowledgeGraph::build(
            vec![
                AttributeTriple::new(iri("s1"), name.clone(), "Paris"),
                AttributeTriple::new(iri("s1"), iri("http://x/pop"), "2M"),
            ],
            vec![RelationTriple::new(iri("s1"), iri("http://x/in"), iri("s2"))],
        );
        let tgt = KnowledgeGraph::build(
            (1..=3).map(|i| AttributeTriple::new(iri(&format!("t{i}")), name.clone(), format!("P{i}"))).collect::<Vec<_>>(),
            vec![RelationTriple::new(iri("t1"), iri("http://x/in"), iri("t2"))],
        );
        (src, tgt)
    }

    fn cands() -> CandidateSet {
        let c = (1..=3)
            .map(|i| ScoredCandidate { target: iri(&format!("t{i}")), score: 1.0 - i as f64 * 0.1 })
            .collect();
        CandidateSet::normalize(iri("s1"), c, 10).0
    }

    fn path(steps: Vec<ToolId>) -> ToolPath {
        ToolPath::new(steps, PathOrigin::Rule).unwrap()
    }

    fn block(t: &str, triples: &[&str]) -> CandidateBlock {
        CandidateBlock { target: iri(t), score: 0.5, triples: triples.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn alignment_prompt_lists_triples() {
        let b = block("t1", &["(t1, p, a)", "(t1, q, b)"]);
        let text = render_alignment_prompt(&iri("s"), &["(s, p, a)".into()], &[b]).unwrap();
        assert!(text.contains("Candidate 1: t1"));
        assert!(text.contains("(t1, p, a)\n(t1, q, b)"));
        assert!(!text.contains("Candidate 2"));
        assert_eq!(render_alignment_prompt(&iri("s"), &[], &[]), Err(ExecError::EmptyCandidates));
    }

    #[test]
    fn ten_blocks_in_order() {
        let blocks: Vec<_> = (0..10).map(|i| block(&format!("t{i}"), &[])).collect();
        let text = render_reflection_prompt(&iri("s"), &[], &blocks, &iri("t0")).unwrap();
        assert!(text.contains("Initial choice: t0"));
        let positions: Vec<usize> = (0..10).map(|i| text.find(&format!("Candidate {}: t{i} ", i + 1)).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            render_reflection_prompt(&iri("s"), &[], &blocks, &iri("zz")),
            Err(ExecError::Prompt(PromptError::MissingPlaceholder(_)))
        ));
    }

    #[test]
    fn answer_parsing() {
        let c = cands();
        assert_eq!(parse_iri_answer("[t2]", &c), Ok(iri("t2")));
        assert_eq!(parse_iri_answer("I think [ t3 ] fits best", &c), Ok(iri("t3")));
        assert_eq!(parse_iri_answer("[t99]", &c), Err(AnswerError::NotACandidate("t99".into())));
        assert_eq!(parse_iri_answer("probably t1", &c), Ok(iri("t1")));
        assert_eq!(parse_iri_answer("no idea", &c), Err(AnswerError::NoAnswer));
    }

    #[test]
    fn longest_verbatim_match_wins() {
        let c = CandidateSet::normalize(
            iri("s"),
            vec![
                ScoredCandidate { target: iri("http://e/Paris"), score: 0.9 },
                ScoredCandidate { target: iri("http://e/Paris_Texas"), score: 0.8 },
            ],
            10,
        )
        .0;
        assert_eq!(parse_iri_answer("it is http://e/Paris_Texas", &c), Ok(iri("http://e/Paris_Texas")));
    }

    #[test]
    fn oracle_three_steps() {
        let (s, t) = graphs();
        let gw = Gateway::with_defaults(OracleMock::new([(iri("s1"), iri("t2"))]));
        let o = execute(
            &path(vec![AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool]),
            &iri("s1"),
            &s,
            &t,
            &cands(),
            &gw,
            &ExecConfig::default(),
        )
        .unwrap();
        assert_eq!(o.final_prediction, iri("t2"));
        assert_eq!(o.refined_prediction, None);
        assert_eq!(o.transcript.iter().map(|e| e.tag).collect::<Vec<_>>(), vec![Tag::Align]);
        assert_eq!(o.selected_attr.len(), 2);
        assert_eq!(o.selected_rel.len(), 1);
    }

    #[test]
    fn reflector_corrects() {
        let (s, t) = graphs();
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Align, "[t1]").reply(Tag::Reflect, "[t2]"));
        let o = execute(
            &path(vec![AttributeTripleSelector, RelationTripleSelector, EntityAlignmentTool, Reflector]),
            &iri("s1"),
            &s,
            &t,
            &cands(),
            &gw,
            &ExecConfig::default(),
        )
        .unwrap();
        assert_eq!(o.initial_prediction, iri("t1"));
        assert_eq!(o.refined_prediction, Some(iri("t2")));
        assert_eq!(o.final_prediction, iri("t2"));
        assert_eq!(o.transcript.iter().map(|e| e.tag).collect::<Vec<_>>(), vec![Tag::Align, Tag::Reflect]);
        assert!(o.transcript[1].prompt.contains("Initial choice: t1"));
    }

    #[test]
    fn unusable_answers_degrade_to_top1() {
        let (s, t) = graphs();
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Align, "no idea"));
        let o = execute(
            &path(vec![RelationTripleSelector, EntityAlignmentTool]),
            &iri("s1"),
            &s,
            &t,
            &cands(),
            &gw,
            &ExecConfig::default(),
        )
        .unwrap();
        assert!(o.degraded);
        assert_eq!(o.final_prediction, iri("t1"));
        assert_eq!(o.transcript.len(), 2);
        assert!(o.transcript[1].prompt.ends_with(prompt::ANSWER_CORRECTION));
        // no attribute selector: raw triples are used
        assert_eq!(o.selected_attr.len(), 2);
    }

    #[test]
    fn raw_cap_applies_without_selector() {
        let attrs: Vec<_> = (0..15).map(|i| AttributeTriple::new(iri("s1"), iri(&format!("a{i}")), "v")).collect();
        let s = KnowledgeGraph::build(attrs, vec![]);
        let (_, t) = graphs();
        let gw = Gateway::with_defaults(OracleMock::new([(iri("s1"), iri("t1"))]));
        let o = execute(
            &path(vec![RelationTripleSelector, EntityAlignmentTool]),
            &iri("s1"),
            &s,
            &t,
            &cands(),
            &gw,
            &ExecConfig::default(),
        )
        .unwrap();
        assert_eq!(o.selected_attr.len(), DEFAULT_RAW_CAP);
        assert_eq!(o.selected_attr[0].attribute, iri("a0"));
    }
}
