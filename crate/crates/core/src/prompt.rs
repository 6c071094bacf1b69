//! Prompt templates and a strict `{placeholder}` renderer.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing value for placeholder {{{0}}}")]
    MissingPlaceholder(String),
}

/// Substitutes every `{name}` in `template` from `vars` in a single pass.
///
/// Substituted values are not rescanned, so they may contain braces. A
/// brace that does not open a `[a-z0-9_]+}` placeholder is copied verbatim.
pub fn render(template: &str, vars: &HashMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            let name = &after[..name_len];
            let value = vars.get(name).ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub const TOOL_POOL: &str = r#"Tool_Pool = [
  {
    "name": "AttributeTripleSelector",
    "definition": "Selects important attribute triples of an entity by removing common or uninformative attributes.",
    "usage": "AttributeTripleSelector[entity] → list of (entity, attribute, value)"
  },
  {
    "name": "RelationTripleSelector",
    "definition": "Selects informative relation triples (outgoing and incoming) based on their distinctiveness.",
    "usage": "RelationTripleSelector[entity] → list of (subject, relation, object)"
  },
  {
    "name": "EntityAlignmentTool",
    "definition": "Aligns a source entity with the most similar target entity from a candidate list.",
    "usage": "EntityAlignmentTool[source_entity, candidates] → best target entity"
  },
  {
    "name": "Reflector",
    "definition": "Reevaluates the alignment result and suggests a better match if needed.",
    "usage": "Reflector[source_entity, candidates, initial_alignment] → confirmed or revised target"
  }
]"#;

pub const PLANNING: &str = "You are an expert in Entity Alignment.

Steps:
1. Choose one or two filtering tools: AttributeTripleSelector, RelationTripleSelector.
2. Apply EntityAlignmentTool to align the entity.
3. If the top candidate similarities are close, use Reflector to reassess.

Available tools:
{tool_pool}

Entity: {entity_iri}
Statistics:
- Attribute triples: {attr_cnt_all}
- Attribute types: {attr_cnt}
- Relation triples: {rel_cnt_all}
- Relation types: {rel_cnt}
- Has name attribute: {signal_attr}
- Candidate similarities: top1={top1_score}, top2={top2_score}, top3={top3_score}

Output the sequence numbers and tool names only, one per line:
1. <ToolName>
2. <ToolName>
3. <ToolName> (optional)
4. <ToolName> (optional)";

pub const ALIGNMENT: &str = "You are given a source entity and several candidate entities from another knowledge graph. Each entity is represented as triples (subject, predicate, object). Candidates are sorted by similarity.

Entity: {source_iri}
Triples:
{source_triples}

Candidates:
{candidate_blocks}

Please enter the IRI that best matches the candidate entity using the following format:
[IRI]";

pub const REFLECTION: &str = "You are performing an entity alignment task. Given a source entity and several candidate target entities (with their triples), you previously selected one of them.

Now, reflect on whether that choice was optimal.

Entity: {source_iri}
Triples:
{source_triples}

Candidates:
{candidate_blocks}

Initial choice: {initial_choice}

Is this the best match?
- If yes, return it.
- If not, return a better one.

Please enter the best matching IRI using the following format:
[IRI]";

pub const REWRITE: &str = "You are optimizing the tool selection process for an entity alignment task.

Entity: {entity}
Candidate Similarities: {top1_score}, {top2_score}, {top3_score}
Previous Tools:
{old_tools}
Reward: {reward}

Available tools:
- AttributeTripleSelector
- RelationTripleSelector
- EntityAlignmentTool
- Reflector (use only when similarities are close)

Please generate an improved sequence of tools.

Output the sequence numbers and tool names only, one per line:
1. <ToolName>
2. <ToolName>
3. <ToolName> (optional)
4. <ToolName> (optional)";

/// Appended when a reply could not be parsed and the request is repeated.
pub const PLAN_CORRECTION: &str = "\n\nYour previous answer was not a valid tool path. Use one or two filtering tools, then EntityAlignmentTool, optionally followed by Reflector, as numbered lines.";

pub const ANSWER_CORRECTION: &str = "\n\nYour previous answer did not name one of the candidate IRIs. Reply with exactly one candidate IRI in square brackets.";
