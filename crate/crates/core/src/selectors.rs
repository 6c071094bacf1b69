//! Attribute and relation triple selectors.
//!
//! The attribute selector keeps every whitelisted ("important") triple and
//! fills the remaining slots with the attributes of lowest value entropy.
//! The relation selector ranks an entity's outgoing and incoming triples by
//! the inverse-frequency score `ln(N / (freq(r) + 1))`. Both use the natural
//! logarithm; because any other base rescales every score by the same
//! positive constant, the selected sets do not depend on the base.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{entropy_of_counts, AttributeTriple, AttributeWhitelist, Iri, KgError, KnowledgeGraph, RelationTriple};

pub const DEFAULT_MAX_TRIPLES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("attribute {0} does not occur in the entropy scope")]
    UnknownAttribute(String),
    #[error("graph has no relation triples")]
    EmptyGraph,
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Population over which candidate-side attribute entropies are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyScope {
    WholeGraph,
    #[default]
    CandidateSet,
}

/// Which end of the entropy ranking is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyOrder {
    #[default]
    LowFirst,
    HighFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub max_triples: usize,
    pub important_attributes: AttributeWhitelist,
    /// Scope used when filtering candidate entities. Source entities always
    /// use the whole graph, since no candidate population exists for them.
    pub entropy_scope: EntropyScope,
    pub entropy_order: EntropyOrder,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_triples: DEFAULT_MAX_TRIPLES,
            important_attributes: AttributeWhitelist::default(),
            entropy_scope: EntropyScope::default(),
            entropy_order: EntropyOrder::default(),
        }
    }
}

/// Attribute entropies for one population.
#[derive(Debug, Clone)]
pub enum EntropyTable<'g> {
    Graph(&'g KnowledgeGraph),
    Local(HashMap<Iri, f64>),
}

impl<'g> EntropyTable<'g> {
    pub fn whole_graph(graph: &'g KnowledgeGraph) -> Self {
        Self::Graph(graph)
    }

    /// Entropies of the values each attribute takes among `entities` only.
    pub fn over_entities<'a>(graph: &KnowledgeGraph, entities: impl IntoIterator<Item = &'a Iri>) -> Self {
        let mut dist: HashMap<Iri, HashMap<&str, usize>> = HashMap::new();
        for e in entities {
            for t in graph.attributes_of(e.as_str()) {
                *dist.entry(t.attribute.clone()).or_default().entry(t.value.as_str()).or_insert(0) += 1;
            }
        }
        Self::Local(
            dist.into_iter()
                .map(|(a, d)| (a, entropy_of_counts(d.into_values())))
                .collect(),
        )
    }

    pub fn get(&self, attribute: &str) -> Option<f64> {
        match self {
            Self::Graph(g) => g.attribute_entropy(attribute),
            Self::Local(m) => m.get(attribute).copied(),
        }
    }
}

/// Value entropy `H(a) = -sum p(v) ln p(v)` within `scope`.
pub fn attribute_entropy(scope: &EntropyTable<'_>, attribute: &str) -> Result<f64, SelectError> {
    scope.get(attribute).ok_or_else(|| SelectError::UnknownAttribute(attribute.to_string()))
}

fn triple_key(a: &AttributeTriple, b: &AttributeTriple) -> Ordering {
    a.attribute.cmp(&b.attribute).then_with(|| a.value.cmp(&b.value))
}

/// Selection with an arbitrary per-attribute score, lower first.
pub fn select_attributes_by<F>(
    graph: &KnowledgeGraph,
    entity: &str,
    config: &SelectionConfig,
    mut score: F,
) -> Result<Vec<AttributeTriple>, SelectError>
where
    F: FnMut(&Iri) -> Result<f64, SelectError>,
{
    if !graph.contains(entity) {
        return Err(KgError::UnknownEntity(Iri::new(entity)?).into());
    }
    let (mut keep, rest): (Vec<&AttributeTriple>, Vec<&AttributeTriple>) = graph
        .attributes_of(entity)
        .partition(|t| config.important_attributes.matches(&t.attribute));
    keep.sort_by(|a, b| triple_key(a, b));

    let mut scored = Vec::with_capacity(rest.len());
    for t in rest {
        scored.push((score(&t.attribute)?, t));
    }
    scored.sort_by(|(sa, a), (sb, b)| sa.total_cmp(sb).then_with(|| triple_key(a, b)));

    let slots = config.max_triples.saturating_sub(keep.len());
    keep.extend(scored.into_iter().take(slots).map(|(_, t)| t));
    Ok(keep.into_iter().cloned().collect())
}

/// Whitelisted triples first (all of them, even beyond the cap), then the
/// lowest-entropy triples up to `max_triples`. Ties break on
/// `(attribute, value)`.
pub fn select_attribute_triples(
    graph: &KnowledgeGraph,
    entity: &str,
    scope: &EntropyTable<'_>,
    config: &SelectionConfig,
) -> Result<Vec<AttributeTriple>, SelectError> {
    let sign = match config.entropy_order {
        EntropyOrder::LowFirst => 1.0,
        EntropyOrder::HighFirst => -1.0,
    };
    select_attributes_by(graph, entity, config, |a| Ok(sign * attribute_entropy(scope, a.as_str())?))
}

/// Inverse-frequency score `I(r) = ln(N / (freq(r) + 1))`.
pub fn relation_score(graph: &KnowledgeGraph, relation: &str) -> Result<f64, SelectError> {
    let n = graph.total_relation_triples();
    if n == 0 {
        return Err(SelectError::EmptyGraph);
    }
    Ok((n as f64 / (graph.relation_freq(relation) as f64 + 1.0)).ln())
}

/// One of `entity`'s relation triples tagged with its direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedRelation<'g> {
    pub triple: &'g RelationTriple,
    pub outgoing: bool,
    pub score: f64,
}

impl RankedRelation<'_> {
    fn other_end(&self) -> &Iri {
        if self.outgoing {
            &self.triple.tail
        } else {
            &self.triple.head
        }
    }
}

/// All outgoing and incoming triples of `entity`, highest score first.
///
/// Ties break on relation IRI, then the other endpoint, then outgoing
/// before incoming. A self-loop is listed once, as outgoing.
pub fn rank_relation_triples<'g>(graph: &'g KnowledgeGraph, entity: &str) -> Result<Vec<RankedRelation<'g>>, SelectError> {
    if !graph.contains(entity) {
        return Err(KgError::UnknownEntity(Iri::new(entity)?).into());
    }
    let mut ranked = Vec::new();
    for t in graph.outgoing(entity) {
        ranked.push(RankedRelation { triple: t, outgoing: true, score: relation_score(graph, t.relation.as_str())? });
    }
    for t in graph.incoming(entity) {
        if t.head.as_str() == entity {
            continue;
        }
        ranked.push(RankedRelation { triple: t, outgoing: false, score: relation_score(graph, t.relation.as_str())? });
    }
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.triple.relation.cmp(&b.triple.relation))
            .then_with(|| a.other_end().cmp(b.other_end()))
            .then_with(|| b.outgoing.cmp(&a.outgoing))
    });
    Ok(ranked)
}

/// The `max_triples` highest-scoring relation triples of `entity`.
pub fn select_relation_triples(
    graph: &KnowledgeGraph,
    entity: &str,
    config: &SelectionConfig,
) -> Result<Vec<RelationTriple>, SelectError> {
    Ok(rank_relation_triples(graph, entity)?
        .into_iter()
        .take(config.max_triples)
        .map(|r| r.triple.clone())
        .collect())
}
