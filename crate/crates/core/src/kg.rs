//! Knowledge-graph domain types and the indexed, read-only graph store.
//!
//! A [`KnowledgeGraph`] is built once from attribute and relation triples and
//! never mutated afterwards. The entity set is the union of every attribute
//! subject and every relation head and tail. Duplicate triples are dropped at
//! build time so the frequency tables count each statement once.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("IRI must not be empty")]
    EmptyIri,
    #[error("IRI contains a tab or newline: {0:?}")]
    UnsafeIri(String),
    #[error("unknown entity: {0}")]
    UnknownEntity(Iri),
}

/// Identifier of an entity, relation or attribute.
///
/// Never empty and never contains tab or newline characters, so it can be
/// written to TSV files without escaping. Cloning is cheap.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(value: impl AsRef<str>) -> Result<Self, KgError> {
        let value = value.as_ref();
        if value.is_empty() {
            return Err(KgError::EmptyIri);
        }
        if value.contains(['\t', '\n', '\r']) {
            return Err(KgError::UnsafeIri(value.to_string()));
        }
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn local_name(&self) -> String {
        local_name(&self.0)
    }
}

impl fmt::Debug for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Iri({})", self.0)
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for Iri {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Iri {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::str::FromStr for Iri {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Iri::new(s)
    }
}

impl Serialize for Iri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Iri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Iri::new(s).map_err(serde::de::Error::custom)
    }
}

/// Returns the part of `iri` after the last `/` or `#`, percent-decoded.
///
/// The whole value is returned when neither separator occurs. Invalid UTF-8
/// produced by decoding is replaced lossily.
pub fn local_name(iri: &str) -> String {
    let tail = match iri.rfind(['/', '#']) {
        Some(idx) => &iri[idx + 1..],
        None => iri,
    };
    percent_decode_str(tail).decode_utf8_lossy().into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeTriple {
    pub entity: Iri,
    pub attribute: Iri,
    pub value: String,
}

impl AttributeTriple {
    pub fn new(entity: Iri, attribute: Iri, value: impl Into<String>) -> Self {
        Self { entity, attribute, value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: Iri,
    pub relation: Iri,
    pub tail: Iri,
}

impl RelationTriple {
    pub fn new(head: Iri, relation: Iri, tail: Iri) -> Self {
        Self { head, relation, tail }
    }
}

/// A gold or predicted correspondence between a source and a target entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub source: Iri,
    pub target: Iri,
}

/// Per-entity counts shown to the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityStatistics {
    pub attr_cnt_all: usize,
    pub attr_cnt: usize,
    pub rel_cnt_all: usize,
    pub rel_cnt: usize,
    pub signal_attr: bool,
}

/// Matches attributes considered "name-like" or otherwise important.
///
/// An attribute matches when its full IRI is listed or when its local name
/// is one of the configured local names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeWhitelist {
    #[serde(default)]
    pub local_names: BTreeSet<String>,
    #[serde(default)]
    pub iris: BTreeSet<String>,
}

impl AttributeWhitelist {
    pub fn empty() -> Self {
        Self { local_names: BTreeSet::new(), iris: BTreeSet::new() }
    }

    pub fn from_iris<I, S>(iris: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { local_names: BTreeSet::new(), iris: iris.into_iter().map(Into::into).collect() }
    }

    pub fn matches(&self, attribute: &Iri) -> bool {
        self.iris.contains(attribute.as_str()) || self.local_names.contains(&attribute.local_name())
    }
}

impl Default for AttributeWhitelist {
    /// `name`, `label`, `skos#prefLabel` and `foaf/name` reduce to these local names.
    fn default() -> Self {
        Self {
            local_names: ["name", "label", "prefLabel"].into_iter().map(String::from).collect(),
            iris: BTreeSet::new(),
        }
    }
}

/// Immutable indexed store of one knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: BTreeSet<Iri>,
    attribute_triples: Vec<AttributeTriple>,
    relation_triples: Vec<RelationTriple>,
    attr_index: HashMap<Iri, Vec<usize>>,
    rel_out_index: HashMap<Iri, Vec<usize>>,
    rel_in_index: HashMap<Iri, Vec<usize>>,
    relation_freq: HashMap<Iri, usize>,
    attr_value_dist: HashMap<Iri, HashMap<String, usize>>,
    attr_entropy: HashMap<Iri, f64>,
}

impl KnowledgeGraph {
    /// Builds the graph and all of its indices. Input order is preserved
    /// (first occurrence wins when a triple is repeated).
    pub fn build(
        attribute_triples: impl IntoIterator<Item = AttributeTriple>,
        relation_triples: impl IntoIterator<Item = RelationTriple>,
    ) -> Self {
        let mut seen_attr = HashSet::new();
        let attribute_triples: Vec<AttributeTriple> =
            attribute_triples.into_iter().filter(|t| seen_attr.insert(t.clone())).collect();
        drop(seen_attr);
        let mut seen_rel = HashSet::new();
        let relation_triples: Vec<RelationTriple> =
            relation_triples.into_iter().filter(|t| seen_rel.insert(t.clone())).collect();
        drop(seen_rel);

        let mut entities = BTreeSet::new();
        let mut attr_index: HashMap<Iri, Vec<usize>> = HashMap::new();
        let mut attr_value_dist: HashMap<Iri, HashMap<String, usize>> = HashMap::new();
        for (idx, t) in attribute_triples.iter().enumerate() {
            entities.insert(t.entity.clone());
            attr_index.entry(t.entity.clone()).or_default().push(idx);
            *attr_value_dist
                .entry(t.attribute.clone())
                .or_default()
                .entry(t.value.clone())
                .or_insert(0) += 1;
        }

        let mut rel_out_index: HashMap<Iri, Vec<usize>> = HashMap::new();
        let mut rel_in_index: HashMap<Iri, Vec<usize>> = HashMap::new();
        let mut relation_freq: HashMap<Iri, usize> = HashMap::new();
        for (idx, t) in relation_triples.iter().enumerate() {
            entities.insert(t.head.clone());
            entities.insert(t.tail.clone());
            rel_out_index.entry(t.head.clone()).or_default().push(idx);
            rel_in_index.entry(t.tail.clone()).or_default().push(idx);
            *relation_freq.entry(t.relation.clone()).or_insert(0) += 1;
        }

        let attr_entropy = attr_value_dist
            .iter()
            .map(|(attr, dist)| (attr.clone(), entropy_of_counts(dist.values().copied())))
            .collect();

        Self {
            entities,
            attribute_triples,
            relation_triples,
            attr_index,
            rel_out_index,
            rel_in_index,
            relation_freq,
            attr_value_dist,
            attr_entropy,
        }
    }

    pub fn entities(&self) -> &BTreeSet<Iri> {
        &self.entities
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entities.contains(entity)
    }

    /// Looks up the canonical [`Iri`] stored for `entity`.
    pub fn entity(&self, entity: &str) -> Option<&Iri> {
        self.entities.get(entity)
    }

    pub fn attribute_triples(&self) -> &[AttributeTriple] {
        &self.attribute_triples
    }

    pub fn relation_triples(&self) -> &[RelationTriple] {
        &self.relation_triples
    }

    /// Attribute triples of `entity` in insertion order.
    pub fn attributes_of<'a>(&'a self, entity: &str) -> impl Iterator<Item = &'a AttributeTriple> + 'a {
        self.attr_index
            .get(entity)
            .into_iter()
            .flatten()
            .map(move |&i| &self.attribute_triples[i])
    }

    pub fn outgoing<'a>(&'a self, entity: &str) -> impl Iterator<Item = &'a RelationTriple> + 'a {
        self.rel_out_index
            .get(entity)
            .into_iter()
            .flatten()
            .map(move |&i| &self.relation_triples[i])
    }

    pub fn incoming<'a>(&'a self, entity: &str) -> impl Iterator<Item = &'a RelationTriple> + 'a {
        self.rel_in_index
            .get(entity)
            .into_iter()
            .flatten()
            .map(move |&i| &self.relation_triples[i])
    }

    /// Number of triples using `relation`; zero when unknown.
    pub fn relation_freq(&self, relation: &str) -> usize {
        self.relation_freq.get(relation).copied().unwrap_or(0)
    }

    pub fn relation_frequencies(&self) -> &HashMap<Iri, usize> {
        &self.relation_freq
    }

    /// Total number of (deduplicated) relation triples, `N`.
    pub fn total_relation_triples(&self) -> usize {
        self.relation_triples.len()
    }

    /// Value histogram of `attribute` over the whole graph.
    pub fn attribute_values(&self, attribute: &str) -> Option<&HashMap<String, usize>> {
        self.attr_value_dist.get(attribute)
    }

    pub fn attribute_distributions(&self) -> &HashMap<Iri, HashMap<String, usize>> {
        &self.attr_value_dist
    }

    /// Graph-wide value entropy of `attribute` (natural log), cached at build.
    pub fn attribute_entropy(&self, attribute: &str) -> Option<f64> {
        self.attr_entropy.get(attribute).copied()
    }

    pub fn entity_statistics(
        &self,
        entity: &str,
        name_whitelist: &AttributeWhitelist,
    ) -> Result<EntityStatistics, KgError> {
        let Some(iri) = self.entities.get(entity) else {
            return Err(KgError::UnknownEntity(Iri::new(entity).unwrap_or_else(|_| unknown_iri())));
        };
        let attrs: Vec<&AttributeTriple> = self.attributes_of(iri.as_str()).collect();
        let attr_types: HashSet<&Iri> = attrs.iter().map(|t| &t.attribute).collect();
        let signal_attr = attr_types.iter().any(|a| name_whitelist.matches(a));

        let mut rel_cnt_all = 0;
        let mut rel_types = HashSet::new();
        for t in self.outgoing(iri.as_str()).chain(self.incoming(iri.as_str())) {
            rel_cnt_all += 1;
            rel_types.insert(&t.relation);
        }

        Ok(EntityStatistics {
            attr_cnt_all: attrs.len(),
            attr_cnt: attr_types.len(),
            rel_cnt_all,
            rel_cnt: rel_types.len(),
            signal_attr,
        })
    }
}

fn unknown_iri() -> Iri {
    Iri(Arc::from("<invalid>"))
}

/// Shannon entropy (natural log) of a histogram.
///
/// Counts are summed in ascending order so equal histograms always produce
/// bit-identical values regardless of map iteration order.
pub(crate) fn entropy_of_counts(counts: impl IntoIterator<Item = usize>) -> f64 {
    let mut counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    // -0.0 for a single value
    h.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn fixture() -> KnowledgeGraph {
        let attrs = vec![
            AttributeTriple::new(iri("e1"), iri("http://x/name"), "Paris"),
            AttributeTriple::new(iri("e1"), iri("pop"), "2M"),
            AttributeTriple::new(iri("e1"), iri("pop"), "2.1M"),
            AttributeTriple::new(iri("e2"), iri("pop"), "1M"),
        ];
        let rels = vec![
            RelationTriple::new(iri("e1"), iri("r1"), iri("e2")),
            RelationTriple::new(iri("e1"), iri("r2"), iri("e3")),
            RelationTriple::new(iri("e2"), iri("r1"), iri("e1")),
            RelationTriple::new(iri("e3"), iri("r3"), iri("e1")),
        ];
        KnowledgeGraph::build(attrs, rels)
    }

    #[test]
    fn iri_rejects_empty_and_tabs() {
        assert_eq!(Iri::new(""), Err(KgError::EmptyIri));
        assert!(matches!(Iri::new("a\tb"), Err(KgError::UnsafeIri(_))));
        assert!(matches!(Iri::new("a\nb"), Err(KgError::UnsafeIri(_))));
    }

    #[test]
    fn empty_graph() {
        let g = KnowledgeGraph::build(vec![], vec![]);
        assert_eq!(g.entities().len(), 0);
        assert_eq!(g.total_relation_triples(), 0);
    }

    #[test]
    fn single_triple_graph() {
        let g = KnowledgeGraph::build(
            vec![AttributeTriple::new(iri("e1"), iri("a1"), "x")],
            vec![RelationTriple::new(iri("e1"), iri("r1"), iri("e2"))],
        );
        assert_eq!(g.entities().iter().map(Iri::as_str).collect::<Vec<_>>(), ["e1", "e2"]);
        assert_eq!(g.relation_freq("r1"), 1);
        assert_eq!(g.total_relation_triples(), 1);
    }

    #[test]
    fn statistics_hand_counted() {
        // e1: 3 attribute triples over {name, pop}; out r1,r2; in r1,r3.
        let g = fixture();
        let stats = g.entity_statistics("e1", &AttributeWhitelist::default()).unwrap();
        assert_eq!(
            stats,
            EntityStatistics { attr_cnt_all: 3, attr_cnt: 2, rel_cnt_all: 4, rel_cnt: 3, signal_attr: true }
        );
        let stats = g.entity_statistics("e1", &AttributeWhitelist::empty()).unwrap();
        assert!(!stats.signal_attr);
    }

    #[test]
    fn isolated_entity_statistics() {
        let g = KnowledgeGraph::build(vec![AttributeTriple::new(iri("a"), iri("p"), "v")], vec![]);
        // "b" does not exist; an entity with no triples cannot exist in a derived entity set
        assert!(matches!(
            g.entity_statistics("b", &AttributeWhitelist::default()),
            Err(KgError::UnknownEntity(_))
        ));
        let g = KnowledgeGraph::build(vec![], vec![RelationTriple::new(iri("a"), iri("r"), iri("b"))]);
        let s = g.entity_statistics("b", &AttributeWhitelist::empty()).unwrap();
        assert_eq!((s.attr_cnt_all, s.attr_cnt, s.signal_attr), (0, 0, false));
    }

    #[test]
    fn whitelist_only_attribute_sets_signal() {
        let g = KnowledgeGraph::build(
            vec![AttributeTriple::new(iri("e"), iri("http://xmlns.com/foaf/0.1/name"), "X")],
            vec![],
        );
        assert!(g.entity_statistics("e", &AttributeWhitelist::default()).unwrap().signal_attr);
        let skos = KnowledgeGraph::build(
            vec![AttributeTriple::new(iri("e"), iri("http://www.w3.org/2004/02/skos/core#prefLabel"), "X")],
            vec![],
        );
        assert!(skos.entity_statistics("e", &AttributeWhitelist::default()).unwrap().signal_attr);
    }

    #[test]
    fn duplicates_are_dropped() {
        let t = RelationTriple::new(iri("a"), iri("r"), iri("b"));
        let g = KnowledgeGraph::build(vec![], vec![t.clone(), t]);
        assert_eq!(g.total_relation_triples(), 1);
        assert_eq!(g.relation_freq("r"), 1);
    }

    #[test]
    fn local_name_examples() {
        assert_eq!(
            local_name("http://fr.dbpedia.org/resource/Saint-Isidore_(Roussillon)"),
            "Saint-Isidore_(Roussillon)"
        );
        assert_eq!(local_name("abc"), "abc");
        assert_eq!(local_name("http://x/A%20B"), "A B");
        assert_eq!(local_name("http://www.w3.org/2004/02/skos/core#prefLabel"), "prefLabel");
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_of_counts([4]), 0.0);
        assert!((entropy_of_counts([1, 1]) - 2f64.ln()).abs() < 1e-12);
        let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((entropy_of_counts([3, 1]) - expected).abs() < 1e-12);
        assert!((expected - 0.5623).abs() < 1e-4);
    }
}
