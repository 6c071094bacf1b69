//! Candidate retrieval: top-k target entities per source entity.
//!
//! Candidates normally come from an external embedding retriever as JSONL.
//! When none are available, [`NameSimilarity`] ranks target entities by
//! normalized Levenshtein similarity of their local names.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{Iri, KgError, KnowledgeGraph};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("line {line}: malformed candidate record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: score {score} of {target} outside [0, 1]")]
    ScoreOutOfRange { line: usize, target: String, score: f64 },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(rename = "iri")]
    pub target: Iri,
    pub score: f64,
}

/// Ranked candidates for one source entity: scores non-increasing, targets
/// distinct, at most `k` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    source: Iri,
    candidates: Vec<ScoredCandidate>,
    k: usize,
}

/// What [`CandidateSet::normalize`] had to fix.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Repairs {
    pub resorted: bool,
    pub duplicates: usize,
    pub truncated: usize,
}

impl CandidateSet {
    /// Sorts descending by score (ties by target IRI), drops repeated targets
    /// keeping the best score, then caps at `k`.
    ///
    /// Scores must already lie in `[0, 1]`; callers validate them.
    pub fn normalize(source: Iri, mut candidates: Vec<ScoredCandidate>, k: usize) -> (Self, Repairs) {
        let mut repairs = Repairs::default();
        let sorted = candidates.windows(2).all(|w| w[0].score >= w[1].score);
        if !sorted {
            repairs.resorted = true;
        }
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.target.cmp(&b.target)));
        let mut seen = HashSet::new();
        let before = candidates.len();
        candidates.retain(|c| seen.insert(c.target.clone()));
        repairs.duplicates = before - candidates.len();
        if candidates.len() > k {
            repairs.truncated = candidates.len() - k;
            candidates.truncate(k);
        }
        (Self { source, candidates, k }, repairs)
    }

    pub fn source(&self) -> &Iri {
        &self.source
    }

    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, target: &str) -> bool {
        self.candidates.iter().any(|c| c.target.as_str() == target)
    }

    /// Zero-based rank of `target`, if present.
    pub fn position(&self, target: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.target.as_str() == target)
    }

    pub fn top(&self) -> Option<&ScoredCandidate> {
        self.candidates.first()
    }

    pub fn targets(&self) -> impl Iterator<Item = &Iri> {
        self.candidates.iter().map(|c| &c.target)
    }
}

/// Top three similarity scores, zero-filled.
pub fn top_scores(set: &CandidateSet) -> (f64, f64, f64) {
    let s = |i: usize| set.candidates.get(i).map_or(0.0, |c| c.score);
    (s(0), s(1), s(2))
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    source: Iri,
    candidates: Vec<ScoredCandidate>,
}

/// Candidate sets keyed by source IRI.
pub type CandidateMap = BTreeMap<Iri, CandidateSet>;

/// Reads `{"source": .., "candidates": [{"iri": .., "score": ..}]}` lines.
pub fn load_precomputed_candidates<R: BufRead>(reader: R, k: usize) -> Result<CandidateMap, RetrievalError> {
    let mut out = CandidateMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CandidateRecord = serde_json::from_str(&line)
            .map_err(|e| RetrievalError::MalformedRecord { line: line_no, reason: e.to_string() })?;
        for c in &record.candidates {
            if !(0.0..=1.0).contains(&c.score) {
                return Err(RetrievalError::ScoreOutOfRange {
                    line: line_no,
                    target: c.target.to_string(),
                    score: c.score,
                });
            }
        }
        if out.contains_key(&record.source) {
            return Err(RetrievalError::MalformedRecord {
                line: line_no,
                reason: format!("duplicate source {}", record.source),
            });
        }
        let (set, repairs) = CandidateSet::normalize(record.source.clone(), record.candidates, k);
        if repairs.resorted {
            log::warn!("line {line_no}: candidates of {} were not sorted by score; re-sorted", record.source);
        }
        if repairs.duplicates > 0 {
            log::warn!("line {line_no}: dropped {} repeated candidates of {}", repairs.duplicates, record.source);
        }
        if repairs.truncated > 0 {
            log::warn!("line {line_no}: kept top {k} of {} candidates", k + repairs.truncated);
        }
        out.insert(record.source, set);
    }
    Ok(out)
}

pub fn write_candidates<W: Write>(mut w: W, map: &CandidateMap) -> std::io::Result<()> {
    for set in map.values() {
        let record = CandidateRecord { source: set.source.clone(), candidates: set.candidates.clone() };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// `1 - lev(a, b) / max(|a|, |b|)` over Unicode scalar values.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Fallback retriever over the local names of a target graph.
#[derive(Debug, Clone)]
pub struct NameSimilarity<'g> {
    targets: Vec<(&'g Iri, String)>,
}

impl<'g> NameSimilarity<'g> {
    pub fn new(target_graph: &'g KnowledgeGraph) -> Self {
        Self { targets: target_graph.entities().iter().map(|e| (e, e.local_name())).collect() }
    }

    /// Top-`k` target entities by name similarity; ties by target IRI.
    pub fn candidates(&self, source_graph: &KnowledgeGraph, source: &str, k: usize) -> Result<CandidateSet, KgError> {
        let source = source_graph
            .entity(source)
            .ok_or_else(|| KgError::UnknownEntity(Iri::new(source).unwrap_or_else(|_| Iri::new("?").unwrap())))?;
        let name = source.local_name();
        let mut scored: Vec<ScoredCandidate> = self
            .targets
            .iter()
            .map(|(iri, local)| ScoredCandidate { target: (*iri).clone(), score: name_similarity(&name, local) })
            .collect();
        // entities() iterates in IRI order, so a stable sort keeps the tie-break
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        scored.truncate(k);
        Ok(CandidateSet { source: source.clone(), candidates: scored, k })
    }

    /// Candidate sets for many sources, computed in parallel.
    pub fn candidates_for<'a, I>(&self, source_graph: &KnowledgeGraph, sources: I, k: usize) -> Result<CandidateMap, KgError>
    where
        I: IntoIterator<Item = &'a Iri>,
    {
        let sources: Vec<&Iri> = sources.into_iter().collect();
        let sets: Vec<CandidateSet> = sources
            .par_iter()
            .map(|s| self.candidates(source_graph, s.as_str(), k))
            .collect::<Result<_, _>>()?;
        Ok(sets.into_iter().map(|s| (s.source.clone(), s)).collect())
    }
}

/// Convenience wrapper building the name index on the fly.
pub fn name_similarity_candidates(
    source_graph: &KnowledgeGraph,
    target_graph: &KnowledgeGraph,
    source: &str,
    k: usize,
) -> Result<CandidateSet, KgError> {
    NameSimilarity::new(target_graph).candidates(source_graph, source, k)
}
