//! Readers for tab-separated triple and link dumps, plus train/test splitting.
//!
//! Files are UTF-8, one record per line. Blank lines and lines starting with
//! `#` are skipped. Every error carries the 1-based line number.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{AlignmentPair, AttributeTriple, Iri, KgError, KnowledgeGraph, RelationTriple};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected {expected} tab-separated fields")]
    MalformedLine { line: usize, expected: &'static str },
    #[error("line {line}: {source}")]
    InvalidIri { line: usize, source: KgError },
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: source entity {iri} already linked")]
    DuplicateSource { line: usize, iri: Iri },
    #[error("no links to split")]
    EmptyLinks,
    #[error("train ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<IngestError> },
    #[error("bundle manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Iterates `(line_no, line)` over significant lines, rejecting bad UTF-8.
fn significant_lines<R: BufRead>(
    mut reader: R,
) -> impl Iterator<Item = Result<(usize, String), IngestError>> {
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    std::iter::from_fn(move || loop {
        buf.clear();
        line_no += 1;
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return None,
            Ok(_) => {}
            Err(e) => return Some(Err(IngestError::Io { path: PathBuf::from("<stream>"), source: e })),
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s,
            Err(_) => return Some(Err(IngestError::InvalidUtf8 { line: line_no })),
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        return Some(Ok((line_no, line.to_string())));
    })
}

fn field_iri(line: usize, raw: &str) -> Result<Iri, IngestError> {
    Iri::new(raw).map_err(|source| IngestError::InvalidIri { line, source })
}

/// Parses `<entity>\t<attribute>\t<value>` lines. Extra tabs belong to the value.
pub fn parse_attribute_triples<R: BufRead>(reader: R) -> Result<Vec<AttributeTriple>, IngestError> {
    let mut out = Vec::new();
    for item in significant_lines(reader) {
        let (line, text) = item?;
        let mut parts = text.splitn(3, '\t');
        let (Some(e), Some(a), Some(v)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(IngestError::MalformedLine { line, expected: "at least 3" });
        };
        out.push(AttributeTriple::new(field_iri(line, e)?, field_iri(line, a)?, v));
    }
    Ok(out)
}

/// Parses `<head>\t<relation>\t<tail>` lines; exactly three fields.
pub fn parse_relation_triples<R: BufRead>(reader: R) -> Result<Vec<RelationTriple>, IngestError> {
    let mut out = Vec::new();
    for item in significant_lines(reader) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        let [h, r, t] = fields[..] else {
            return Err(IngestError::MalformedLine { line, expected: "exactly 3" });
        };
        out.push(RelationTriple::new(field_iri(line, h)?, field_iri(line, r)?, field_iri(line, t)?));
    }
    Ok(out)
}

/// Parses `<source>\t<target>` gold links, keeping file order.
pub fn parse_entity_links<R: BufRead>(reader: R) -> Result<Vec<AlignmentPair>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in significant_lines(reader) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        let [s, t] = fields[..] else {
            return Err(IngestError::MalformedLine { line, expected: "exactly 2" });
        };
        let source = field_iri(line, s)?;
        if !seen.insert(source.clone()) {
            return Err(IngestError::DuplicateSource { line, iri: source });
        }
        out.push(AlignmentPair { source, target: field_iri(line, t)? });
    }
    Ok(out)
}

pub fn write_attribute_triples<W: Write>(mut w: W, triples: &[AttributeTriple]) -> std::io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.entity, t.attribute, t.value)?;
    }
    Ok(())
}

pub fn write_relation_triples<W: Write>(mut w: W, triples: &[RelationTriple]) -> std::io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    Ok(())
}

pub fn write_entity_links<W: Write>(mut w: W, links: &[AlignmentPair]) -> std::io::Result<()> {
    for p in links {
        writeln!(w, "{}\t{}", p.source, p.target)?;
    }
    Ok(())
}

/// Deterministically splits links by pair. `|train| = round(ratio * |links|)`.
///
/// Both halves keep the input order of their members.
pub fn split_links(
    links: &[AlignmentPair],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<AlignmentPair>, Vec<AlignmentPair>), IngestError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(IngestError::InvalidRatio(train_ratio));
    }
    if links.is_empty() {
        return Err(IngestError::EmptyLinks);
    }
    let n_train = (train_ratio * links.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..links.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.into_iter().map(|i| links[i].clone()).collect(),
        test_idx.into_iter().map(|i| links[i].clone()).collect(),
    ))
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|e| IngestError::io(path, e))
}

pub fn read_attribute_file(path: &Path) -> Result<Vec<AttributeTriple>, IngestError> {
    parse_attribute_triples(open(path)?).map_err(|e| with_path(e, path))
}

pub fn read_relation_file(path: &Path) -> Result<Vec<RelationTriple>, IngestError> {
    parse_relation_triples(open(path)?).map_err(|e| with_path(e, path))
}

pub fn read_links_file(path: &Path) -> Result<Vec<AlignmentPair>, IngestError> {
    parse_entity_links(open(path)?).map_err(|e| with_path(e, path))
}

fn with_path(err: IngestError, path: &Path) -> IngestError {
    match err {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => IngestError::InFile { path: path.to_path_buf(), source: Box::new(other) },
    }
}

/// Source and target graphs with gold links and their split.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub source_graph: KnowledgeGraph,
    pub target_graph: KnowledgeGraph,
    pub gold_links: Vec<AlignmentPair>,
    pub train_links: Vec<AlignmentPair>,
    pub test_links: Vec<AlignmentPair>,
}

/// Input files for [`DatasetBundle::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSources {
    pub source_attr: PathBuf,
    pub source_rel: PathBuf,
    pub target_attr: PathBuf,
    pub target_rel: PathBuf,
    pub links: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub entities: usize,
    pub relations: usize,
    pub attributes: usize,
    pub relation_triples: usize,
    pub attribute_triples: usize,
}

impl GraphSummary {
    pub fn of(graph: &KnowledgeGraph) -> Self {
        Self {
            entities: graph.entities().len(),
            relations: graph.relation_frequencies().len(),
            attributes: graph.attribute_distributions().len(),
            relation_triples: graph.total_relation_triples(),
            attribute_triples: graph.attribute_triples().len(),
        }
    }
}

/// `manifest.json` of a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub files: BundleSources,
    pub train_ratio: f64,
    pub seed: u64,
    pub source: GraphSummary,
    pub target: GraphSummary,
    pub gold_links: usize,
    pub train_links: usize,
    pub test_links: usize,
    pub train_file: String,
    pub test_file: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LINKS_FILE: &str = "train_links.tsv";
pub const TEST_LINKS_FILE: &str = "test_links.tsv";

impl DatasetBundle {
    pub fn load(files: &BundleSources, train_ratio: f64, seed: u64) -> Result<Self, IngestError> {
        let source_graph =
            KnowledgeGraph::build(read_attribute_file(&files.source_attr)?, read_relation_file(&files.source_rel)?);
        let target_graph =
            KnowledgeGraph::build(read_attribute_file(&files.target_attr)?, read_relation_file(&files.target_rel)?);
        let gold_links = read_links_file(&files.links)?;
        let (train_links, test_links) = split_links(&gold_links, train_ratio, seed)?;
        Ok(Self { source_graph, target_graph, gold_links, train_links, test_links })
    }

    /// Warns about gold links whose endpoints are missing from their graphs.
    pub fn dangling_links(&self) -> Vec<&AlignmentPair> {
        self.gold_links
            .iter()
            .filter(|p| !self.source_graph.contains(p.source.as_str()) || !self.target_graph.contains(p.target.as_str()))
            .collect()
    }

    /// Writes `manifest.json` plus the two split files into `dir`.
    pub fn write_dir(
        &self,
        dir: &Path,
        files: &BundleSources,
        train_ratio: f64,
        seed: u64,
    ) -> Result<BundleManifest, IngestError> {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
        let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        let manifest = BundleManifest {
            files: BundleSources {
                source_attr: abs(&files.source_attr),
                source_rel: abs(&files.source_rel),
                target_attr: abs(&files.target_attr),
                target_rel: abs(&files.target_rel),
                links: abs(&files.links),
            },
            train_ratio,
            seed,
            source: GraphSummary::of(&self.source_graph),
            target: GraphSummary::of(&self.target_graph),
            gold_links: self.gold_links.len(),
            train_links: self.train_links.len(),
            test_links: self.test_links.len(),
            train_file: TRAIN_LINKS_FILE.into(),
            test_file: TEST_LINKS_FILE.into(),
        };
        for (name, links) in [(TRAIN_LINKS_FILE, &self.train_links), (TEST_LINKS_FILE, &self.test_links)] {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| IngestError::io(&path, e))?;
            write_entity_links(std::io::BufWriter::new(f), links).map_err(|e| IngestError::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| IngestError::io(&path, e))?;
        Ok(manifest)
    }

    /// Reloads a bundle written by [`DatasetBundle::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<(Self, BundleManifest), IngestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text)
            .map_err(|e| IngestError::Manifest { path: path.clone(), message: e.to_string() })?;
        let files = &manifest.files;
        let source_graph =
            KnowledgeGraph::build(read_attribute_file(&files.source_attr)?, read_relation_file(&files.source_rel)?);
        let target_graph =
            KnowledgeGraph::build(read_attribute_file(&files.target_attr)?, read_relation_file(&files.target_rel)?);
        let gold_links = read_links_file(&files.links)?;
        let train_links = read_links_file(&dir.join(&manifest.train_file))?;
        let test_links = read_links_file(&dir.join(&manifest.test_file))?;
        if train_links.len() + test_links.len() != gold_links.len() {
            return Err(IngestError::Manifest {
                path,
                message: "split files do not cover the gold links".into(),
            });
        }
        Ok((Self { source_graph, target_graph, gold_links, train_links, test_links }, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    #[test]
    fn attribute_line() {
        let t = parse_attribute_triples("e1\ta1\tParis\n".as_bytes()).unwrap();
        assert_eq!(t, vec![AttributeTriple::new(iri("e1"), iri("a1"), "Paris")]);
    }

    #[test]
    fn attribute_value_keeps_tabs() {
        let t = parse_attribute_triples("e1\ta1\tA\tB".as_bytes()).unwrap();
        assert_eq!(t[0].value, "A\tB");
    }

    #[test]
    fn attribute_too_few_fields() {
        let err = parse_attribute_triples("e1\ta1".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn relation_lines() {
        let text = "e1\tr1\te2\n\n   \n# comment\r\ne2\tr1\te3\r\n";
        let t = parse_relation_triples(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0], RelationTriple::new(iri("e1"), iri("r1"), iri("e2")));
        assert_eq!(t[1].tail.as_str(), "e3");
    }

    #[test]
    fn relation_extra_field_reports_line() {
        let err = parse_relation_triples("e1\tr1\te2\ne1\tr1\te2\tx\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn empty_field_is_an_iri_error() {
        let err = parse_relation_triples("e1\t\te2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::InvalidIri { line: 1, .. }));
    }

    #[test]
    fn invalid_utf8_is_fatal() {
        let bytes: &[u8] = b"e1\tr1\te2\ne\xff\tr\tx\n";
        let err = parse_relation_triples(bytes).unwrap_err();
        assert!(matches!(err, IngestError::InvalidUtf8 { line: 2 }));
    }

    #[test]
    fn links_and_duplicates() {
        let l = parse_entity_links("s1\tt1\n".as_bytes()).unwrap();
        assert_eq!(l, vec![AlignmentPair { source: iri("s1"), target: iri("t1") }]);
        let err = parse_entity_links("s1\tt1\ns1\tt2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateSource { line: 2, .. }));
        assert!(matches!(
            parse_entity_links("s1\tt1\tx\n".as_bytes()),
            Err(IngestError::MalformedLine { line: 1, .. })
        ));
    }

    fn links(n: usize) -> Vec<AlignmentPair> {
        (0..n)
            .map(|i| AlignmentPair { source: iri(&format!("s{i}")), target: iri(&format!("t{i}")) })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let l = links(10);
        let (train, test) = split_links(&l, 0.3, 42).unwrap();
        assert_eq!((train.len(), test.len()), (3, 7));
        assert_eq!(split_links(&l, 0.3, 42).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<_> = train.iter().chain(&test).cloned().collect();
        all.sort();
        let mut expected = l.clone();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_links(&[], 0.3, 1), Err(IngestError::EmptyLinks)));
        assert!(matches!(split_links(&links(3), 0.0, 1), Err(IngestError::InvalidRatio(_))));
        assert!(matches!(split_links(&links(3), 1.0, 1), Err(IngestError::InvalidRatio(_))));
    }
}
