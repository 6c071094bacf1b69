//! Seeded generator for small bilingual graph pairs.
//!
//! Each gold pair shares a random name; the source side carries a one-letter
//! variant, so name similarity ranks the gold target first or close to it.
//! Relations are mirrored across the two graphs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{write_attribute_triples, write_entity_links, write_relation_triples, BundleSources};
use crate::kg::{AlignmentPair, AttributeTriple, Iri, RelationTriple};

pub const SOURCE_NS: &str = "http://fr.example.org/resource/";
pub const TARGET_NS: &str = "http://en.example.org/resource/";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub pairs: usize,
    /// Attributes per entity on top of name, country and year.
    pub extra_attributes: usize,
    pub relations_per_entity: usize,
    pub relation_types: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { pairs: 50, extra_attributes: 2, relations_per_entity: 3, relation_types: 6, seed: 7 }
    }
}

impl SyntheticConfig {
    pub fn attributes_per_entity(&self) -> usize {
        3 + self.extra_attributes
    }
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticGraphs {
    pub source_attrs: Vec<AttributeTriple>,
    pub source_rels: Vec<RelationTriple>,
    pub target_attrs: Vec<AttributeTriple>,
    pub target_rels: Vec<RelationTriple>,
    pub links: Vec<AlignmentPair>,
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ra", "ne", "to", "su", "vi", "da", "pe", "ri", "no", "ba", "le", "zu", "fa", "go", "ti", "ma", "se",
];
const COUNTRIES: [&str; 5] = ["France", "Japan", "Chile", "Kenya", "Norway"];

fn iri(s: String) -> Iri {
    Iri::new(s).expect("generated IRIs are valid")
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(3..=5);
    let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    s[..1].make_ascii_uppercase();
    s
}

/// Replaces one vowel with an accented form, if there is one past the first letter.
fn variant(name: &str) -> String {
    let idx = name.char_indices().skip(1).find(|(_, c)| "aeiou".contains(*c)).map(|(i, _)| i);
    match idx {
        Some(i) => {
            let accented = match &name[i..i + 1] {
                "a" => "à",
                "e" => "é",
                "i" => "ï",
                "o" => "ô",
                _ => "ü",
            };
            format!("{}{}{}", &name[..i], accented, &name[i + 1..])
        }
        None => format!("{name}e"),
    }
}

pub fn generate(config: &SyntheticConfig) -> SyntheticGraphs {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = HashSet::new();
    let mut names = Vec::with_capacity(config.pairs);
    while names.len() < config.pairs {
        let n = random_name(&mut rng);
        if seen.insert(n.clone()) {
            names.push(n);
        }
    }
    let src: Vec<Iri> = names.iter().map(|n| iri(format!("{SOURCE_NS}{}", variant(n)))).collect();
    let tgt: Vec<Iri> = names.iter().map(|n| iri(format!("{TARGET_NS}{n}"))).collect();
    let side_attrs = |ns: &str| -> Vec<Iri> {
        let mut v = vec![iri(format!("{ns}name")), iri(format!("{ns}country")), iri(format!("{ns}year"))];
        v.extend((0..config.extra_attributes).map(|j| iri(format!("{ns}attr{j}"))));
        v
    };
    let s_attr = side_attrs("http://fr.example.org/property/");
    let t_attr = side_attrs("http://en.example.org/property/");
    let s_rel: Vec<Iri> = (0..config.relation_types).map(|j| iri(format!("http://fr.example.org/rel/r{j}"))).collect();
    let t_rel: Vec<Iri> = (0..config.relation_types).map(|j| iri(format!("http://en.example.org/rel/r{j}"))).collect();

    let mut out = SyntheticGraphs::default();
    for i in 0..config.pairs {
        let country = *COUNTRIES.choose(&mut rng).expect("non-empty");
        let year = rng.random_range(1800..2020).to_string();
        let mut values = vec![(variant(&names[i]), names[i].clone()), (country.into(), country.into()), (year.clone(), year)];
        for _ in 0..config.extra_attributes {
            let v = rng.random_range(0..1000).to_string();
            values.push((v.clone(), v));
        }
        for (a, (sv, tv)) in values.into_iter().enumerate() {
            out.source_attrs.push(AttributeTriple::new(src[i].clone(), s_attr[a].clone(), sv));
            out.target_attrs.push(AttributeTriple::new(tgt[i].clone(), t_attr[a].clone(), tv));
        }
        out.links.push(AlignmentPair { source: src[i].clone(), target: tgt[i].clone() });
    }
    if config.pairs > 1 && config.relation_types > 0 {
        let per = config.relations_per_entity.min(config.pairs - 1);
        for i in 0..config.pairs {
            for j in 0..per {
                let tail = (i + 1 + j) % config.pairs;
                // skewed relation frequencies
                let r = (rng.random_range(0..config.relation_types * config.relation_types) as f64).sqrt() as usize;
                let r = config.relation_types - 1 - r.min(config.relation_types - 1);
                out.source_rels.push(RelationTriple::new(src[i].clone(), s_rel[r].clone(), src[tail].clone()));
                out.target_rels.push(RelationTriple::new(tgt[i].clone(), t_rel[r].clone(), tgt[tail].clone()));
            }
        }
    }
    out
}

impl SyntheticGraphs {
    /// Writes the five TSV files into `dir` and returns their paths.
    pub fn write_files(&self, dir: &Path) -> std::io::Result<BundleSources> {
        std::fs::create_dir_all(dir)?;
        let file = |name: &str| -> std::io::Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
            let p = dir.join(name);
            let f = std::fs::File::create(&p)?;
            Ok((p, std::io::BufWriter::new(f)))
        };
        let (source_attr, w) = file("source_attr.tsv")?;
        write_attribute_triples(w, &self.source_attrs)?;
        let (source_rel, w) = file("source_rel.tsv")?;
        write_relation_triples(w, &self.source_rels)?;
        let (target_attr, w) = file("target_attr.tsv")?;
        write_attribute_triples(w, &self.target_attrs)?;
        let (target_rel, w) = file("target_rel.tsv")?;
        write_relation_triples(w, &self.target_rels)?;
        let (links, w) = file("links.tsv")?;
        write_entity_links(w, &self.links)?;
        Ok(BundleSources { source_attr, source_rel, target_attr, target_rel, links })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;

    #[test]
    fn counts_and_determinism() {
        let c = SyntheticConfig::default();
        let g = generate(&c);
        assert_eq!(g.links.len(), 50);
        assert_eq!(g.source_attrs.len(), 50 * c.attributes_per_entity());
        assert_eq!(g.source_rels.len(), 50 * 3);
        let again = generate(&c);
        assert_eq!(g.source_attrs, again.source_attrs);
        assert_eq!(g.target_rels, again.target_rels);
        let kg = KnowledgeGraph::build(g.source_attrs.clone(), g.source_rels.clone());
        assert_eq!(kg.entities().len(), 50);
        assert_eq!(kg.relation_triples().len(), 150);
    }

    #[test]
    fn variant_changes_one_letter() {
        assert_eq!(variant("Kalo"), "Kàlo");
        assert_eq!(variant("Ktr"), "Ktre");
    }
}
