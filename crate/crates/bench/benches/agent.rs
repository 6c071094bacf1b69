use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ea_agent_core::ingest::{parse_attribute_triples, write_attribute_triples};
use ea_agent_core::kg::KnowledgeGraph;
use ea_agent_core::optimizer::{reward_from_flags, RewardConfig};
use ea_agent_core::planner::parse_plan;
use ea_agent_core::retrieval::NameSimilarity;
use ea_agent_core::selectors::{select_attribute_triples, select_relation_triples, EntropyTable, SelectionConfig};
use ea_agent_core::synthetic::{generate, SyntheticConfig};

fn graphs(pairs: usize) -> (KnowledgeGraph, KnowledgeGraph) {
    let g = generate(&SyntheticConfig { pairs, extra_attributes: 8, relations_per_entity: 6, relation_types: 12, seed: 1 });
    (KnowledgeGraph::build(g.source_attrs, g.source_rels), KnowledgeGraph::build(g.target_attrs, g.target_rels))
}

fn selectors(c: &mut Criterion) {
    let (src, _) = graphs(2_000);
    let config = SelectionConfig::default();
    let table = EntropyTable::whole_graph(&src);
    let entity = src.entities().iter().nth(100).unwrap().clone();
    c.bench_function("select_attribute_triples", |b| {
        b.iter(|| select_attribute_triples(&src, black_box(entity.as_str()), &table, &config).unwrap())
    });
    c.bench_function("select_relation_triples", |b| {
        b.iter(|| select_relation_triples(&src, black_box(entity.as_str()), &config).unwrap())
    });
    let scope: Vec<_> = src.entities().iter().take(10).cloned().collect();
    c.bench_function("entropy_over_10_entities", |b| b.iter(|| EntropyTable::over_entities(&src, black_box(&scope))));
}

fn retrieval(c: &mut Criterion) {
    let (src, tgt) = graphs(2_000);
    let index = NameSimilarity::new(&tgt);
    let entity = src.entities().iter().next().unwrap().clone();
    c.bench_function("name_similarity_top10_of_2000", |b| {
        b.iter(|| index.candidates(&src, black_box(entity.as_str()), 10).unwrap())
    });
}

fn reward_and_plans(c: &mut Criterion) {
    let cfg = RewardConfig::default();
    c.bench_function("reward_from_flags", |b| {
        b.iter(|| reward_from_flags(black_box(false), black_box(Some(true)), black_box(4), &cfg))
    });
    let text = "Plan:\n1. **AttributeTripleSelector**\n2. RelationTripleSelector - neighbours\n3. EntityAlignmentTool\n4. Reflector\n";
    c.bench_function("parse_plan", |b| b.iter(|| parse_plan(black_box(text)).unwrap()));
}

fn ingest(c: &mut Criterion) {
    let g = generate(&SyntheticConfig { pairs: 5_000, ..Default::default() });
    let mut tsv = Vec::new();
    write_attribute_triples(&mut tsv, &g.source_attrs).unwrap();
    c.bench_function("parse_25k_attribute_triples", |b| b.iter(|| parse_attribute_triples(black_box(&tsv[..])).unwrap()));
    c.bench_function("build_graph_5000_entities", |b| {
        b.iter_batched(
            || (g.source_attrs.clone(), g.source_rels.clone()),
            |(a, r)| KnowledgeGraph::build(a, r),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, selectors, retrieval, reward_and_plans, ingest);
criterion_main!(benches);
