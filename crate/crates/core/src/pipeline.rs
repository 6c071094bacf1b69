//! Training rounds, test-split inference and evaluation, end to end.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{align_entities, AgentContext, EntityFailure};
use crate::config::{BackendKind, PolicyKind, RunConfig};
use crate::eval::{evaluate, round_summaries, EvalReport, GoldMap, RoundSummary};
use crate::ingest::DatasetBundle;
use crate::kg::Iri;
use crate::llm::{ledger_summary, ChatBackend, Gateway, HttpBackend, OracleMock, Script, ScriptedMock};
use crate::optimizer::{export_sft_dataset, run_training_round, write_records, ReplayPolicy, TrajectoryDataset};
use crate::planner::{LlmPolicy, PlanningPolicy, RulePolicy};
use crate::retrieval::{load_precomputed_candidates, write_candidates, CandidateMap, NameSimilarity};
use crate::{Error, ErrorKind};

pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const SFT_FILE: &str = "sft.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TOKENS_FILE: &str = "tokens.json";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";

pub fn trajectory_file(round: u32) -> String {
    format!("trajectories_round_{round}.jsonl")
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), Error> {
    let f = File::create(path).map_err(|e| Error::data("write", format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::data("write", e))?;
        w.write_all(b"\n").map_err(|e| Error::data("write", format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::data("write", format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Error> {
    let f = File::open(path).map_err(|e| Error::data("read", format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::data("read", format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::data("read", format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::data("write", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::data("write", format!("{}: {e}", path.display())))
}

pub fn load_bundle(config: &RunConfig) -> Result<DatasetBundle, Error> {
    let bundle = match (&config.data.bundle, &config.data.sources) {
        (Some(dir), _) => DatasetBundle::read_dir(dir).map(|(b, _)| b),
        (None, Some(sources)) => DatasetBundle::load(sources, config.data.train_ratio, config.seed),
        (None, None) => return Err(Error::config("ingest", "no input data configured")),
    }
    .map_err(|e| Error::data("ingest", e))?;
    let dangling = bundle.dangling_links().len();
    if dangling > 0 {
        log::warn!("{dangling} gold links reference entities missing from their graph");
    }
    Ok(bundle)
}

pub fn gold_map(bundle: &DatasetBundle) -> GoldMap {
    bundle.gold_links.iter().map(|p| (p.source.clone(), p.target.clone())).collect()
}

/// Reads the configured candidates file, or retrieves by name similarity
/// for every linked source present in the source graph.
pub fn load_candidates(config: &RunConfig, bundle: &DatasetBundle) -> Result<CandidateMap, Error> {
    if let Some(path) = &config.data.candidates {
        let f = File::open(path).map_err(|e| Error::data("retrieve", format!("{}: {e}", path.display())))?;
        return load_precomputed_candidates(BufReader::new(f), config.data.k).map_err(|e| Error::data("retrieve", e));
    }
    let index = NameSimilarity::new(&bundle.target_graph);
    let sources = bundle.gold_links.iter().map(|p| &p.source).filter(|s| bundle.source_graph.contains(s.as_str()));
    index.candidates_for(&bundle.source_graph, sources, config.data.k).map_err(|e| Error::data("retrieve", e))
}

pub fn build_backend(config: &RunConfig, gold: &GoldMap) -> Result<Arc<dyn ChatBackend>, Error> {
    Ok(match config.backend.kind {
        BackendKind::Oracle => Arc::new(OracleMock::new(gold.iter().map(|(s, t)| (s.clone(), t.clone())))),
        BackendKind::Scripted => {
            let path = config.backend.script.as_ref().ok_or_else(|| Error::config("backend", "no script file"))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("backend", format!("{}: {e}", path.display())))?;
            let script: Script = serde_json::from_str(&text)
                .map_err(|e| Error::config("backend", format!("{}: {e}", path.display())))?;
            Arc::new(ScriptedMock::from_script(script))
        }
        BackendKind::Http => Arc::new(HttpBackend::from_env(config.http.clone())),
    })
}

pub fn initial_policy(config: &RunConfig, gateway: &Arc<Gateway>) -> Box<dyn PlanningPolicy> {
    let rule = RulePolicy { threshold: config.planner.gap_threshold };
    match config.planner.policy {
        PolicyKind::Rule => Box::new(rule),
        PolicyKind::Llm => Box::new(LlmPolicy::new(gateway.clone()).with_fallback(rule)),
    }
}

/// A batch where every entity failed is an error; its kind follows the
/// first failure.
pub fn check_failures(stage: &str, attempted: usize, failures: &[EntityFailure]) -> Result<(), Error> {
    if attempted > 0 && failures.len() == attempted {
        let first = &failures[0];
        let kind = if first.backend { ErrorKind::Backend } else { ErrorKind::Data };
        return Err(Error::new(kind, stage, format!("all {attempted} entities failed; first: {first}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub rounds: u32,
    pub backend: String,
    pub initial_policy: String,
    pub train_entities: usize,
    pub test_entities: usize,
    pub trajectory_files: Vec<String>,
    pub sft_file: String,
    pub sft_records: usize,
    pub outcomes_file: String,
    pub report_file: String,
    pub tokens_file: String,
    pub failures: usize,
    pub rounds_summary: Vec<RoundSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub report: EvalReport,
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
}

/// Runs `config.rounds` training rounds on the train links, replaying the
/// accumulated dataset after each, then aligns the test links with the
/// final policy and evaluates. Artifacts go to `config.output_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineResult, Error> {
    config.validate().map_err(|e| Error::config("config", e))?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::data("setup", format!("{}: {e}", out.display())))?;

    let bundle = load_bundle(config)?;
    let gold = gold_map(&bundle);
    let candidates = load_candidates(config, &bundle)?;
    let f = File::create(out.join(CANDIDATES_FILE)).map_err(|e| Error::data("retrieve", e))?;
    write_candidates(BufWriter::new(f), &candidates).map_err(|e| Error::data("retrieve", e))?;

    let gateway = Arc::new(Gateway::new(build_backend(config, &gold)?, config.llm.clone()));
    let ctx = AgentContext {
        source_graph: &bundle.source_graph,
        target_graph: &bundle.target_graph,
        candidates: &candidates,
        gateway: &gateway,
        exec: &config.execution,
        name_whitelist: &config.name_attributes,
    };
    let rule = RulePolicy { threshold: config.planner.gap_threshold };
    let train: Vec<&Iri> = bundle.train_links.iter().map(|p| &p.source).collect();
    let test: Vec<&Iri> = bundle.test_links.iter().map(|p| &p.source).collect();

    let mut dataset = TrajectoryDataset::new();
    let mut policy = initial_policy(config, &gateway);
    let mut failures = Vec::new();
    let mut trajectory_files = Vec::new();
    for round in 0..config.rounds {
        log::info!("round {round}: {} entities with the {} policy", train.len(), policy.name());
        let result = run_training_round(&ctx, policy.as_ref(), train.iter().copied(), &gold, &config.reward, round);
        check_failures(&format!("train-round {round}"), crate::agent::batch_order(train.iter().copied()).len(), &result.failures)?;
        let name = trajectory_file(round);
        let f = File::create(out.join(&name)).map_err(|e| Error::data("train", e))?;
        write_records(BufWriter::new(f), &result.records).map_err(|e| Error::data("train", e))?;
        trajectory_files.push(name);
        dataset.extend(result.records).map_err(|e| Error::data("train", e))?;
        failures.extend(result.failures);
        policy = Box::new(ReplayPolicy::new(&dataset, rule));
    }

    let sft_records = if dataset.is_empty() {
        log::warn!("no trajectories collected; SFT export is empty");
        File::create(out.join(SFT_FILE)).map_err(|e| Error::data("export", e))?;
        0
    } else {
        let f = File::create(out.join(SFT_FILE)).map_err(|e| Error::data("export", e))?;
        export_sft_dataset(&dataset, BufWriter::new(f)).map_err(|e| Error::data("export", e))?
    };

    log::info!("inference: {} test entities with the {} policy", test.len(), policy.name());
    let (outcomes, test_failures) = align_entities(&ctx, policy.as_ref(), test.iter().copied());
    check_failures("inference", crate::agent::batch_order(test.iter().copied()).len(), &test_failures)?;
    failures.extend(test_failures);
    write_jsonl(&out.join(OUTCOMES_FILE), &outcomes)?;

    let report = evaluate(&outcomes, &candidates, &gold).map_err(|e| Error::data("eval", e))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_json(&out.join(TOKENS_FILE), &ledger_summary(&gateway.ledger()))?;
    write_jsonl(&out.join(FAILURES_FILE), &failures)?;

    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        rounds: config.rounds,
        backend: gateway.backend_name().to_string(),
        initial_policy: initial_policy(config, &gateway).name().to_string(),
        train_entities: train.len(),
        test_entities: test.len(),
        trajectory_files,
        sft_file: SFT_FILE.into(),
        sft_records,
        outcomes_file: OUTCOMES_FILE.into(),
        report_file: REPORT_FILE.into(),
        tokens_file: TOKENS_FILE.into(),
        failures: failures.len(),
        rounds_summary: round_summaries(&dataset),
    };
    write_json(&out.join(RUN_MANIFEST_FILE), &manifest)?;
    std::fs::write(out.join("config.toml"), config.to_toml()).map_err(|e| Error::data("write", e))?;
    Ok(PipelineResult { report, manifest, output_dir: out.clone() })
}
