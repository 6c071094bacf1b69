use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ea_agent_core::agent::{batch_order, for_each_entity, AgentContext, EntityFailure, Stage};
use ea_agent_core::config::{BackendKind, RunConfig};
use ea_agent_core::eval::{evaluate, round_summaries, GoldMap};
use ea_agent_core::executor::execute;
use ea_agent_core::ingest::{read_links_file, BundleSources, DatasetBundle};
use ea_agent_core::llm::{ledger_summary, Gateway};
use ea_agent_core::optimizer::{export_sft_dataset, run_training_round, ReplayPolicy, TrajectoryDataset};
use ea_agent_core::pipeline::{self, check_failures, gold_map, read_jsonl, write_json, write_jsonl};
use ea_agent_core::planner::{LlmPolicy, PlanningObservation, PlanningPolicy, RulePolicy, ToolPath};
use ea_agent_core::retrieval::{load_precomputed_candidates, write_candidates, CandidateMap, NameSimilarity};
use ea_agent_core::selectors::{rank_relation_triples, EntropyTable};
use ea_agent_core::{AlignmentOutcome, Error, Iri};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "ea-agent", version, about = "Tool-planning agent for entity alignment between two knowledge graphs")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the raw TSV files, split the gold links and write a bundle directory.
    Ingest(IngestArgs),
    /// Build or normalize candidate sets.
    Retrieve(RetrieveArgs),
    /// Print planner statistics, attribute entropies and relation scores of one entity.
    Stats(StatsArgs),
    /// Plan a tool path for every train or test entity.
    Plan(PlanArgs),
    /// Execute planned paths.
    Align(AlignArgs),
    /// Collect one round of trajectories and export the SFT dataset.
    TrainRound(TrainArgs),
    /// Score alignment outcomes against gold links.
    Eval(EvalArgs),
    /// Round-over-round reflector rate and path length.
    Report(ReportArgs),
    /// Full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    attr1: PathBuf,
    #[arg(long)]
    rel1: PathBuf,
    #[arg(long)]
    attr2: PathBuf,
    #[arg(long)]
    rel2: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Fraction of gold pairs used for training.
    #[arg(long, default_value_t = 0.3)]
    split: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetrieveMode {
    NameSim,
    File,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "name-sim")]
    mode: RetrieveMode,
    /// Precomputed candidates, for `--mode file`.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Source,
    Target,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    entity: String,
    #[arg(long, value_enum, default_value = "source")]
    side: Side,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Llm,
    Rule,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Answers from the bundle's gold links.
    Mock,
    Scripted,
    Http,
}

/// Settings shared by the commands that talk to a backend.
#[derive(Args)]
struct Settings {
    /// Run config providing backend, selection and reward settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Reply script for `--backend scripted`.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value = "rule")]
    policy: PolicyArg,
    /// Trajectories for `--policy replay`; may be repeated.
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// Output of `plan`.
    #[arg(long)]
    plans: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_transcript: bool,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 0)]
    round: u32,
    #[arg(long, value_enum, default_value = "llm")]
    policy: PolicyArg,
    /// Trajectories of earlier rounds; replayed and merged into the SFT export.
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    out_trajectories: PathBuf,
    #[arg(long)]
    out_sft: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// Gold links TSV, such as a bundle's `test_links.tsv`.
    #[arg(long)]
    links: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    trajectories: Vec<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// One line of `plan` output.
#[derive(Serialize, Deserialize)]
struct PlanRecord {
    entity: Iri,
    observation: PlanningObservation,
    path: ToolPath,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Stats(a) => stats(a),
        Command::Plan(a) => plan(a),
        Command::Align(a) => align(a),
        Command::TrainRound(a) => train_round(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    }
}

fn create(stage: &str, path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::data(stage, format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::data(stage, format!("{}: {e}", path.display())))
}

fn require(stage: &str, path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(stage, format!("{} not found", path.display())))
    }
}

fn load_bundle(dir: &Path) -> Result<DatasetBundle, Error> {
    require("ingest", &dir.join(ea_agent_core::ingest::MANIFEST_FILE))?;
    DatasetBundle::read_dir(dir).map(|(b, _)| b).map_err(|e| Error::data("ingest", e))
}

fn load_candidates(path: &Path, k: usize) -> Result<CandidateMap, Error> {
    require("retrieve", path)?;
    let f = File::open(path).map_err(|e| Error::data("retrieve", format!("{}: {e}", path.display())))?;
    load_precomputed_candidates(BufReader::new(f), k).map_err(|e| Error::data("retrieve", e))
}

fn load_dataset(paths: &[PathBuf]) -> Result<TrajectoryDataset, Error> {
    let mut ds = TrajectoryDataset::new();
    for p in paths {
        require("dataset", p)?;
        let f = File::open(p).map_err(|e| Error::data("dataset", format!("{}: {e}", p.display())))?;
        let part = TrajectoryDataset::read_jsonl(BufReader::new(f))
            .map_err(|e| Error::data("dataset", format!("{}: {e}", p.display())))?;
        ds.extend(part.records().iter().cloned()).map_err(|e| Error::data("dataset", e))?;
    }
    Ok(ds)
}

impl Settings {
    /// The config file when given, otherwise defaults, with CLI overrides applied.
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
                let mut c = RunConfig::from_toml(&text, path).map_err(|e| Error::config("config", e))?;
                c.resolve_paths(path.parent().unwrap_or(Path::new("")));
                c
            }
            None => RunConfig::default(),
        };
        match self.backend {
            Some(BackendArg::Mock) => config.backend.kind = BackendKind::Oracle,
            Some(BackendArg::Scripted) => config.backend.kind = BackendKind::Scripted,
            Some(BackendArg::Http) => config.backend.kind = BackendKind::Http,
            None => {}
        }
        if let Some(s) = &self.script {
            config.backend.script = Some(s.clone());
        }
        if config.backend.kind == BackendKind::Scripted {
            let script = config.backend.script.as_deref().ok_or_else(|| Error::config("backend", "--script is required"))?;
            require("backend", script)?;
        }
        Ok(config)
    }
}

fn gateway(config: &RunConfig, gold: &GoldMap) -> Result<Arc<Gateway>, Error> {
    Ok(Arc::new(Gateway::new(pipeline::build_backend(config, gold)?, config.llm.clone())))
}

fn policy(
    kind: PolicyArg,
    config: &RunConfig,
    gateway: &Arc<Gateway>,
    datasets: &[PathBuf],
) -> Result<Box<dyn PlanningPolicy>, Error> {
    let rule = RulePolicy { threshold: config.planner.gap_threshold };
    Ok(match kind {
        PolicyArg::Rule => Box::new(rule),
        PolicyArg::Llm => Box::new(LlmPolicy::new(gateway.clone()).with_fallback(rule)),
        PolicyArg::Replay => {
            if datasets.is_empty() {
                return Err(Error::config("plan", "--policy replay needs at least one --dataset"));
            }
            Box::new(ReplayPolicy::new(&load_dataset(datasets)?, rule))
        }
    })
}

fn split_sources(bundle: &DatasetBundle, split: Split) -> Vec<Iri> {
    let links = match split {
        Split::Train => &bundle.train_links,
        Split::Test => &bundle.test_links,
        Split::All => &bundle.gold_links,
    };
    batch_order(links.iter().map(|p| &p.source))
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let files = BundleSources { source_attr: a.attr1, source_rel: a.rel1, target_attr: a.attr2, target_rel: a.rel2, links: a.links };
    for p in [&files.source_attr, &files.source_rel, &files.target_attr, &files.target_rel, &files.links] {
        require("ingest", p)?;
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(Error::config("ingest", format!("--split must be in (0, 1), got {}", a.split)));
    }
    let bundle = DatasetBundle::load(&files, a.split, a.seed).map_err(|e| Error::data("ingest", e))?;
    let dangling = bundle.dangling_links().len();
    if dangling > 0 {
        log::warn!("{dangling} gold links reference entities missing from their graph");
    }
    let m = bundle.write_dir(&a.out, &files, a.split, a.seed).map_err(|e| Error::data("ingest", e))?;
    println!(
        "source: {} entities, {} attribute and {} relation triples",
        m.source.entities, m.source.attribute_triples, m.source.relation_triples
    );
    println!(
        "target: {} entities, {} attribute and {} relation triples",
        m.target.entities, m.target.attribute_triples, m.target.relation_triples
    );
    println!("links: {} train, {} test -> {}", m.train_links, m.test_links, a.out.display());
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<(), Error> {
    if a.k == 0 {
        return Err(Error::config("retrieve", "--k must be positive"));
    }
    let bundle = load_bundle(&a.bundle)?;
    let map = match a.mode {
        RetrieveMode::File => {
            let file = a.file.as_deref().ok_or_else(|| Error::config("retrieve", "--mode file needs --file"))?;
            load_candidates(file, a.k)?
        }
        RetrieveMode::NameSim => {
            if a.file.is_some() {
                return Err(Error::config("retrieve", "--file is only used with --mode file"));
            }
            let index = NameSimilarity::new(&bundle.target_graph);
            let sources = bundle.gold_links.iter().map(|p| &p.source).filter(|s| bundle.source_graph.contains(s.as_str()));
            index.candidates_for(&bundle.source_graph, sources, a.k).map_err(|e| Error::data("retrieve", e))?
        }
    };
    let gold = gold_map(&bundle);
    let recalled = map.iter().filter(|(s, set)| gold.get(*s).is_some_and(|g| set.contains(g.as_str()))).count();
    write_candidates(create("retrieve", &a.out)?, &map).map_err(|e| Error::data("retrieve", e))?;
    println!("{} candidate sets, gold in top {} for {recalled}", map.len(), a.k);
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Error> {
    let config = a.settings.resolve()?;
    let bundle = load_bundle(&a.bundle)?;
    let graph = match a.side {
        Side::Source => &bundle.source_graph,
        Side::Target => &bundle.target_graph,
    };
    let s = graph.entity_statistics(&a.entity, &config.name_attributes).map_err(|e| Error::data("stats", e))?;
    println!("entity        {}", a.entity);
    println!("attr_cnt_all  {}", s.attr_cnt_all);
    println!("attr_cnt      {}", s.attr_cnt);
    println!("rel_cnt_all   {}", s.rel_cnt_all);
    println!("rel_cnt       {}", s.rel_cnt);
    println!("signal_attr   {}", s.signal_attr);
    let table = EntropyTable::whole_graph(graph);
    println!("\nattributes (entropy, whole graph)");
    let mut attrs: Vec<_> = graph.attributes_of(&a.entity).collect();
    attrs.sort_by(|x, y| (&x.attribute, &x.value).cmp(&(&y.attribute, &y.value)));
    for t in attrs {
        let h = table.get(t.attribute.as_str()).unwrap_or(f64::NAN);
        let mark = if config.execution.selection.important_attributes.matches(&t.attribute) { " *" } else { "" };
        println!("  {h:>8.4}  {}  {}{mark}", t.attribute, t.value);
    }
    println!("\nrelations (score)");
    for r in rank_relation_triples(graph, &a.entity).map_err(|e| Error::data("stats", e))? {
        let t = r.triple;
        println!("  {:>8.4}  {} {} {}", r.score, t.head, t.relation, t.tail);
    }
    Ok(())
}

fn plan(a: PlanArgs) -> Result<(), Error> {
    let config = a.settings.resolve()?;
    let bundle = load_bundle(&a.bundle)?;
    let candidates = load_candidates(&a.candidates, config.data.k)?;
    let gold = gold_map(&bundle);
    let gw = gateway(&config, &gold)?;
    let policy = policy(a.policy, &config, &gw, &a.datasets)?;
    let ctx = AgentContext {
        source_graph: &bundle.source_graph,
        target_graph: &bundle.target_graph,
        candidates: &candidates,
        gateway: &gw,
        exec: &config.execution,
        name_whitelist: &config.name_attributes,
    };
    let entities = split_sources(&bundle, a.split);
    let (records, failures) = for_each_entity(entities.iter(), |e| {
        let observation = ctx.observe(e)?;
        let (path, _, _) = ctx.plan(policy.as_ref(), &observation)?;
        Ok(PlanRecord { entity: e.clone(), observation, path })
    });
    check_failures("plan", entities.len(), &failures)?;
    write_jsonl(&a.out, &records)?;
    let reflect = records.iter().filter(|r| r.path.has_reflector()).count();
    println!("{} paths ({} with reflector), {} failures", records.len(), reflect, failures.len());
    Ok(())
}

fn align(a: AlignArgs) -> Result<(), Error> {
    let config = a.settings.resolve()?;
    let bundle = load_bundle(&a.bundle)?;
    let candidates = load_candidates(&a.candidates, config.data.k)?;
    require("align", &a.plans)?;
    let plans: Vec<PlanRecord> = read_jsonl(&a.plans)?;
    let paths: HashMap<Iri, ToolPath> = plans.into_iter().map(|r| (r.entity, r.path)).collect();
    let gw = gateway(&config, &gold_map(&bundle))?;
    let (mut outcomes, failures) = for_each_entity(paths.keys(), |e| {
        let cands = candidates.get(e).ok_or_else(|| EntityFailure::new(e, Stage::Execute, "no candidate set"))?;
        execute(&paths[e], e, &bundle.source_graph, &bundle.target_graph, cands, &gw, &config.execution)
            .map_err(|err| EntityFailure::from_exec(e, err))
    });
    check_failures("align", paths.len(), &failures)?;
    if a.no_transcript {
        for o in &mut outcomes {
            o.transcript.clear();
        }
    }
    write_jsonl(&a.out, &outcomes)?;
    let tokens = ledger_summary(&gw.ledger());
    println!(
        "{} outcomes, {} failures, {} tokens over {} calls",
        outcomes.len(),
        failures.len(),
        tokens.total_tokens,
        tokens.calls
    );
    Ok(())
}

fn train_round(a: TrainArgs) -> Result<(), Error> {
    let config = a.settings.resolve()?;
    config.reward.validate().map_err(|e| Error::config("config", e))?;
    let bundle = load_bundle(&a.bundle)?;
    let candidates = load_candidates(&a.candidates, config.data.k)?;
    let gold = gold_map(&bundle);
    let gw = gateway(&config, &gold)?;
    let mut dataset = load_dataset(&a.datasets)?;
    let policy = policy(a.policy, &config, &gw, &a.datasets)?;
    let ctx = AgentContext {
        source_graph: &bundle.source_graph,
        target_graph: &bundle.target_graph,
        candidates: &candidates,
        gateway: &gw,
        exec: &config.execution,
        name_whitelist: &config.name_attributes,
    };
    let entities = split_sources(&bundle, Split::Train);
    let result = run_training_round(&ctx, policy.as_ref(), entities.iter(), &gold, &config.reward, a.round);
    check_failures("train-round", entities.len(), &result.failures)?;
    let mut w = create("train-round", &a.out_trajectories)?;
    ea_agent_core::optimizer::write_records(&mut w, &result.records).map_err(|e| Error::data("train-round", e))?;
    let collected = result.records.len();
    dataset.extend(result.records).map_err(|e| Error::data("train-round", e))?;
    let sft = if dataset.is_empty() {
        create("export", &a.out_sft)?;
        0
    } else {
        export_sft_dataset(&dataset, create("export", &a.out_sft)?).map_err(|e| Error::data("export", e))?
    };
    if !result.failures.is_empty() {
        log::warn!("{} entities failed", result.failures.len());
    }
    println!("round {}: {collected} trajectories, {sft} SFT records", a.round);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    for p in [&a.outcomes, &a.candidates, &a.links] {
        require("eval", p)?;
    }
    let outcomes: Vec<AlignmentOutcome> = read_jsonl(&a.outcomes)?;
    let candidates = load_candidates(&a.candidates, usize::MAX)?;
    let gold: GoldMap = read_links_file(&a.links)
        .map_err(|e| Error::data("eval", e))?
        .into_iter()
        .map(|p| (p.source, p.target))
        .collect::<BTreeMap<_, _>>();
    let report = evaluate(&outcomes, &candidates, &gold).map_err(|e| Error::data("eval", e))?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!("entities        {}", report.n_entities);
    println!("Hits@1          {:.4}", report.hits_at_1);
    println!("Hits@10         {:.4}", report.hits_at_10);
    println!("MRR             {:.4}", report.mrr);
    println!("reflector rate  {:.4}", report.reflector_rate);
    println!("avg path length {:.3}", report.avg_path_length);
    println!("avg tokens      {:.1}", report.avg_tokens_per_entity);
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Error> {
    let ds = load_dataset(&a.trajectories)?;
    println!("round  records  reflector  path len  rewritten reflector  rewritten len  mean reward");
    for s in round_summaries(&ds) {
        println!(
            "{:>5}  {:>7}  {:>8.2}%  {:>8.3}  {:>18.2}%  {:>13.3}  {:>11.4}",
            s.round,
            s.records,
            s.reflector_rate * 100.0,
            s.avg_path_length,
            s.rewritten_reflector_rate * 100.0,
            s.rewritten_avg_path_length,
            s.mean_reward
        );
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Error> {
    let mut config = RunConfig::load(&a.config).map_err(|e| Error::config("config", e))?;
    if let Some(out) = a.out {
        config.output_dir = out;
    }
    let result = pipeline::run_pipeline(&config)?;
    let r = &result.report;
    println!(
        "{} test entities: Hits@1 {:.4}  Hits@10 {:.4}  MRR {:.4}  reflector {:.2}%",
        r.n_entities,
        r.hits_at_1,
        r.hits_at_10,
        r.mrr,
        r.reflector_rate * 100.0
    );
    println!("artifacts in {}", result.output_dir.display());
    Ok(())
}
