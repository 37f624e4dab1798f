//! `groundkit` command-line entry point.
//!
//! Exit codes: 0 on success, 1 when the input data is bad, 2 on usage errors.

mod config;

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundkit::corpus::{load_corpus, validate_corpus, Corpus, Severity};
use groundkit::dedup::{dedup_elements, read_unique_ids, write_unique_ids, LabelMode};
use groundkit::evaluation::{
    load_benchmark, load_predictions, report_table, score, validate_benchmark, CoordSpace, PairPolicy, ScoreOptions,
};
use groundkit::instructions::client::HttpTransport;
use groundkit::instructions::export::{load_pool, write_pool, PoolManifest};
use groundkit::instructions::templates::TemplateLibrary;
use groundkit::instructions::{
    export_sft, load_sft, pick_samples_for, pool_element_ids, sample_mix, select_rl_unseen, synthesize_templates,
    synthesize_with_model, InstructionKind, MixFractions,
};
use groundkit::jsonl::write_jsonl;
use groundkit::rewards::server::RewardServer;
use groundkit::stats::{compute_stats, emit_report, ReportFormat};

use config::GlobalConfig;

#[derive(Debug, Parser)]
#[command(
    name = "groundkit",
    version,
    about = "Grounding data pipeline, rewards and evaluation for GUI screenshot corpora"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: GROUNDKIT_WORKERS, the config file, or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check corpus invariants and report every violation.
    Validate(ValidateArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Collapse near-duplicate elements into unique representatives.
    Dedup(DedupArgs),
    /// Synthesize instructions for the unique elements.
    Synth(SynthArgs),
    /// Sample the training mix from a pool and write SFT records.
    ExportSft(ExportSftArgs),
    /// Pick elements not used for SFT as the RL set.
    SelectRl(SelectRlArgs),
    /// Serve reward requests as newline-delimited JSON.
    RewardServer(RewardServerArgs),
    /// Score predictions against a benchmark.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct CorpusArg {
    /// Corpus directory or its manifest.json.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Treat out-of-image and degenerate boxes as errors.
    #[arg(long)]
    strict: bool,
    /// Write the full report as JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Save the corpus with clamped boxes to this directory.
    #[arg(long, value_name = "DIR")]
    write_fixed: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Write JSON stats here (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also print the summary table.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelModeArg {
    Exact,
    Normalized,
}

#[derive(Debug, Args)]
struct DedupArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Largest Hamming distance between duplicate hashes.
    #[arg(long)]
    threshold: Option<u32>,
    /// How labels must match for two elements to be duplicates.
    #[arg(long, value_enum)]
    label_mode: Option<LabelModeArg>,
    /// Crops are edge-padded to at least this many pixels per side.
    #[arg(long)]
    min_crop_px: Option<usize>,
    /// Seed for every random choice (default: the config file, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Unique element ids, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Cluster report as JSON.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Unique ids written by `dedup`.
    #[arg(long, value_name = "FILE")]
    unique: PathBuf,
    /// Comma-separated instruction kinds: direct, functional, spatial.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Seed for every random choice (default: the config file, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with textual.txt, general.txt and spatial.jsonl (default: shipped sets).
    #[arg(long, value_name = "DIR")]
    templates: Option<PathBuf>,
    /// Template instructions only, even when a model endpoint is configured.
    #[arg(long)]
    offline: bool,
    /// Extra rounds for prompts whose answer was rejected.
    #[arg(long)]
    regeneration_budget: Option<u32>,
    /// Output pool directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportSftArgs {
    /// Pool directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pool: PathBuf,
    /// Corpus the pool was built from (default: the path recorded in the pool).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Direct, functional and spatial fractions.
    #[arg(long, value_name = "D,F,S")]
    mix: Option<String>,
    /// Number of records to sample.
    #[arg(long)]
    total: Option<usize>,
    /// Seed for every random choice (default: the config file, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// SFT records, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectRlArgs {
    /// Pool directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pool: PathBuf,
    /// Corpus the pool was built from (default: the path recorded in the pool).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// SFT records whose elements must not be reused.
    #[arg(long, value_name = "FILE")]
    exclude: Vec<PathBuf>,
    /// Number of elements to select.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for every random choice (default: the config file, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// RL records, in the SFT record format.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PairArg {
    First,
    Last,
}

impl From<PairArg> for PairPolicy {
    fn from(p: PairArg) -> Self {
        match p {
            PairArg::First => PairPolicy::First,
            PairArg::Last => PairPolicy::Last,
        }
    }
}

#[derive(Debug, Args)]
struct RewardServerArgs {
    /// Listen on a TCP address such as 127.0.0.1:7000.
    #[arg(long, conflicts_with = "stdio")]
    listen: Option<String>,
    /// Serve stdin to stdout.
    #[arg(long)]
    stdio: bool,
    /// Which coordinate pair counts when a text rollout holds several.
    #[arg(long, value_enum)]
    pair_policy: Option<PairArg>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Benchmark records, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    benchmark: PathBuf,
    /// Predictions, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// pixel, unit or milli.
    #[arg(long, value_parser = |s: &str| s.parse::<CoordSpace>())]
    coord_space: Option<CoordSpace>,
    /// Comma-separated tag keys for the breakdown table.
    #[arg(long, value_delimiter = ',')]
    by: Option<Vec<String>>,
    /// Which coordinate pair counts when the output holds several.
    #[arg(long, value_enum)]
    pair_policy: Option<PairArg>,
    /// Count points on the box edge as misses.
    #[arg(long)]
    exclusive_bounds: bool,
    /// Fail on predictions for unknown records.
    #[arg(long)]
    strict_ids: bool,
    /// Report JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// A failed run: exit code and message.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn data(message: impl ToString) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(path) => GlobalConfig::load(path).map_err(usage)?,
        None => GlobalConfig::default(),
    };
    if let Some(level) = &cli.log_level {
        cfg.log_level = level.clone();
    }
    cfg.resolve_workers(cli.workers).map_err(usage)?;
    apply_flags(&mut cfg, &cli.command)?;
    env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );

    match cli.command {
        Command::Validate(a) => cmd_validate(&cfg, a),
        Command::Stats(a) => cmd_stats(&cfg, a),
        Command::Dedup(a) => cmd_dedup(&cfg, a),
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::ExportSft(a) => cmd_export_sft(&cfg, a),
        Command::SelectRl(a) => cmd_select_rl(&cfg, a),
        Command::RewardServer(a) => cmd_reward_server(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
    }
}

/// Fold flag values into the config so the logged config is what runs.
fn apply_flags(cfg: &mut GlobalConfig, command: &Command) -> Outcome {
    let set_corpus = |cfg: &mut GlobalConfig, c: &Option<PathBuf>| {
        if let Some(c) = c {
            cfg.corpus = Some(c.clone());
        }
    };
    let set_seed = |cfg: &mut GlobalConfig, s: Option<u64>| {
        if let Some(s) = s {
            cfg.seed = s;
        }
    };
    match command {
        Command::Validate(a) => set_corpus(cfg, &a.corpus.corpus),
        Command::Stats(a) => set_corpus(cfg, &a.corpus.corpus),
        Command::Dedup(a) => {
            set_corpus(cfg, &a.corpus.corpus);
            set_seed(cfg, a.seed);
            if let Some(t) = a.threshold {
                cfg.dedup.hamming_threshold = t;
            }
            if let Some(m) = a.label_mode {
                cfg.dedup.label_mode = match m {
                    LabelModeArg::Exact => LabelMode::Exact,
                    LabelModeArg::Normalized => LabelMode::Normalized,
                };
            }
            if let Some(px) = a.min_crop_px {
                cfg.dedup.min_crop_px = px;
            }
            cfg.dedup.validate().map_err(usage)?;
        }
        Command::Synth(a) => {
            set_corpus(cfg, &a.corpus.corpus);
            set_seed(cfg, a.seed);
            if let Some(kinds) = &a.kinds {
                cfg.synth.kinds = kinds
                    .iter()
                    .map(|k| k.parse::<InstructionKind>())
                    .collect::<Result<_, _>>()
                    .map_err(usage)?;
            }
            if let Some(b) = a.regeneration_budget {
                cfg.synth.regeneration_budget = b;
            }
        }
        Command::ExportSft(a) => {
            set_corpus(cfg, &a.corpus);
            set_seed(cfg, a.seed);
            if let Some(m) = &a.mix {
                cfg.mix.fractions = m.parse::<MixFractions>().map_err(usage)?;
            }
            if let Some(t) = a.total {
                cfg.mix.total = t;
            }
            cfg.mix.fractions.validate().map_err(usage)?;
        }
        Command::SelectRl(a) => {
            set_corpus(cfg, &a.corpus);
            set_seed(cfg, a.seed);
            if let Some(k) = a.k {
                cfg.rl.k = k;
            }
        }
        Command::RewardServer(a) => {
            if let Some(l) = &a.listen {
                cfg.reward_server.listen = Some(l.clone());
            }
            if let Some(p) = a.pair_policy {
                cfg.reward_server.pair_policy = p.into();
            }
        }
        Command::Eval(a) => {
            if let Some(c) = a.coord_space {
                cfg.eval.coord_space = Some(c);
            }
            if let Some(by) = &a.by {
                cfg.eval.by = by.clone();
            }
            if let Some(p) = a.pair_policy {
                cfg.eval.pair_policy = p.into();
            }
            cfg.eval.exclusive_bounds |= a.exclusive_bounds;
            cfg.eval.strict_ids |= a.strict_ids;
        }
    }
    Ok(())
}

fn corpus_path(cfg: &GlobalConfig) -> Result<&Path, Failure> {
    cfg.corpus
        .as_deref()
        .ok_or_else(|| usage("--corpus is required (or set \"corpus\" in the config file)"))
}

fn open_corpus(path: &Path) -> Result<Corpus, Failure> {
    load_corpus(path).map_err(data)
}

/// Write to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(data)
        }
    }
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// The CLI owns the worker pool; library calls run inside it.
fn worker_pool(cfg: &GlobalConfig) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .map_err(data)
}

fn cmd_validate(cfg: &GlobalConfig, a: ValidateArgs) -> Outcome {
    let mut corpus = open_corpus(corpus_path(cfg)?)?;
    let report = validate_corpus(&mut corpus, a.strict);
    for d in &report.diagnostics {
        let tag = match d.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        eprintln!("{tag}: {} [{:?}]: {}", d.record_id, d.rule, d.message);
    }
    println!("{} error(s), {} warning(s)", report.errors, report.warnings);
    if let Some(out) = &a.out {
        emit(Some(out), &pretty(&report))?;
    }
    if let Some(dir) = &a.write_fixed {
        groundkit::corpus::save_corpus(&corpus, dir).map_err(data)?;
    }
    if report.errors > 0 {
        return Err(data(format!("corpus has {} error(s)", report.errors)));
    }
    Ok(())
}

fn cmd_stats(cfg: &GlobalConfig, a: StatsArgs) -> Outcome {
    let corpus = open_corpus(corpus_path(cfg)?)?;
    let stats = compute_stats(&corpus).map_err(data)?;
    emit(a.out.as_deref(), &emit_report(&stats, ReportFormat::Json))?;
    if a.table {
        emit(None, &emit_report(&stats, ReportFormat::Table))?;
    }
    Ok(())
}

fn cmd_dedup(cfg: &GlobalConfig, a: DedupArgs) -> Outcome {
    let corpus = open_corpus(corpus_path(cfg)?)?;
    let outcome = dedup_elements(&corpus, &cfg.dedup, cfg.seed, cfg.workers()).map_err(data)?;
    write_unique_ids(&a.out, &outcome.unique_ids).map_err(data)?;
    if let Some(report) = &a.report {
        emit(Some(report), &pretty(&outcome.report))?;
    }
    log::info!(
        "{} element(s) clustered into {} unique, {} skipped",
        outcome.report.input_count,
        outcome.report.unique_count,
        outcome.report.skipped_count
    );
    Ok(())
}

fn cmd_synth(cfg: &GlobalConfig, a: SynthArgs) -> Outcome {
    let corpus = open_corpus(corpus_path(cfg)?)?;
    let unique = read_unique_ids(&a.unique).map_err(data)?;
    let lib = match &a.templates {
        Some(dir) => TemplateLibrary::from_dir(dir).map_err(usage)?,
        None => TemplateLibrary::builtin(),
    };
    let pool = worker_pool(cfg)?;
    let mut samples = pool
        .install(|| synthesize_templates(&corpus, &unique, &lib, &cfg.synth, cfg.seed))
        .map_err(data)?;
    let endpoint = cfg.synth.client.resolved_endpoint();
    if !a.offline && endpoint.is_some() {
        let transport = HttpTransport::new(&cfg.synth.client).map_err(usage)?;
        let model = synthesize_with_model(&corpus, &unique, &cfg.synth, &transport).map_err(data)?;
        log::info!(
            "model: {} accepted, {} rejected",
            model.samples.len(),
            model.rejected.len()
        );
        fs::create_dir_all(&a.out).map_err(data)?;
        write_jsonl(&a.out.join("rejected.jsonl"), &model.rejected).map_err(data)?;
        samples.extend(model.samples);
    } else {
        log::info!("no model endpoint in use; template instructions only");
    }
    for s in &samples {
        s.check().map_err(data)?;
    }
    let manifest = PoolManifest::describe(&corpus, cfg.seed, &samples);
    write_pool(&a.out, &manifest, &samples).map_err(data)?;
    log::info!("wrote {} sample(s) to {}", samples.len(), a.out.display());
    Ok(())
}

fn pool_corpus(cfg: &GlobalConfig, manifest: &PoolManifest) -> Result<Corpus, Failure> {
    let path = cfg
        .corpus
        .clone()
        .unwrap_or_else(|| PathBuf::from(&manifest.corpus_root));
    open_corpus(&path)
}

fn cmd_export_sft(cfg: &GlobalConfig, a: ExportSftArgs) -> Outcome {
    let (manifest, pool) = load_pool(&a.pool).map_err(data)?;
    let corpus = pool_corpus(cfg, &manifest)?;
    let dataset = sample_mix(&pool, &cfg.mix, cfg.seed).map_err(data)?;
    let records = export_sft(&dataset, &corpus, &a.out).map_err(data)?;
    log::info!("wrote {} SFT record(s) to {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_select_rl(cfg: &GlobalConfig, a: SelectRlArgs) -> Outcome {
    let (manifest, pool) = load_pool(&a.pool).map_err(data)?;
    let corpus = pool_corpus(cfg, &manifest)?;
    let mut used = HashSet::new();
    for path in &a.exclude {
        used.extend(load_sft(path).map_err(data)?.into_iter().map(|r| r.element_id));
    }
    let ids = select_rl_unseen(&pool_element_ids(&pool), &used, cfg.rl.k, cfg.seed).map_err(data)?;
    let samples = pick_samples_for(&ids, &pool, cfg.seed);
    let records = export_sft(&samples, &corpus, &a.out).map_err(data)?;
    log::info!("wrote {} RL record(s) to {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_reward_server(cfg: &GlobalConfig, a: RewardServerArgs) -> Outcome {
    let server = RewardServer::new(cfg.reward_server.pair_policy);
    if a.stdio {
        let stdin = io::stdin().lock();
        let stdout = BufWriter::new(io::stdout().lock());
        let n = server.serve(stdin, stdout).map_err(data)?;
        log::info!("answered {n} request(s)");
        return Ok(());
    }
    let addr = cfg
        .reward_server
        .listen
        .as_deref()
        .ok_or_else(|| usage("reward-server needs --listen <addr> or --stdio"))?;
    let listener = TcpListener::bind(addr).map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
    log::info!("listening on {}", listener.local_addr().map_err(data)?);
    server.serve_tcp(listener).map_err(data)
}

fn cmd_eval(cfg: &GlobalConfig, a: EvalArgs) -> Outcome {
    let benchmark = load_benchmark(&a.benchmark).map_err(data)?;
    validate_benchmark(&benchmark).map_err(data)?;
    let predictions = load_predictions(&a.pred).map_err(data)?;
    let opts = ScoreOptions {
        coord_space: cfg.eval.coord_space,
        pair_policy: cfg.eval.pair_policy,
        exclusive_bounds: cfg.eval.exclusive_bounds,
        strict_ids: cfg.eval.strict_ids,
    };
    let report = score(&benchmark, &predictions, &opts).map_err(data)?;
    let table = report_table(&report, &cfg.eval.by).map_err(usage)?;
    emit(None, &table.text)?;
    if let Some(out) = &a.out {
        let body = serde_json::json!({"report": report, "table": table.json});
        emit(Some(out), &pretty(&body))?;
    }
    Ok(())
}
