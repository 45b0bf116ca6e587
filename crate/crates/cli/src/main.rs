//! `grs`: one binary over the whole toolkit. Subcommands build the BM25
//! index, run the distillation pipeline, drive the decision agent for
//! ad-hoc queries, score eval sets (single run, top-K sweep, ablation),
//! serve the scripted mock model, and validate configs.
//!
//! Exit codes are a scripting contract: 0 success, 1 usage or config
//! error, 2 runtime failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use grs_core::config::PipelineConfig;
use grs_core::eval::{AccMode, EvalReport, EvalSet};
use grs_core::gateway::{serve_mock, MockScript};
use grs_core::pipeline::Pipeline;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "grs",
    version,
    about = "Generative retrieval tooling: BM25 index, distillation corpus, decision agent, evaluation"
)]
struct Cli {
    /// Pipeline config (JSON). Required by every subcommand except mock-serve.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Override the config's worker count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the BM25 index and print corpus statistics.
    Index {
        /// Dump postings to stdout as JSON lines, sorted by term.
        #[arg(long)]
        dump: bool,
    },
    /// Mine negatives, generate reasoning, and write the training corpus.
    Distill,
    /// Generate results for queries, with or without the decision agent.
    Agent {
        /// One query on the command line.
        #[arg(long, value_name = "TEXT", conflicts_with = "queries")]
        query: Option<String>,
        /// File with one query per line.
        #[arg(long, value_name = "PATH")]
        queries: Option<PathBuf>,
        /// Print the resolved generation output directly, skipping the agent.
        #[arg(long)]
        no_agent: bool,
        /// Print the full per-query agent trace as JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Score the pipeline against a labeled eval set.
    Eval {
        /// JSONL eval set: {"query": ..., "labels": {doc_id: relevance}}.
        #[arg(long, value_name = "PATH")]
        eval_set: PathBuf,
        /// Sweep the agent's result-list cap over --ks instead of one run.
        #[arg(long, conflicts_with = "ablate")]
        sweep: bool,
        /// Caps for --sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,20")]
        ks: Vec<usize>,
        /// Run the three-arm ablation (full, no reasoning corpus, no agent).
        #[arg(long)]
        ablate: bool,
        /// Average per-query accuracies instead of pooling all pairs.
        #[arg(long = "macro")]
        macro_acc: bool,
        /// Score the bypass (no decision agent) in single-run mode.
        #[arg(long, conflicts_with_all = ["sweep", "ablate"])]
        no_agent: bool,
    },
    /// Serve the scripted chat-completions mock until interrupted.
    MockServe {
        /// Mock script (JSON): {"rules": [...], "default_reply": ...}.
        #[arg(long = "mock-script", value_name = "PATH")]
        script: PathBuf,
        /// Port to bind on loopback; 0 picks a free one.
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ConfigCommand {
    /// Parse the config, check every invariant, and verify referenced files.
    Validate,
}

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Requested help or version is a success; anything else is a
            // usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
            let _ = e.print();
            return code;
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::runtime)?;
    rt.block_on(dispatch(cli))
}

async fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::MockServe { ref script, port } => cmd_mock_serve(script, port).await,
        Command::Index { dump } => {
            let pipeline = prepare(&cli)?;
            cmd_index(&pipeline, dump)
        }
        Command::Distill => {
            let pipeline = prepare(&cli)?;
            cmd_distill(&pipeline).await
        }
        Command::Agent {
            ref query,
            ref queries,
            no_agent,
            trace,
        } => {
            let pipeline = prepare(&cli)?;
            cmd_agent(&pipeline, query.clone(), queries.as_deref(), no_agent, trace).await
        }
        Command::Eval {
            ref eval_set,
            sweep,
            ref ks,
            ablate,
            macro_acc,
            no_agent,
        } => {
            let pipeline = prepare(&cli)?;
            let mode = if macro_acc { AccMode::Macro } else { AccMode::Micro };
            cmd_eval(&pipeline, eval_set, sweep, ks, ablate, mode, no_agent).await
        }
        Command::Config {
            command: ConfigCommand::Validate,
        } => {
            let pipeline = prepare(&cli)?;
            cmd_config_validate(&pipeline)
        }
    }
}

/// Load the config, apply command-line overrides, and run every fail-fast
/// check (invariants, referenced files, catalog, prompts) before any
/// command logic executes. Relative paths in the config resolve against
/// the config file's directory, so a manifest works from any working
/// directory; command-line path overrides stay relative to the caller.
fn prepare(cli: &Cli) -> Result<Pipeline, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::usage(anyhow!("--config is required for this command")))?;
    let mut config = PipelineConfig::load(path).map_err(Failure::usage)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(base) = base {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.paths.catalog);
        rebase(&mut config.paths.query_log);
        rebase(&mut config.paths.positives);
        rebase(&mut config.paths.output_dir);
        for prompt in [
            &mut config.prompts.relevance_judgement,
            &mut config.prompts.reasoning_generation,
            &mut config.prompts.decision,
            &mut config.prompts.generation,
        ]
        .into_iter()
        .flatten()
        {
            rebase(prompt);
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(output) = &cli.output {
        config.paths.output_dir = output.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate().map_err(Failure::usage)?;
    config.validate_paths().map_err(Failure::usage)?;
    Pipeline::prepare(config).map_err(Failure::usage)
}

fn cmd_index(pipeline: &Pipeline, dump: bool) -> Result<(), Failure> {
    let index = &pipeline.index;
    println!("num_docs: {}", index.num_docs());
    println!("num_terms: {}", index.num_terms());
    println!("avgdl: {:.4}", index.avgdl());
    if dump {
        let mut terms: Vec<&str> = index.terms().collect();
        terms.sort_unstable();
        for term in terms {
            let postings: Vec<(String, u32)> = index
                .postings(term)
                .unwrap_or(&[])
                .iter()
                .map(|&(doc, tf)| (index.doc_id(doc as usize).unwrap_or("").to_string(), tf))
                .collect();
            let line = serde_json::json!({ "term": term, "postings": postings });
            println!("{line}");
        }
    }
    Ok(())
}

async fn cmd_distill(pipeline: &Pipeline) -> Result<(), Failure> {
    let out = pipeline.distill_run().await.map_err(Failure::runtime)?;
    let stats_path = pipeline.config.paths.output_dir.join("distill_stats.json");
    let summary = serde_json::json!({
        "stats": out.stats,
        "sampled_queries": out.sampled_queries.len(),
        "negatives": out.negatives.len(),
        "reasoning_records": out.reasoning_records.len(),
        "base_records": out.base_len,
        "corpus_records": out.corpus_len,
    });
    write_json_atomic(&stats_path, &summary).map_err(Failure::runtime)?;
    println!("corpus: {}", out.corpus_path.display());
    println!("stats: {}", stats_path.display());
    println!(
        "records: {} ({} base + {} reasoning)",
        out.corpus_len,
        out.base_len,
        out.reasoning_records.len()
    );
    Ok(())
}

async fn cmd_agent(
    pipeline: &Pipeline,
    query: Option<String>,
    queries_file: Option<&Path>,
    no_agent: bool,
    trace: bool,
) -> Result<(), Failure> {
    let queries: Vec<String> = match (query, queries_file) {
        (Some(q), None) => vec![q],
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(anyhow!("cannot read {}: {e}", path.display())))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        _ => return Err(Failure::usage(anyhow!("provide --query or --queries"))),
    };
    if queries.is_empty() {
        return Err(Failure::usage(anyhow!("the query file contains no queries")));
    }
    let backend = pipeline.build_backend(false).map_err(Failure::usage)?;
    let dm = pipeline.build_decision_model();
    let (outcomes, traces, skipped) = pipeline
        .run_queries(backend.as_ref(), &dm, &queries, pipeline.config.k, !no_agent)
        .await
        .map_err(Failure::runtime)?;
    for outcome in &outcomes {
        println!("query: {}", outcome.query);
        if outcome.final_docs.is_empty() {
            println!("  (no results)");
        }
        for (rank, doc) in outcome.final_docs.iter().enumerate() {
            println!("  {}. {doc}", rank + 1);
        }
        for invalid in &outcome.invalid {
            println!("  invalid: {invalid}");
        }
    }
    if trace {
        for t in &traces {
            let line = serde_json::to_string_pretty(t).map_err(Failure::runtime)?;
            println!("{line}");
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} queries skipped after generation failures");
    }
    Ok(())
}

const EVAL_HEADER: [&str; 8] = [
    "system", "K", "ACC", "relevant", "judged", "unjudged", "invalid", "skipped",
];

fn eval_row(report: &EvalReport) -> String {
    eval_row_at(report, report.k)
}

/// Sweep rows show the swept cap in the K column, not the generation depth.
fn eval_row_at(report: &EvalReport, k: usize) -> String {
    format!(
        "{:<14} {:>4} {:>8.4} {:>9} {:>7} {:>9} {:>8} {:>8}",
        report.system,
        k,
        report.acc,
        report.relevant,
        report.judged,
        report.unjudged,
        report.invalid_docids,
        report.queries_skipped,
    )
}

fn eval_header() -> String {
    let h = EVAL_HEADER;
    format!(
        "{:<14} {:>4} {:>8} {:>9} {:>7} {:>9} {:>8} {:>8}",
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]
    )
}

async fn cmd_eval(
    pipeline: &Pipeline,
    eval_set_path: &Path,
    sweep: bool,
    ks: &[usize],
    ablate: bool,
    mode: AccMode,
    no_agent: bool,
) -> Result<(), Failure> {
    let eval_set = EvalSet::load(eval_set_path, &pipeline.catalog).map_err(|e| {
        Failure::usage(anyhow::Error::new(e).context(format!(
            "cannot load eval set {}",
            eval_set_path.display()
        )))
    })?;
    let out_dir = &pipeline.config.paths.output_dir;
    if sweep {
        let points = pipeline.run_sweep(&eval_set, ks, true, mode).await;
        println!("{}", eval_header());
        let mut undefined = 0usize;
        for point in &points {
            match &point.report {
                Some(report) => println!("{}", eval_row_at(report, point.k)),
                None => {
                    undefined += 1;
                    println!("{:<14} {:>4} {:>8}", format!("top{}", point.k), point.k, "undef");
                }
            }
        }
        let path = out_dir.join("sweep.json");
        write_json_atomic(&path, &points).map_err(Failure::runtime)?;
        println!("report: {}", path.display());
        if undefined > 0 {
            return Err(Failure::runtime(anyhow!(
                "{undefined} sweep point(s) had no defined metric"
            )));
        }
    } else if ablate {
        let variants = pipeline.run_ablation(&eval_set, pipeline.config.k, mode).await;
        println!("{}", eval_header());
        let mut succeeded = 0usize;
        for variant in &variants {
            match &variant.report {
                Some(report) => {
                    succeeded += 1;
                    println!("{}", eval_row(report));
                }
                None => println!(
                    "{:<14} failed: {}",
                    variant.name,
                    variant.error.as_deref().unwrap_or("unknown error")
                ),
            }
        }
        let path = out_dir.join("ablation.json");
        write_json_atomic(&path, &variants).map_err(Failure::runtime)?;
        println!("report: {}", path.display());
        if succeeded == 0 {
            return Err(Failure::runtime(anyhow!("every ablation variant failed")));
        }
    } else {
        let system = if no_agent { "no_agent" } else { "full" };
        let report = pipeline
            .eval_run(&eval_set, pipeline.config.k, !no_agent, mode, system, false)
            .await
            .map_err(Failure::runtime)?;
        println!("{}", eval_header());
        println!("{}", eval_row(&report));
        let path = out_dir.join("eval_report.json");
        write_json_atomic(&path, &report).map_err(Failure::runtime)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

async fn cmd_mock_serve(script_path: &Path, port: u16) -> Result<(), Failure> {
    let text = std::fs::read_to_string(script_path)
        .map_err(|e| Failure::usage(anyhow!("cannot read {}: {e}", script_path.display())))?;
    let script: MockScript = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(anyhow!("invalid mock script: {e}")))?;
    let handle = serve_mock(port, script).await.map_err(Failure::runtime)?;
    println!("mock chat-completions server on {}", handle.base_url());
    tokio::signal::ctrl_c().await.map_err(Failure::runtime)?;
    handle.stop().await;
    Ok(())
}

fn cmd_config_validate(pipeline: &Pipeline) -> Result<(), Failure> {
    println!("config OK");
    println!("  catalog: {} documents", pipeline.catalog.len());
    println!(
        "  perspectives: {}",
        pipeline.catalog.perspectives().join(", ")
    );
    println!("  judges: {}", pipeline.config.endpoints.judges.len());
    println!(
        "  k: {}, workers: {}, seed: {}",
        pipeline.config.k, pipeline.config.workers, pipeline.config.seed
    );
    Ok(())
}

/// Write-temp-then-rename so a crash never leaves a torn report behind.
fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    writeln!(tmp)?;
    tmp.persist(path)?;
    Ok(())
}
