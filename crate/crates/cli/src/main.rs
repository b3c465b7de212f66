use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use masqrad_cli::service::{router, AppState};
use masqrad_core::config::EngineConfig;
use masqrad_core::dataset::DatasetRef;
use masqrad_core::evaluation::{
    build_report, evaluate_benchmark, ingest_benchmark, ingest_judge_labels, load_generated, BenchmarkManifest,
    BenchmarkSource, GeneratedSet,
};
use masqrad_core::kernels::selftest;
use masqrad_core::orchestrator::RunStage;
use masqrad_core::query::UserQuery;

/// Exit code when the requested operation ran and failed.
const EXIT_FAILURE: u8 = 1;
/// Exit code for invalid invocations, configs and inputs.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "masqrad",
    version,
    about = "Multi-agent query resolution for data visualization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve one query end to end and print the run outcome.
    Run {
        #[arg(long)]
        query: String,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Score generated visualizations against a benchmark manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        out: PathBuf,
        /// Generated specs and tables keyed by query id.
        #[arg(long)]
        generated: Option<PathBuf>,
    },
    /// Benchmark utilities.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Kernel utilities.
    Kernels {
        #[command(subcommand)]
        command: KernelCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Convert nvBench or NL4DV JSON into a benchmark manifest.
    Ingest {
        #[arg(long, value_enum)]
        source: Source,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset the benchmark queries run against.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Subcommand)]
enum KernelCommand {
    /// Check the attention, rotary and classifier invariants.
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Nvbench,
    Nl4dv,
}

/// A failed command and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

fn failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

async fn run(query: String, dataset: String, config: PathBuf) -> Result<(), Failure> {
    let config = EngineConfig::load(&config).map_err(usage)?;
    let engine = config.build_engine().map_err(usage)?;
    let run = engine
        .run_pipeline(UserQuery::from_text(query), &dataset)
        .await
        .map_err(failure)?;
    println!("run_id: {}", run.run_id);
    println!("stage: {}", run.stage);
    println!("run_dir: {}", engine.store().run_dir(&run.run_id).display());
    for t in &run.timings {
        println!("timing: {} {:.3}s", t.stage, t.duration_s);
    }
    for name in run.output_artifact_names() {
        println!("artifact: {name}");
    }
    if run.stage == RunStage::Failed {
        return Err(failure(run.failure_reason.unwrap_or_default()));
    }
    Ok(())
}

async fn serve(config: PathBuf, addr: SocketAddr) -> Result<(), Failure> {
    let config = EngineConfig::load(&config).map_err(usage)?;
    let engine = Arc::new(config.build_engine().map_err(usage)?);
    let app = router(AppState::new(engine, config.workers));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(failure)?;
    tracing::info!(%addr, workers = config.workers, "serving");
    axum::serve(listener, app).await.map_err(failure)
}

fn eval(manifest: PathBuf, labels: PathBuf, out: PathBuf, generated: Option<PathBuf>) -> Result<(), Failure> {
    let manifest = BenchmarkManifest::load(&manifest).map_err(usage)?;
    let labels = ingest_judge_labels(&read(&labels)?, &manifest.query_ids()).map_err(usage)?;
    let generated = match generated {
        Some(p) => load_generated(&p).map_err(usage)?,
        None => GeneratedSet::new(),
    };
    let (cards, warnings) = evaluate_benchmark(&manifest, &generated, &labels).map_err(usage)?;
    let report = build_report(manifest.benchmark_name.clone(), cards, warnings).map_err(usage)?;
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write(&out, &json)?;
    print!("{}", report.render_text());
    Ok(())
}

fn bench_ingest(
    source: Source,
    input: PathBuf,
    out: PathBuf,
    dataset: PathBuf,
    name: Option<String>,
) -> Result<(), Failure> {
    let dataset = DatasetRef::load(&dataset).map_err(usage)?;
    let source = match source {
        Source::Nvbench => BenchmarkSource::NvBench,
        Source::Nl4dv => BenchmarkSource::Nl4dv,
    };
    let name = name.unwrap_or_else(|| {
        input
            .file_stem()
            .map_or_else(|| "benchmark".into(), |s| s.to_string_lossy().into_owned())
    });
    let outcome = ingest_benchmark(source, &read(&input)?, dataset, &name).map_err(usage)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_vec_pretty(&outcome.manifest).expect("manifest serializes");
    write(&out, &json)?;
    println!(
        "ingested {} queries ({} entries skipped) into {}",
        outcome.manifest.queries.len(),
        outcome.warnings.len(),
        out.display()
    );
    Ok(())
}

fn kernels_selftest(seed: u64) -> Result<(), Failure> {
    let checks = selftest::run(seed);
    for c in &checks {
        println!(
            "{} {}: {} cases, max error {:.3e} (tolerance {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.max_error,
            c.tolerance
        );
    }
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        n => Err(failure(format!("{n} kernel invariants failed"))),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { query, dataset, config } => run(query, dataset, config).await,
        Command::Serve { config, addr } => serve(config, addr).await,
        Command::Eval {
            manifest,
            labels,
            out,
            generated,
        } => eval(manifest, labels, out, generated),
        Command::Bench {
            command:
                BenchCommand::Ingest {
                    source,
                    input,
                    out,
                    dataset,
                    name,
                },
        } => bench_ingest(source, input, out, dataset, name),
        Command::Kernels {
            command: KernelCommand::Selftest { seed },
        } => kernels_selftest(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
