use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragbias::error::Result;
use ragbias::pipeline::{self, ReportFormat, RunConfig, RunMode, RunOptions, RunOutcome};

#[derive(Parser)]
#[command(name = "ragbias", version, about = "Social bias evaluation for retrieval-augmented question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load corpus sources; write rejects and collection statistics.
    Ingest(Common),
    /// Build retrieval indexes and fill the embedding cache.
    Index(Common),
    /// Retrieve, generate, score, analyze and report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue an existing run directory.
        #[arg(long)]
        resume: bool,
        /// Print the plan without calling remote backends or writing files.
        #[arg(long)]
        dry_run: bool,
        /// Ping every remote backend before starting.
        #[arg(long)]
        check_backends: bool,
    },
    /// Recompute metrics from the stored records of a run.
    Score(Common),
    /// Relevance against bias-level sweep.
    Analyze(Common),
    /// Re-render a report from a run's metrics.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "markdown", value_parser = parse_format)]
        format: ReportFormat,
    },
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: ragbias::error::Error| e.to_string())
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_json_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_with(cfg: &RunConfig, opts: RunOptions) -> Result<()> {
    println!("config fingerprint {}", cfg.fingerprint());
    match pipeline::run(cfg, &opts)? {
        RunOutcome::DryRun(plan) => {
            println!("slices {}", plan.slices);
            println!("prompts {}", plan.prompts);
            println!("estimated backend calls {}", plan.estimated_backend_calls);
            println!("estimated embedding texts {}", plan.estimated_embedding_texts);
            for s in &plan.skipped {
                println!("skipped {}: {}", s.combination, s.reason);
            }
        }
        RunOutcome::Completed(report) => {
            let dir = cfg.run_dir();
            match opts.mode {
                RunMode::Analyze => match &report.tradeoff {
                    Some(t) => {
                        for r in &t.rows {
                            println!("k={} relevance={:.3} bias_level={:.3} harmonic={:.3}", r.k, r.relevance, r.bias_level, r.harmonic);
                        }
                    }
                    None => println!("no trade-off rows ({} skipped)", report.skipped.len()),
                },
                _ => {
                    println!("{} slices scored, {} skipped", report.slices.len(), report.skipped.len());
                    println!("report {}", dir.join("report.md").display());
                }
            }
        }
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            let cfg = load(&c)?;
            let s = pipeline::ingest(&cfg)?;
            println!("rows read {}, documents {}, rejected {}", s.rows_read, s.documents, s.rejects);
            for (name, n) in &s.collections {
                println!("collection {name}: {n} documents");
            }
            for s in &s.skipped {
                println!("skipped {}: {}", s.combination, s.reason);
            }
            println!("written to {}", cfg.run_dir().join("corpus").display());
        }
        Command::Index(c) => {
            let cfg = load(&c)?;
            for s in pipeline::index(&cfg)? {
                println!(
                    "{} / {}: {} documents, {} embedder calls",
                    s.collection, s.retriever, s.documents, s.embedder_calls
                );
            }
        }
        Command::Run {
            common,
            resume,
            dry_run,
            check_backends,
        } => {
            let cfg = load(&common)?;
            run_with(
                &cfg,
                RunOptions {
                    resume,
                    dry_run,
                    check_backends,
                    mode: RunMode::Full,
                },
            )?;
        }
        Command::Score(c) => {
            let cfg = load(&c)?;
            run_with(
                &cfg,
                RunOptions {
                    mode: RunMode::Score,
                    ..Default::default()
                },
            )?;
        }
        Command::Analyze(c) => {
            let cfg = load(&c)?;
            run_with(
                &cfg,
                RunOptions {
                    mode: RunMode::Analyze,
                    ..Default::default()
                },
            )?;
        }
        Command::Report { common, format } => {
            let cfg = load(&common)?;
            let path = pipeline::write_report(Path::new(&cfg.run_dir()), format)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
