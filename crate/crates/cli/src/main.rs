use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use orbitlens::fixture::FixtureSpec;
use orbitlens_cli::{run, run_generate_fixture, Command, ConfigError, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "orbitlens", version, about = "Mine a broadband-ISP forum dump for sentiment, outages and speed trends")]
struct Cli {
    /// JSON run configuration; relative paths in it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    posts: Option<PathBuf>,
    #[arg(long, global = true)]
    comments: Option<PathBuf>,
    #[arg(long, global = true, requires = "window_end")]
    window_start: Option<NaiveDate>,
    #[arg(long, global = true, requires = "window_start")]
    window_end: Option<NaiveDate>,
    #[arg(long, global = true)]
    ocr_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    keywords: Option<PathBuf>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    peak_k: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Clean the corpus, rebuild threads, weekly activity.
    Ingest,
    /// Score every post and comment.
    Sentiment,
    /// Top strong-sentiment days with word clouds and search queries.
    Peaks,
    /// Keyword spike detection over negative threads.
    Outages,
    /// Monthly popular posts and their topic rankings.
    Popular,
    /// Extract and filter speed-test reports from screenshots.
    Speedtest,
    /// Monthly median download series with Pos and annotations.
    Trends,
    /// Every stage above, one manifest.
    Report,
    /// Write a synthetic corpus with planted events and its ground truth.
    GenerateFixture {
        /// Fixture spec as JSON; the built-in golden spec when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = &cli.posts {
        cfg.posts = v.clone();
    }
    if let Some(v) = &cli.comments {
        cfg.comments = v.clone();
    }
    if let (Some(start), Some(end)) = (cli.window_start, cli.window_end) {
        cfg.window = Some(orbitlens_cli::config::Window { start, end });
    }
    if let Some(v) = &cli.ocr_dir {
        cfg.ocr.dir = Some(v.clone());
    }
    if let Some(v) = &cli.keywords {
        cfg.keywords = Some(v.clone());
    }
    if let Some(v) = cli.tau {
        cfg.thresholds.tau = v;
    }
    if let Some(v) = cli.peak_k {
        cfg.thresholds.peak_k = v;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = match &cli.command {
        Cmd::GenerateFixture { spec } => {
            let result = (|| -> Result<(), RunError> {
                let spec = match spec {
                    Some(p) => {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| ConfigError::new("spec", format!("{}: {e}", p.display())))?;
                        serde_json::from_str(&text).map_err(|e| ConfigError::new("spec", e.to_string()))?
                    }
                    None => FixtureSpec::default(),
                };
                let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixture"));
                run_generate_fixture(&spec, cli.seed.unwrap_or(0), &dir)
            })();
            return match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Cmd::Ingest => Command::Ingest,
        Cmd::Sentiment => Command::Sentiment,
        Cmd::Peaks => Command::Peaks,
        Cmd::Outages => Command::Outages,
        Cmd::Popular => Command::Popular,
        Cmd::Speedtest => Command::Speedtest,
        Cmd::Trends => Command::Trends,
        Cmd::Report => Command::Report,
    };
    let outcome = config(&cli).map_err(RunError::from).and_then(|cfg| run(command, &cfg));
    match outcome {
        Ok(o) => {
            for f in &o.failures {
                eprintln!("{} {}: {}", f.stage, f.item, f.message);
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
