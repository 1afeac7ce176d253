use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Deserialize;

use namevo::corpus::{Cache, DirectorySource, EntityResolution, FetchStatus, LiveSource, PageSource};
use namevo::listparse::write_curated_changes;
use namevo::model::ExcerptRecord;
use namevo::pipeline::{self, PipelineError};
use namevo::segment::RuleSplitter;
use namevo::stats::{histogram_csv, report_json, report_text};

const DEFAULT_API_BASE: &str = "https://en.wikipedia.org/w/api.php";
const DEFAULT_USER_AGENT: &str = "namevo/0.1 (name evolution research; batch)";

#[derive(Parser, Debug)]
#[command(name = "namevo", version, about = "Mine entity name evolution from wiki lists and articles")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Page cache directory [env: NAMEVO_CACHE_DIR]
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Never touch the network; cache misses are fatal [env: NAMEVO_OFFLINE]
    #[arg(long, global = true)]
    offline: bool,
    /// Worker threads
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Maximum requests per second to the wiki API
    #[arg(long, global = true)]
    rate_limit: Option<f64>,
    #[arg(long, global = true)]
    api_base: Option<String>,
    #[arg(long, global = true)]
    user_agent: Option<String>,
    /// Abbreviation table for the sentence splitter, one per line
    #[arg(long, global = true)]
    abbreviations: Option<PathBuf>,
    /// Serve pages from a fixture directory instead of the wiki API
    #[arg(long, global = true)]
    source_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse list pages and curated records into a chain file
    Parse {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve every name to an article and fill the cache
    Fetch {
        #[arg(long)]
        chains: PathBuf,
        /// Resolution log to write
        #[arg(long)]
        log: PathBuf,
    },
    /// Find the minimal excerpt of every mentioned change
    Analyze {
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate counts, percentages and the distance distribution
    Stats {
        #[arg(long)]
        excerpts: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        resolutions: PathBuf,
        /// Directory for report.json, report.txt and histogram.csv
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the knowledge base, one entity per line
    Export {
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        excerpts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    cache_dir: Option<PathBuf>,
    api_base: Option<String>,
    user_agent: Option<String>,
    rate_limit: Option<f64>,
    workers: Option<usize>,
    offline: Option<bool>,
    abbreviations_path: Option<PathBuf>,
    source_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
struct Config {
    cache_dir: PathBuf,
    api_base: String,
    user_agent: String,
    rate_limit: f64,
    workers: usize,
    offline: bool,
    abbreviations_path: Option<PathBuf>,
    source_dir: Option<PathBuf>,
}

fn parse_bool(var: &str, value: &str) -> Result<bool, PipelineError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "" | "0" | "false" | "no" | "off" => Ok(false),
        other => Err(PipelineError::input(format!("{var}: expected a boolean, got {other:?}"))),
    }
}

/// Flags override environment variables, which override the config file.
fn resolve_config(
    args: &GlobalArgs,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Config, PipelineError> {
    let file = match &args.config {
        Some(path) => toml::from_str::<FileConfig>(&pipeline::read_input(path)?)
            .map_err(|e| PipelineError::input(format!("{}: {e}", path.display())))?,
        None => FileConfig::default(),
    };
    let env_offline = env("NAMEVO_OFFLINE").map(|v| parse_bool("NAMEVO_OFFLINE", &v)).transpose()?;
    let config = Config {
        cache_dir: args
            .cache_dir
            .clone()
            .or_else(|| env("NAMEVO_CACHE_DIR").map(PathBuf::from))
            .or(file.cache_dir)
            .unwrap_or_else(|| PathBuf::from("namevo-cache")),
        api_base: args.api_base.clone().or(file.api_base).unwrap_or_else(|| DEFAULT_API_BASE.into()),
        user_agent: args.user_agent.clone().or(file.user_agent).unwrap_or_else(|| DEFAULT_USER_AGENT.into()),
        rate_limit: args.rate_limit.or(file.rate_limit).unwrap_or(1.0),
        workers: args.workers.or(file.workers).unwrap_or(4),
        offline: if args.offline { true } else { env_offline.or(file.offline).unwrap_or(false) },
        abbreviations_path: args.abbreviations.clone().or(file.abbreviations_path),
        source_dir: args.source_dir.clone().or(file.source_dir),
    };
    if config.workers == 0 {
        return Err(PipelineError::input("workers must be at least 1"));
    }
    if !(config.rate_limit > 0.0 && config.rate_limit.is_finite()) {
        return Err(PipelineError::input("rate limit must be a positive number"));
    }
    Ok(config)
}

fn open_cache(config: &Config) -> Result<Cache, PipelineError> {
    Cache::open(&config.cache_dir).map_err(|e| PipelineError::environment(e.to_string()))
}

fn upstream(config: &Config) -> Result<Option<Box<dyn PageSource>>, PipelineError> {
    if config.offline {
        return Ok(None);
    }
    let source: Box<dyn PageSource> = match &config.source_dir {
        Some(dir) => Box::new(DirectorySource::open(dir).map_err(|e| PipelineError::environment(e.to_string()))?),
        None => Box::new(
            LiveSource::new(&config.api_base, &config.user_agent, config.rate_limit)
                .map_err(|e| PipelineError::environment(e.to_string()))?,
        ),
    };
    Ok(Some(source))
}

fn splitter(config: &Config) -> Result<RuleSplitter, PipelineError> {
    match &config.abbreviations_path {
        Some(path) => RuleSplitter::from_file(path)
            .map_err(|e| PipelineError::input(format!("{}: {e}", path.display()))),
        None => Ok(RuleSplitter::default()),
    }
}

fn fetch_summary(log: &[EntityResolution]) -> String {
    let names = || log.iter().flat_map(|r| &r.names);
    let count = |s: FetchStatus| names().filter(|n| n.status == s).count();
    let mut out = format!(
        "entities: {}\nresolvable: {}\nnames resolved: {}\nnames redirected: {}\nnames missing: {}\nnames with errors: {}\n",
        log.len(),
        log.iter().filter(|r| r.is_resolvable()).count(),
        count(FetchStatus::Resolved),
        count(FetchStatus::Redirected),
        count(FetchStatus::Missing),
        count(FetchStatus::Error),
    );
    let unresolved: Vec<&str> = log.iter().filter(|r| !r.is_resolvable()).map(|r| r.entity_id.as_str()).collect();
    out.push_str(&format!("unresolved ({}):\n", unresolved.len()));
    for id in unresolved {
        out.push_str(&format!("  {id}\n"));
    }
    out
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = || resolve_config(&cli.global, |k| std::env::var(k).ok());
    match &cli.command {
        Command::Parse { inputs, out } => {
            let parsed = pipeline::parse_inputs(inputs)?;
            for w in &parsed.warnings {
                warn!("{w}");
                eprintln!("warning: {w}");
            }
            pipeline::write_output(out, &write_curated_changes(&parsed.chains))?;
            eprintln!("{} chains written to {}", parsed.chains.len(), out.display());
        }
        Command::Fetch { chains, log } => {
            let config = config()?;
            let chains = pipeline::load_chains(chains)?;
            let cache = open_cache(&config)?;
            let upstream = upstream(&config)?;
            let resolutions = pipeline::run_fetch(&chains, &cache, upstream.as_deref(), config.workers)?;
            pipeline::write_output(log, &pipeline::to_jsonl(&resolutions))?;
            print!("{}", fetch_summary(&resolutions));
        }
        Command::Analyze { chains, out } => {
            let config = config()?;
            let chains = pipeline::load_chains(chains)?;
            let cache = open_cache(&config)?;
            let upstream = upstream(&config)?;
            let splitter = splitter(&config)?;
            let records = pipeline::run_analyze(&chains, &cache, upstream.as_deref(), &splitter, config.workers)?;
            pipeline::write_output(out, &pipeline::to_jsonl(&records))?;
            eprintln!("{} excerpts written to {}", records.len(), out.display());
        }
        Command::Stats { excerpts, chains, resolutions, out_dir } => {
            let chains = pipeline::load_chains(chains)?;
            let resolutions: Vec<EntityResolution> = pipeline::read_jsonl(resolutions)?;
            let records: Vec<ExcerptRecord> = pipeline::read_jsonl(excerpts)?;
            let report = pipeline::run_stats(&chains, &resolutions, &records)?;
            let text = report_text(&report);
            if let Some(dir) = out_dir {
                pipeline::write_output(&dir.join("report.json"), &report_json(&report))?;
                pipeline::write_output(&dir.join("report.txt"), &text)?;
                pipeline::write_output(&dir.join("histogram.csv"), &histogram_csv(&report))?;
            }
            print!("{text}");
        }
        Command::Export { chains, excerpts, out } => {
            let chains = pipeline::load_chains(chains)?;
            let records: Vec<ExcerptRecord> = pipeline::read_jsonl(excerpts)?;
            pipeline::write_output(out, &pipeline::run_export(&chains, &records)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
