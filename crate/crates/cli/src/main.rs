//! `dba`: geocode buildings, fetch map bundles and orbit plans, caption image
//! sets with cooperating LLM agents, and run scored experiment grids.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Human-readable progress goes to stderr; records and paths go to stdout.

mod commands;
mod config;
mod net;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "dba", version, about = "Building analysis from map services and multi-agent captioning")]
pub struct Cli {
    /// Deterministic offline providers for maps, chat and embeddings; no network IO.
    #[arg(long, global = true, conflicts_with_all = ["replay", "record"])]
    pub mock: bool,

    /// Settings file (TOML).
    #[arg(long, global = true, env = "DBA_CONFIG")]
    pub config: Option<PathBuf>,

    /// Serve every HTTP request from this cassette; unknown requests fail.
    #[arg(long, global = true, value_name = "CASSETTE", conflicts_with = "record")]
    pub replay: Option<PathBuf>,

    /// Go live and save every exchange to this cassette.
    #[arg(long, global = true, value_name = "CASSETTE")]
    pub record: Option<PathBuf>,

    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,

    #[arg(long, global = true, value_name = "DIR")]
    pub asset_dir: Option<PathBuf>,

    /// Skip the on-disk response cache.
    #[arg(long, global = true)]
    pub no_cache: bool,

    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct QueryArgs {
    #[arg(long)]
    pub address: Option<String>,
    #[arg(long)]
    pub place: Option<String>,
    #[arg(long)]
    pub postal: Option<String>,
    /// Coordinates as "lat,lng", e.g. 43.4643,-80.5204.
    #[arg(long, value_name = "LAT,LNG", value_parser = parse_latlng, allow_hyphen_values = true)]
    pub latlng: Option<(f64, f64)>,
}

fn parse_latlng(s: &str) -> Result<(f64, f64), String> {
    let bad = || format!("expected \"lat,lng\" (two decimal degrees separated by a comma), got {s:?}");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let lat: f64 = a.trim().parse().map_err(|_| bad())?;
    let lng: f64 = b.trim().parse().map_err(|_| bad())?;
    Ok((lat, lng))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve one query to a building record (JSON on stdout).
    Geocode(QueryArgs),
    /// Fetch the building bundle and write an orbit plan.
    Fetch {
        #[command(flatten)]
        query: QueryArgs,
        /// Comma-separated zoom levels.
        #[arg(long, default_value = "18,19")]
        zooms: String,
        /// Also fetch a roadmap at every zoom.
        #[arg(long)]
        roadmaps: bool,
        #[arg(long, default_value_t = 31)]
        orbit_count: usize,
        #[arg(long, default_value_t = 250.0)]
        orbit_radius: f64,
        #[arg(long, default_value_t = 120.0)]
        altitude: f64,
        #[arg(long, default_value = "bundle")]
        out: PathBuf,
    },
    /// Caption a directory of staged images.
    Caption {
        #[arg(long)]
        images: PathBuf,
        /// Stage model file (TOML with keyword_model, aggregate_model, caption_model).
        #[arg(long, conflicts_with = "model")]
        models: Option<PathBuf>,
        /// Aggregation and caption model.
        #[arg(long, default_value = "gpt-4o-mini")]
        model: String,
        #[arg(long, default_value = "gpt-4o")]
        keyword_model: String,
        #[arg(long)]
        include_street_maps: bool,
        /// Write the manifest fragment here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenes x models x iterations grid.
    Experiment {
        #[arg(long)]
        grid: PathBuf,
        /// Parent directory for timestamped run folders.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Exact run directory (overrides --runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit CSV and SVG reports for a finished run.
    Report {
        /// Run directory holding manifest.json, or the manifest itself.
        #[arg(long)]
        run: PathBuf,
        /// Output directory (default: <run>/reports).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
