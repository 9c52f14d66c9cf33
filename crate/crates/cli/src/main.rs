//! Command-line entry point: configuration parsing, run orchestration, and
//! report emission for the facade pressure-field reconstruction pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facade_recon::data::synth::SynthConfig;
use facade_recon::data::MaskScenario;
use facade_recon::error::{Error, Result};
use facade_recon::graph::{FacadeGraph, GraphConfig};
use facade_recon::model::ReconModel;
use facade_recon::pipeline::{
    self, ForecastArgs, ForecastKind, ReconRunConfig, TrainRunConfig,
};

#[derive(Parser)]
#[command(name = "facade-recon", version, about = "Facade wind-pressure field reconstruction from sparse sensors")]
struct Cli {
    /// Worker threads (fallback: FACADE_RECON_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (FPRD records + manifest).
    Synth(SynthArgs),
    /// Train the reconstruction model (or a sensor forecaster).
    Train(TrainArgs),
    /// Reconstruct full records with a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Recompute metrics.json from a completed reconstruction directory.
    Evaluate(EvaluateArgs),
    /// Two-stage prediction: sensor forecasts completed to a full field.
    Forecast(ForecastCmdArgs),
    /// Export the facade graph as JSON.
    DumpGraph(DumpGraphArgs),
    /// Print the model layer table with parameter counts.
    ArchSummary(ArchSummaryArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional inference settings (overlap plan, Welch parameters, segment).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    recon: PathBuf,
}

#[derive(Args)]
struct ForecastCmdArgs {
    #[arg(long)]
    recon_ck: PathBuf,
    #[arg(long)]
    fcst_ck: Option<PathBuf>,
    /// learned | persist | oracle
    #[arg(long, default_value = "learned")]
    kind: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    horizon_s: Option<f64>,
    #[arg(long)]
    horizon_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    direction_index: usize,
}

#[derive(Args)]
struct DumpGraphArgs {
    #[arg(long, default_value_t = 25)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    cols: usize,
    /// Explicit sensor node ids (default: the canonical layout).
    #[arg(long, value_delimiter = ',')]
    sensors: Option<Vec<usize>>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ArchSummaryArgs {
    /// Train config supplying the model block (default configuration
    /// otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("FACADE_RECON_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads);
    match cli.command {
        Command::Synth(args) => {
            let cfg: SynthConfig = read_json(&args.config)?;
            let manifest = pipeline::run_synth(&cfg, &args.out, threads)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train(args) => {
            let cfg: TrainRunConfig = read_json(&args.config)?;
            let out = pipeline::run_train(&cfg, &args.data, &args.out, threads)?;
            println!("checkpoint: {}", out.checkpoint.display());
            if let Some(last) = out.log.last() {
                println!("final loss: {:.6}", last.loss_total);
            }
        }
        Command::Reconstruct(args) => {
            let scenario: MaskScenario = read_json(&args.scenario)?;
            let cfg: ReconRunConfig = match &args.config {
                Some(p) => read_json(p)?,
                None => ReconRunConfig::default(),
            };
            let out = pipeline::run_reconstruct(&args.checkpoint, &args.data, &scenario, &cfg, &args.out, threads)?;
            println!("{}", out.document.aggregate.to_table());
            println!("metrics: {}", out.metrics_path.display());
        }
        Command::Evaluate(args) => {
            let (document, matched) = pipeline::run_evaluate(&args.recon, threads)?;
            println!("{}", document.aggregate.to_table());
            println!("recomputed metrics {} the stored file", if matched { "match" } else { "replace" });
        }
        Command::Forecast(args) => {
            let scenario: MaskScenario = read_json(&args.scenario)?;
            let kind = match args.kind.as_str() {
                "learned" => ForecastKind::Learned,
                "persist" => ForecastKind::Persist,
                "oracle" => ForecastKind::Oracle,
                other => return Err(Error::config("forecast.kind", format!("unknown kind `{other}`"))),
            };
            let fargs = ForecastArgs {
                recon_ck: &args.recon_ck,
                fcst_ck: args.fcst_ck.as_deref(),
                kind,
                data: &args.data,
                scenario,
                horizon_samples: args.horizon_samples,
                horizon_seconds: args.horizon_s,
                direction_index: args.direction_index,
                overlap: Default::default(),
                train_fraction: 0.8,
            };
            let res = pipeline::run_forecast(&fargs, &args.out, threads)?;
            println!(
                "sensor rmse {:.4}  two-stage rmse {:.4}  reference rmse {:.4}  delta {:.4}",
                res.sensor_rmse, res.two_stage_rmse, res.reference_rmse, res.delta_rmse
            );
        }
        Command::DumpGraph(args) => {
            let cfg = GraphConfig { rows: args.rows, cols: args.cols, sensors: args.sensors };
            let graph = FacadeGraph::build(&cfg)?;
            let json = serde_json::to_string_pretty(&graph.to_json()).expect("graph json");
            match args.out {
                Some(path) => std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?,
                None => println!("{json}"),
            }
        }
        Command::ArchSummary(args) => {
            let cfg: TrainRunConfig = match &args.config {
                Some(p) => read_json(p)?,
                None => serde_json::from_value(serde_json::json!({"seed": 0})).expect("default config"),
            };
            let graph = std::sync::Arc::new(FacadeGraph::build(&GraphConfig::default())?);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let model: ReconModel<f32> = ReconModel::new(cfg.model.clone(), graph, &mut rng)?;
            let rows = model.arch_summary();
            println!("{:<28} {:>16} {:>12}", "parameter", "shape", "count");
            let mut total = 0usize;
            for (name, shape, count) in &rows {
                println!("{:<28} {:>16} {:>12}", name, format!("{shape:?}"), count);
                total += count;
            }
            println!("{:<28} {:>16} {:>12}", "total", "", total);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                Error::Config { .. } => "config",
                Error::Shape { .. } => "shape",
                Error::Usage(_) => "usage",
                Error::Data(_) => "data",
                Error::NonFinite { .. } => "non_finite",
                Error::Io { .. } => "io",
                Error::Json { .. } => "json",
            };
            let payload = serde_json::json!({ "error": e.to_string(), "kind": kind });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
