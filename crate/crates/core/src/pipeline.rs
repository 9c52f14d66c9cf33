//! Run orchestration shared by the CLI and the acceptance suite: dataset
//! synthesis, training, full-sequence reconstruction, metric recomputation,
//! and the two-stage forecast, each writing a config snapshot and version
//! stamp into its output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::io::{self, Manifest, RecordEntry, RecordFormat};
use crate::data::synth::{synth_generate, SynthConfig};
use crate::data::{split_and_normalize, MaskScenario, PreparedRecord};
use crate::error::{Error, Result};
use crate::forecast::{two_stage_predict, train_forecaster, ForecastConfig, ForecastModel, Forecaster, TwoStageResult};
use crate::graph::FacadeGraph;
use crate::infer::metrics::{aggregate, evaluate_direction, DirectionReport, FacadeSummary, WelchConfig};
use crate::infer::{reconstruct_full, OverlapConfig, ReconstructionResult};
use crate::model::{checkpoint, ModelConfig, ReconModel};
use crate::num::scalar::{Precision, Scalar};
use crate::train::{train, LossConfig, TrainConfig, TrainLogEntry};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the resolved configuration + version stamp into an output
/// directory (reproducibility contract: a run directory always carries the
/// exact config used).
pub fn write_snapshot(out_dir: &Path, command: &str, config: serde_json::Value, threads: usize) -> Result<()> {
    let snapshot = serde_json::json!({
        "command": command,
        "version": VERSION,
        "threads": threads,
        "config": config,
    });
    write_json(&out_dir.join("config_snapshot.json"), &snapshot)
}

/// Install a rayon pool of the requested size for the duration of `f`.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Generate a synthetic dataset: FPRD records plus manifest.
pub fn run_synth(cfg: &SynthConfig, out_dir: &Path, threads: usize) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let out = synth_generate(cfg, &mut rng)?;
    let mut records = Vec::new();
    for rec in &out.records {
        let name = format!("dir_{:06.1}", rec.direction_deg).replace('.', "_") + ".fprd";
        io::write_fprd(&out_dir.join(&name), rec)?;
        records.push(RecordEntry { direction_deg: rec.direction_deg, path: name, format: RecordFormat::Fprd });
    }
    let manifest = Manifest {
        facade: "synthetic".to_string(),
        graph: cfg.graph.clone(),
        sample_rate_hz: cfg.sample_rate_hz,
        records,
        offset_samples: 0,
        keep_samples: None,
    };
    let mpath = out_dir.join("manifest.json");
    io::write_manifest(&mpath, &manifest)?;
    write_snapshot(out_dir, "synth", serde_json::to_value(cfg).unwrap(), threads)?;
    Ok(mpath)
}

/// Load a dataset directory (or manifest path) into prepared records.
pub struct LoadedData {
    pub manifest: Manifest,
    pub graph: Arc<FacadeGraph>,
    pub pool: Vec<PreparedRecord>,
}

pub fn load_data(data: &Path, train_fraction: f64) -> Result<LoadedData> {
    let manifest_path = if data.is_dir() { data.join("manifest.json") } else { data.to_path_buf() };
    let manifest = io::read_manifest(&manifest_path)?;
    let graph = Arc::new(FacadeGraph::build(&manifest.graph)?);
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let records = io::load_records_of(&manifest, base, graph.n_nodes())?;
    if records.is_empty() {
        eprintln!("warning: manifest {} lists no records", manifest_path.display());
    }
    let mut pool = Vec::with_capacity(records.len());
    for rec in &records {
        let prep = split_and_normalize(rec, train_fraction)?;
        if !prep.stats.clamped_nodes.is_empty() {
            eprintln!(
                "warning: direction {} deg: clamped std on nodes {:?}",
                rec.direction_deg, prep.stats.clamped_nodes
            );
        }
        pool.push(prep);
    }
    Ok(LoadedData { manifest, graph, pool })
}

/// What `train` trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainTask {
    #[default]
    Recon,
    Forecaster,
}

/// Top-level training run configuration (the `--config` of `train`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunConfig {
    #[serde(default)]
    pub task: TrainTask,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Forecaster settings (task = forecaster).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastConfig>,
    /// Sensor availability assumed by the forecaster (default: none masked).
    #[serde(default)]
    pub scenario: MaskScenario,
}

fn default_train_fraction() -> f64 {
    0.8
}

pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<TrainLogEntry>,
}

pub fn run_train(cfg: &TrainRunConfig, data: &Path, out_dir: &Path, threads: usize) -> Result<TrainOutput> {
    match cfg.precision {
        Precision::F32 => run_train_typed::<f32>(cfg, data, out_dir, threads),
        Precision::F64 => run_train_typed::<f64>(cfg, data, out_dir, threads),
    }
}

fn write_train_log(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let mut text = String::new();
    for entry in log {
        text.push_str(&serde_json::to_string(entry).map_err(|e| Error::json(path.display().to_string(), e))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn run_train_typed<S: Scalar>(cfg: &TrainRunConfig, data: &Path, out_dir: &Path, threads: usize) -> Result<TrainOutput> {
    ensure_dir(out_dir)?;
    let loaded = load_data(data, cfg.train_fraction)?;
    let mut config_value = serde_json::to_value(cfg).unwrap();
    config_value["data"] = serde_json::Value::String(data.display().to_string());
    write_snapshot(out_dir, "train", config_value.clone(), threads)?;

    match cfg.task {
        TrainTask::Recon => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            init_rng.set_stream(0);
            let mut model: ReconModel<S> = ReconModel::new(cfg.model.clone(), Arc::clone(&loaded.graph), &mut init_rng)?;
            let ck_path = out_dir.join("checkpoint.frck");
            let interval = cfg.train.checkpoint_interval_epochs;
            let log = with_threads(threads, || {
                train(&loaded.pool, &mut model, &cfg.loss, &cfg.train, |epoch, m| {
                    if let Some(every) = interval {
                        if every > 0 && (epoch + 1) % every == 0 {
                            let p = out_dir.join(format!("checkpoint_epoch{:04}.frck", epoch + 1));
                            checkpoint::save(&p, &m.params)?;
                            checkpoint::write_sidecar(&p, &config_value)?;
                        }
                    }
                    Ok(())
                })
            })?;
            checkpoint::save(&ck_path, &model.params)?;
            checkpoint::write_sidecar(&ck_path, &config_value)?;
            let log_path = out_dir.join("train_log.jsonl");
            write_train_log(&log_path, &log)?;
            Ok(TrainOutput { checkpoint: ck_path, log_path, log })
        }
        TrainTask::Forecaster => {
            let fcfg = cfg
                .forecast
                .clone()
                .ok_or_else(|| Error::config("forecast", "task = forecaster requires a forecast block"))?;
            let model: ForecastModel<S> =
                with_threads(threads, || train_forecaster(&loaded.pool, &loaded.graph, &cfg.scenario, fcfg.clone()))?;
            let ck_path = out_dir.join("forecaster.frck");
            checkpoint::save(&ck_path, &model.params)?;
            let mut sidecar = config_value;
            sidecar["n_channels"] = serde_json::json!(model.n_channels);
            checkpoint::write_sidecar(&ck_path, &sidecar)?;
            Ok(TrainOutput { checkpoint: ck_path, log_path: out_dir.join("train_log.jsonl"), log: Vec::new() })
        }
    }
}

/// Load a reconstruction model from a checkpoint plus its sidecar.
pub fn load_recon_model<S: Scalar>(ck: &Path, graph: Arc<FacadeGraph>) -> Result<ReconModel<S>> {
    let sidecar = checkpoint::read_sidecar(ck)?;
    let model_cfg: ModelConfig = serde_json::from_value(
        sidecar.get("config").and_then(|c| c.get("model")).cloned().unwrap_or(serde_json::Value::Null),
    )
    .or_else(|_| serde_json::from_value(sidecar.get("model").cloned().unwrap_or(serde_json::Value::Null)))
    .map_err(|e| Error::config("checkpoint.sidecar.model", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ReconModel::new(model_cfg, graph, &mut rng)?;
    checkpoint::load_into(ck, &mut model.params)?;
    Ok(model)
}

fn load_forecast_model<S: Scalar>(ck: &Path) -> Result<ForecastModel<S>> {
    let sidecar = checkpoint::read_sidecar(ck)?;
    let fcfg: ForecastConfig = serde_json::from_value(
        sidecar.get("config").and_then(|c| c.get("forecast")).cloned().unwrap_or(serde_json::Value::Null),
    )
    .or_else(|_| serde_json::from_value(sidecar.get("forecast").cloned().unwrap_or(serde_json::Value::Null)))
    .map_err(|e| Error::config("checkpoint.sidecar.forecast", e.to_string()))?;
    let n_channels = sidecar
        .get("n_channels")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::config("checkpoint.sidecar.n_channels", "missing"))? as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ForecastModel::new(fcfg, n_channels, &mut rng)?;
    checkpoint::load_into(ck, &mut model.params)?;
    Ok(model)
}

/// Which part of each record `reconstruct` covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    #[default]
    Full,
    Holdout,
}

/// Inference-side settings of `reconstruct` / `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ReconRunConfig {
    #[serde(default)]
    pub overlap: OverlapConfig,
    #[serde(default)]
    pub welch: WelchConfig,
    #[serde(default)]
    pub segment: Segment,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Nodes whose time histories / PSDs are exported for plotting
    /// (default: masked sensor nodes plus the first two unobserved nodes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_nodes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsDocument {
    pub facade: String,
    pub scenario: MaskScenario,
    pub segment: Segment,
    pub eval_range: (usize, usize),
    pub per_direction: Vec<DirectionReport>,
    pub aggregate: FacadeSummary,
}

pub struct ReconOutput {
    pub metrics_path: PathBuf,
    pub document: MetricsDocument,
}

/// Reconstruct every direction of a dataset with a trained checkpoint and
/// write fields, metrics, and plot-ready CSVs.
pub fn run_reconstruct(
    ck: &Path,
    data: &Path,
    scenario: &MaskScenario,
    cfg: &ReconRunConfig,
    out_dir: &Path,
    threads: usize,
) -> Result<ReconOutput> {
    match cfg.precision {
        Precision::F32 => run_reconstruct_typed::<f32>(ck, data, scenario, cfg, out_dir, threads),
        Precision::F64 => run_reconstruct_typed::<f64>(ck, data, scenario, cfg, out_dir, threads),
    }
}

/// Quantize to the stored f32 representation so that metrics computed now
/// and metrics recomputed from the emitted files agree bit-exactly.
fn quantize(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = *v as f32 as f64;
    }
}

fn metrics_for_direction(
    result: &ReconstructionResult,
    rec: &PreparedRecord,
    graph: &FacadeGraph,
    scenario: &MaskScenario,
    eval_range: (usize, usize),
    welch: &WelchConfig,
) -> Result<DirectionReport> {
    let parts = crate::train::partition(scenario, graph);
    evaluate_direction(result, rec, graph, &parts, eval_range, welch, true)
}

fn run_reconstruct_typed<S: Scalar>(
    ck: &Path,
    data: &Path,
    scenario: &MaskScenario,
    cfg: &ReconRunConfig,
    out_dir: &Path,
    threads: usize,
) -> Result<ReconOutput> {
    ensure_dir(out_dir)?;
    let loaded = load_data(data, cfg.train_fraction)?;
    if loaded.pool.is_empty() {
        return Err(Error::Data("dataset has no records".to_string()));
    }
    let model: ReconModel<S> = load_recon_model(ck, Arc::clone(&loaded.graph))?;
    scenario.validate(&loaded.graph)?;

    let snapshot = serde_json::json!({
        "checkpoint": ck.display().to_string(),
        "data": data.display().to_string(),
        "scenario": scenario,
        "recon": cfg,
    });
    write_snapshot(out_dir, "reconstruct", snapshot, threads)?;

    let mut reports = Vec::new();
    for rec in &loaded.pool {
        let range = match cfg.segment {
            Segment::Full => None,
            Segment::Holdout => Some((rec.t_train, rec.t_holdout())),
        };
        let mut result = with_threads(threads, || {
            reconstruct_full(rec, &model, &loaded.graph, scenario, &cfg.overlap, range)
        })?;
        quantize(&mut result.physical);
        // keep normalized consistent with the quantized stored field
        for node in 0..result.n {
            let m = rec.stats.mean[node];
            let s = rec.stats.std[node];
            for i in 0..result.t_len {
                result.normalized[node * result.t_len + i] = (result.physical[node * result.t_len + i] - m) / s;
            }
        }
        io::write_fprd_values(
            &out_dir.join(field_file_name(rec.direction_deg)),
            result.n,
            result.t_len,
            rec.sample_rate_hz,
            &result.physical,
        )?;
        let eval_range = eval_range_of(rec, cfg.segment);
        let report = metrics_for_direction(&result, rec, &loaded.graph, scenario, eval_range, &cfg.welch)?;
        write_plot_files(out_dir, &result, rec, &loaded.graph, scenario, cfg, eval_range)?;
        reports.push(report);
    }
    let summary = aggregate(&loaded.manifest.facade, &reports)?;
    let document = MetricsDocument {
        facade: loaded.manifest.facade.clone(),
        scenario: scenario.clone(),
        segment: cfg.segment,
        eval_range: eval_range_of(&loaded.pool[0], cfg.segment),
        per_direction: reports,
        aggregate: summary,
    };
    let metrics_path = out_dir.join("metrics.json");
    write_json(&metrics_path, &serde_json::to_value(&document).unwrap())?;
    Ok(ReconOutput { metrics_path, document })
}

fn field_file_name(direction_deg: f64) -> String {
    format!("yhat_dir{direction_deg:06.1}").replace('.', "_") + ".fprd"
}

/// Metrics are always computed on the holdout segment.
fn eval_range_of(rec: &PreparedRecord, _segment: Segment) -> (usize, usize) {
    (rec.t_train, rec.t_holdout())
}

fn write_plot_files(
    out_dir: &Path,
    result: &ReconstructionResult,
    rec: &PreparedRecord,
    graph: &FacadeGraph,
    scenario: &MaskScenario,
    cfg: &ReconRunConfig,
    eval_range: (usize, usize),
) -> Result<()> {
    let plots = out_dir.join("plots");
    ensure_dir(&plots)?;
    let nodes: Vec<usize> = match &cfg.plot_nodes {
        Some(n) => n.clone(),
        None => {
            let mut n = scenario.masked_nodes(graph);
            n.extend(graph.unobserved_nodes().into_iter().take(2));
            n
        }
    };
    let (es, el) = eval_range;
    let off = es - result.range_start;
    let fs = rec.sample_rate_hz;
    for &node in &nodes {
        if node >= graph.n_nodes() {
            return Err(Error::config("recon.plot_nodes", format!("node {node} out of range")));
        }
        // time history CSV: t_index, time_s, reference, reconstruction
        let mut text = String::from("t_index,time_s,reference,reconstruction\n");
        let refer = rec.node_series(node);
        for i in 0..el {
            let t = es + i;
            let r = refer[t] * rec.stats.std[node] + rec.stats.mean[node];
            let p = result.physical[node * result.t_len + off + i];
            text.push_str(&format!("{},{},{},{}\n", t, t as f64 / fs, r, p));
        }
        let p = plots.join(format!("time_dir{}_node{:03}.csv", result.direction_deg, node));
        fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;

        // PSD curves over the holdout interval
        if el >= cfg.welch.nperseg {
            let pred: Vec<f64> = (0..el).map(|i| result.physical[node * result.t_len + off + i]).collect();
            let refer_phys: Vec<f64> =
                (0..el).map(|i| refer[es + i] * rec.stats.std[node] + rec.stats.mean[node]).collect();
            let (freqs, psd_p) = crate::infer::metrics::welch_psd(&pred, fs, &cfg.welch)?;
            let (_, psd_r) = crate::infer::metrics::welch_psd(&refer_phys, fs, &cfg.welch)?;
            let mut text = String::from("freq_hz,psd_reference,psd_reconstruction\n");
            for k in 0..freqs.len() {
                text.push_str(&format!("{},{},{}\n", freqs[k], psd_r[k], psd_p[k]));
            }
            let p = plots.join(format!("psd_dir{}_node{:03}.csv", result.direction_deg, node));
            fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
        }
    }
    // spatial snapshot + error map at the middle of the evaluation range
    let snap = es + el / 2;
    let off_snap = snap - result.range_start;
    let mut text = String::from("node,row,col,x,y,reference,reconstruction,abs_error\n");
    for node in 0..graph.n_nodes() {
        let (r, c) = crate::graph::node_pos(node, graph.rows);
        let (x, y) = graph.coords[node];
        let refer = rec.node_series(node)[snap] * rec.stats.std[node] + rec.stats.mean[node];
        let pred = result.physical[node * result.t_len + off_snap];
        text.push_str(&format!("{},{},{},{},{},{},{},{}\n", node, r, c, x, y, refer, pred, (pred - refer).abs()));
    }
    let p = plots.join(format!("field_dir{}_t{:06}.csv", result.direction_deg, snap));
    fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
    Ok(())
}

/// Recompute metrics.json from the stored reconstructions; returns the
/// recomputed document and whether it matches the stored file byte-for-byte.
pub fn run_evaluate(recon_dir: &Path, threads: usize) -> Result<(MetricsDocument, bool)> {
    let snap_path = recon_dir.join("config_snapshot.json");
    let text = fs::read_to_string(&snap_path).map_err(|e| Error::io(snap_path.display().to_string(), e))?;
    let snapshot: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(snap_path.display().to_string(), e))?;
    let config = snapshot.get("config").cloned().unwrap_or(serde_json::Value::Null);
    let data = PathBuf::from(
        config
            .get("data")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::config("config_snapshot.data", "missing"))?,
    );
    let scenario: MaskScenario = serde_json::from_value(config.get("scenario").cloned().unwrap_or_default())
        .map_err(|e| Error::config("config_snapshot.scenario", e.to_string()))?;
    let rcfg: ReconRunConfig = serde_json::from_value(config.get("recon").cloned().unwrap_or_default())
        .map_err(|e| Error::config("config_snapshot.recon", e.to_string()))?;

    let loaded = load_data(&data, rcfg.train_fraction)?;
    let _ = threads;
    let mut reports = Vec::new();
    for rec in &loaded.pool {
        let path = recon_dir.join(field_file_name(rec.direction_deg));
        let stored = io::read_fprd(&path, rec.direction_deg)?;
        let (range_start, t_len) = match rcfg.segment {
            Segment::Full => (0, rec.t_full),
            Segment::Holdout => (rec.t_train, rec.t_holdout()),
        };
        if stored.n != rec.n || stored.t_full != t_len {
            return Err(Error::Data(format!(
                "{}: stored field is {}x{}, expected {}x{}",
                path.display(),
                stored.n,
                stored.t_full,
                rec.n,
                t_len
            )));
        }
        let physical = stored.values.clone();
        let mut normalized = vec![0.0; physical.len()];
        for node in 0..rec.n {
            let m = rec.stats.mean[node];
            let s = rec.stats.std[node];
            for i in 0..t_len {
                normalized[node * t_len + i] = (physical[node * t_len + i] - m) / s;
            }
        }
        let result = ReconstructionResult {
            direction_deg: rec.direction_deg,
            n: rec.n,
            range_start,
            t_len,
            normalized,
            physical,
            scenario: scenario.clone(),
        };
        let eval_range = eval_range_of(rec, rcfg.segment);
        reports.push(metrics_for_direction(&result, rec, &loaded.graph, &scenario, eval_range, &rcfg.welch)?);
    }
    let summary = aggregate(&loaded.manifest.facade, &reports)?;
    let document = MetricsDocument {
        facade: loaded.manifest.facade.clone(),
        scenario,
        segment: rcfg.segment,
        eval_range: eval_range_of(&loaded.pool[0], rcfg.segment),
        per_direction: reports,
        aggregate: summary,
    };
    let recomputed = serde_json::to_string_pretty(&serde_json::to_value(&document).unwrap())
        .map_err(|e| Error::json("metrics.json".to_string(), e))?;
    let stored_path = recon_dir.join("metrics.json");
    let matches = match fs::read_to_string(&stored_path) {
        Ok(stored) => stored == recomputed,
        Err(_) => false,
    };
    fs::write(&stored_path, &recomputed).map_err(|e| Error::io(stored_path.display().to_string(), e))?;
    Ok((document, matches))
}

/// Forecast arguments of the `forecast` command.
pub struct ForecastArgs<'a> {
    pub recon_ck: &'a Path,
    pub fcst_ck: Option<&'a Path>,
    /// Persistence baseline or oracle instead of a learned checkpoint.
    pub kind: ForecastKind,
    pub data: &'a Path,
    pub scenario: MaskScenario,
    pub horizon_samples: Option<usize>,
    pub horizon_seconds: Option<f64>,
    pub direction_index: usize,
    pub overlap: OverlapConfig,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ForecastKind {
    #[default]
    Learned,
    Persist,
    Oracle,
}

pub fn run_forecast(args: &ForecastArgs, out_dir: &Path, threads: usize) -> Result<TwoStageResult> {
    run_forecast_typed::<f32>(args, out_dir, threads)
}

fn run_forecast_typed<S: Scalar>(args: &ForecastArgs, out_dir: &Path, threads: usize) -> Result<TwoStageResult> {
    ensure_dir(out_dir)?;
    let loaded = load_data(args.data, args.train_fraction)?;
    if args.direction_index >= loaded.pool.len() {
        return Err(Error::config("forecast.direction_index", "out of range"));
    }
    let rec = &loaded.pool[args.direction_index];
    let model: ReconModel<S> = load_recon_model(args.recon_ck, Arc::clone(&loaded.graph))?;
    let horizon = match (args.horizon_samples, args.horizon_seconds) {
        (Some(n), _) => n,
        (None, Some(s)) => (s * rec.sample_rate_hz).round() as usize,
        (None, None) => return Err(Error::config("forecast.horizon", "horizon required (samples or seconds)")),
    };
    let fcst_model: Option<ForecastModel<S>> = match args.kind {
        ForecastKind::Learned => {
            let ck = args.fcst_ck.ok_or_else(|| Error::config("forecast.fcst_ck", "learned kind needs a checkpoint"))?;
            Some(load_forecast_model(ck)?)
        }
        _ => None,
    };
    let forecaster = match args.kind {
        ForecastKind::Learned => Forecaster::Learned(fcst_model.as_ref().unwrap()),
        ForecastKind::Persist => Forecaster::Persistence { t_hist: 200 },
        ForecastKind::Oracle => Forecaster::Oracle { t_hist: 200 },
    };
    let t0 = rec.t_train;
    let result = with_threads(threads, || {
        two_stage_predict(rec, &loaded.graph, t0, horizon, &forecaster, &model, &args.scenario, &args.overlap)
    })?;
    let snapshot = serde_json::json!({
        "recon_ck": args.recon_ck.display().to_string(),
        "fcst_ck": args.fcst_ck.map(|p| p.display().to_string()),
        "kind": args.kind,
        "data": args.data.display().to_string(),
        "scenario": args.scenario,
        "horizon_samples": horizon,
        "direction_index": args.direction_index,
    });
    write_snapshot(out_dir, "forecast", snapshot, threads)?;
    io::write_fprd_values(&out_dir.join("y_future_twostage.fprd"), rec.n, horizon, rec.sample_rate_hz, &result.y_fut)?;
    io::write_fprd_values(&out_dir.join("y_future_reference.fprd"), rec.n, horizon, rec.sample_rate_hz, &result.y_ref)?;
    write_json(&out_dir.join("twostage.json"), &serde_json::to_value(&result).unwrap())?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphConfig;
    use crate::model::{DecoderConfig, EncoderConfig, GraphModuleConfig};

    pub fn tiny_synth_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            graph: GraphConfig { rows: 5, cols: 3, sensors: Some(vec![0, 2, 4, 7, 10, 12, 14]) },
            directions_deg: vec![0.0, 20.0],
            t_full: 600,
            sample_rate_hz: 250.0,
            modes: 2,
            mode_freqs_hz: Some(vec![5.0, 11.0]),
            base_amplitude: 1.0,
            amplitude_decay: 0.8,
            noise_sigma: 0.05,
            noise_corr_length: 2.0,
            noise_rho_t: 0.6,
            seed,
        }
    }

    pub fn tiny_run_cfg(seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            task: TrainTask::Recon,
            seed,
            precision: Precision::F32,
            train_fraction: 0.8,
            model: ModelConfig {
                window: 32,
                encoder: EncoderConfig { blocks: 2, kernel: 3, dilations: vec![1, 2], channels: 16, strided_layers: 2 },
                graph: GraphModuleConfig { layers: 2, hidden: 16, heads: 4 },
                decoder: DecoderConfig { upsample_layers: 2, residual_blocks: 1 },
                norm_eps: 1e-5,
                norm_groups: 8,
            },
            loss: LossConfig::default(),
            train: TrainConfig {
                epochs: 3,
                steps_per_epoch: 2,
                batch: 2,
                seed,
                curriculum: crate::train::CurriculumConfig { stage1_masked: 1, stage2_masked: 2, switch_epoch: 2 },
                ..TrainConfig::default()
            },
            forecast: None,
            scenario: MaskScenario::default(),
        }
    }

    #[test]
    fn synth_train_reconstruct_evaluate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let run_dir = dir.path().join("run");
        let recon_dir = dir.path().join("recon");

        run_synth(&tiny_synth_cfg(42), &data_dir, 1).unwrap();
        assert!(data_dir.join("manifest.json").exists());
        assert!(data_dir.join("config_snapshot.json").exists());

        let cfg = tiny_run_cfg(7);
        let out = run_train(&cfg, &data_dir, &run_dir, 1).unwrap();
        assert!(out.checkpoint.exists());
        assert!(out.log_path.exists());
        assert_eq!(out.log.len(), 6);

        let scenario = MaskScenario::new(vec![0, 3]);
        let rcfg = ReconRunConfig {
            overlap: OverlapConfig { hop: 16, ..OverlapConfig::default() },
            welch: WelchConfig { nperseg: 64, overlap: 0.5 },
            segment: Segment::Holdout,
            precision: Precision::F32,
            train_fraction: 0.8,
            plot_nodes: None,
        };
        let recon = run_reconstruct(&out.checkpoint, &data_dir, &scenario, &rcfg, &recon_dir, 1).unwrap();
        assert!(recon.metrics_path.exists());
        let stored = fs::read_to_string(&recon.metrics_path).unwrap();

        // evaluate recomputes the identical document from stored fields
        let (_, matched) = run_evaluate(&recon_dir, 1).unwrap();
        assert!(matched, "recomputed metrics.json differs from the stored one");
        let after = fs::read_to_string(recon_dir.join("metrics.json")).unwrap();
        assert_eq!(stored, after);
        // plot files exist
        assert!(recon_dir.join("plots").read_dir().unwrap().count() >= 3);
    }

    #[test]
    fn reproducible_runs_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        run_synth(&tiny_synth_cfg(5), &data_dir, 1).unwrap();
        let cfg = tiny_run_cfg(11);

        let run = |tag: &str| -> (String, String) {
            let run_dir = dir.path().join(format!("run_{tag}"));
            let recon_dir = dir.path().join(format!("recon_{tag}"));
            let out = run_train(&cfg, &data_dir, &run_dir, 1).unwrap();
            let scenario = MaskScenario::new(vec![1, 4]);
            let rcfg = ReconRunConfig {
                overlap: OverlapConfig { hop: 16, ..OverlapConfig::default() },
                welch: WelchConfig { nperseg: 64, overlap: 0.5 },
                segment: Segment::Holdout,
                precision: Precision::F32,
                train_fraction: 0.8,
                plot_nodes: Some(vec![]),
            };
            run_reconstruct(&out.checkpoint, &data_dir, &scenario, &rcfg, &recon_dir, 1).unwrap();
            (
                fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap(),
                fs::read_to_string(recon_dir.join("metrics.json")).unwrap(),
            )
        };
        let (log_a, metrics_a) = run("a");
        let (log_b, metrics_b) = run("b");
        assert_eq!(log_a, log_b, "training logs must be byte-identical");
        assert_eq!(metrics_a, metrics_b, "metrics.json must be byte-identical");
    }
}
