//! Two-stage predictive extension: a causal sensor-level forecaster feeding
//! the frozen reconstruction model as a spatial completion operator.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MaskScenario, NormalizationStats, PreparedRecord};
use crate::error::{Error, Result};
use crate::graph::FacadeGraph;
use crate::infer::{metrics::SeriesMetrics, reconstruct_full, OverlapConfig, WindowReconstructor};
use crate::model::layers::{Conv1dLayer, LinearLayer, ParamVars};
use crate::num::optim::{AdamWConfig, OptimizerState, ParamId, ParamSet};
use crate::num::scalar::Scalar;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForecastConfig {
    pub t_hist: usize,
    pub horizon: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_dilations")]
    pub dilations: Vec<usize>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
}

fn default_channels() -> usize {
    32
}
fn default_kernel() -> usize {
    3
}
fn default_dilations() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}
fn default_clip() -> f64 {
    1.0
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            t_hist: 200,
            horizon: 1000,
            channels: default_channels(),
            kernel: default_kernel(),
            dilations: default_dilations(),
            epochs: 60,
            steps_per_epoch: 10,
            batch: 8,
            lr: 1e-3,
            clip_norm: default_clip(),
            seed: 0,
        }
    }
}

/// Channel-shared causal dilated convolution network emitting all horizon
/// steps in one pass as offsets from the last observed value.
pub struct ForecastModel<S: Scalar> {
    pub cfg: ForecastConfig,
    /// Channel count the model was trained on (interface contract).
    pub n_channels: usize,
    pub params: ParamSet<S>,
    convs: Vec<Conv1dLayer>,
    head: LinearLayer,
}

impl<S: Scalar> ForecastModel<S> {
    pub fn new<R: Rng>(cfg: ForecastConfig, n_channels: usize, rng: &mut R) -> Result<Self> {
        if cfg.t_hist < 2 || cfg.horizon == 0 {
            return Err(Error::config("forecast", "t_hist must be >= 2 and horizon positive"));
        }
        if cfg.kernel < 2 {
            return Err(Error::config("forecast.kernel", "kernel must be >= 2 for a causal stack"));
        }
        let mut ps = ParamSet::new();
        let mut convs = Vec::with_capacity(cfg.dilations.len());
        for (i, &dil) in cfg.dilations.iter().enumerate() {
            let c_in = if i == 0 { 1 } else { cfg.channels };
            // left-causal: symmetric padding (k-1)*dil, reading only the
            // leading t_hist positions downstream
            convs.push(Conv1dLayer::new(
                &mut ps,
                &format!("forecast.conv{i}"),
                c_in,
                cfg.channels,
                cfg.kernel,
                1,
                dil,
                (cfg.kernel - 1) * dil,
                rng,
            )?);
        }
        let head = LinearLayer::new(&mut ps, "forecast.head", cfg.channels, cfg.horizon, false, rng)?;
        Ok(ForecastModel { cfg, n_channels, params: ps, convs, head })
    }

    /// History samples within the receptive field of the final position.
    pub fn receptive_field(&self) -> usize {
        1 + (self.cfg.kernel - 1) * self.cfg.dilations.iter().sum::<usize>()
    }

    /// Forward on a tape: history [C, t_hist] -> delta forecast [C, horizon].
    pub fn forward_on_tape(&self, tape: &mut Tape<S>, pv: &ParamVars, history: Var) -> Result<Var> {
        let hs = tape.value(history).shape().to_vec();
        if hs.len() != 2 || hs[1] != self.cfg.t_hist {
            return Err(Error::shape("forecast", format!("history must be [channels, {}], got {hs:?}", self.cfg.t_hist)));
        }
        let c = hs[0];
        let mut h = tape.reshape(history, vec![c, 1, self.cfg.t_hist])?;
        for conv in &self.convs {
            h = conv.apply(tape, pv, h)?;
            h = tape.gelu(h)?;
        }
        // features at the last history instant (position t_hist-1 stays
        // causal at every depth because each conv only looks backwards)
        let feat = tape.time_at(h, self.cfg.t_hist - 1)?;
        self.head.apply(tape, pv, feat)
    }

    /// Forecast in normalized units: last value plus the predicted offsets.
    pub fn forecast(&self, history: &[f64], channels: usize) -> Result<Vec<f64>> {
        if channels != self.n_channels {
            return Err(Error::shape(
                "forecast",
                format!("model trained on {} sensor channels, got {channels}", self.n_channels),
            ));
        }
        if history.len() != channels * self.cfg.t_hist {
            return Err(Error::shape(
                "forecast",
                format!("history of {} values vs {} channels x {}", history.len(), channels, self.cfg.t_hist),
            ));
        }
        let mut tape = Tape::without_finite_checks();
        let pv = ParamVars::register(&self.params, &mut tape);
        let hist = tape.leaf(Tensor::from_f64_slice(&[channels, self.cfg.t_hist], history)?);
        let delta = self.forward_on_tape(&mut tape, &pv, hist)?;
        let d = tape.value(delta);
        let h = self.cfg.horizon;
        let mut out = vec![0.0; channels * h];
        for ch in 0..channels {
            let anchor = history[ch * self.cfg.t_hist + self.cfg.t_hist - 1];
            for j in 0..h {
                out[ch * h + j] = anchor + d.data()[ch * h + j].to_f64();
            }
        }
        Ok(out)
    }
}

/// Forecasting operator plugged into the two-stage pipeline.
pub enum Forecaster<'a, S: Scalar> {
    Learned(&'a ForecastModel<S>),
    /// Last observed value held over the horizon.
    Persistence { t_hist: usize },
    /// Returns the measured future (error-propagation oracle).
    Oracle { t_hist: usize },
}

impl<S: Scalar> Forecaster<'_, S> {
    pub fn t_hist(&self) -> usize {
        match self {
            Forecaster::Learned(m) => m.cfg.t_hist,
            Forecaster::Persistence { t_hist } | Forecaster::Oracle { t_hist } => *t_hist,
        }
    }

    fn predict(&self, history: &[f64], channels: usize, horizon: usize, measured_future: &[f64]) -> Result<Vec<f64>> {
        match self {
            Forecaster::Learned(m) => {
                if m.cfg.horizon != horizon {
                    return Err(Error::config(
                        "forecast.horizon",
                        format!("model emits {} steps, requested {horizon}", m.cfg.horizon),
                    ));
                }
                m.forecast(history, channels)
            }
            Forecaster::Persistence { t_hist } => {
                let mut out = vec![0.0; channels * horizon];
                for ch in 0..channels {
                    let last = history[ch * t_hist + t_hist - 1];
                    for v in &mut out[ch * horizon..(ch + 1) * horizon] {
                        *v = last;
                    }
                }
                Ok(out)
            }
            Forecaster::Oracle { .. } => Ok(measured_future.to_vec()),
        }
    }
}

/// Training samples: (history, future-delta) pairs over the sensor channels
/// of the given scenario, drawn from training segments only.
pub fn train_forecaster<S: Scalar>(
    pool: &[PreparedRecord],
    graph: &FacadeGraph,
    scenario: &MaskScenario,
    cfg: ForecastConfig,
) -> Result<ForecastModel<S>> {
    scenario.validate(graph)?;
    let channels = scenario.observed_nodes(graph);
    if pool.is_empty() {
        return Err(Error::Data("empty training pool".to_string()));
    }
    for rec in pool {
        if rec.t_train < cfg.t_hist + cfg.horizon {
            return Err(Error::Data(format!(
                "direction {}: training segment {} shorter than t_hist + horizon = {}",
                rec.direction_deg,
                rec.t_train,
                cfg.t_hist + cfg.horizon
            )));
        }
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(4);
    let mut model = ForecastModel::<S>::new(cfg.clone(), channels.len(), &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(5);
    let adam = AdamWConfig { lr: cfg.lr, weight_decay: 0.0, clip_norm: cfg.clip_norm, ..AdamWConfig::default() };
    let mut opt = OptimizerState::new(adam, &model.params);
    let s = channels.len();
    let th = cfg.t_hist;
    let h = cfg.horizon;
    for _epoch in 0..cfg.epochs {
        for _step in 0..cfg.steps_per_epoch {
            // stack sensors of all batch windows into the leading dim
            let rows = cfg.batch * s;
            let mut hist = vec![0.0; rows * th];
            let mut delta = vec![0.0; rows * h];
            for b in 0..cfg.batch {
                let di = rng.random_range(0..pool.len());
                let rec = &pool[di];
                let start = rng.random_range(0..=rec.t_train - th - h);
                for (ci, &node) in channels.iter().enumerate() {
                    let row = b * s + ci;
                    let series = rec.node_series(node);
                    hist[row * th..(row + 1) * th].copy_from_slice(&series[start..start + th]);
                    let anchor = series[start + th - 1];
                    for j in 0..h {
                        delta[row * h + j] = series[start + th + j] - anchor;
                    }
                }
            }
            let mut tape = Tape::without_finite_checks();
            let pv = ParamVars::register(&model.params, &mut tape);
            let hv = tape.leaf(Tensor::from_f64_slice(&[rows, th], &hist)?);
            let pred = model.forward_on_tape(&mut tape, &pv, hv)?;
            let target = Arc::new(Tensor::from_f64_slice(&[rows, h], &delta)?);
            let loss = tape.huber_mean(pred, target, 1.0)?;
            let lv = tape.value(loss).item()?.to_f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite { context: "forecaster training loss".to_string() });
            }
            let grads = tape.backward(loss)?;
            model.params.zero_grads();
            for i in 0..model.params.len() {
                if let Some(g) = grads.get(pv.var(ParamId(i))) {
                    model.params.accumulate_grad(ParamId(i), g);
                }
            }
            opt.step(&mut model.params)?;
        }
    }
    Ok(model)
}

/// Subset metrics pooled over channels.
fn pooled_metrics(pred: &[f64], truth: &[f64]) -> Result<SeriesMetrics> {
    crate::infer::metrics::metrics(pred, truth)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub t0: usize,
    pub horizon: usize,
    /// Forecast quality at the available sensors (normalized units).
    pub sensor_rmse: f64,
    pub sensor_mae: f64,
    pub sensor_pearson: f64,
    /// Full-field metrics at non-instrumented nodes, normalized units.
    pub two_stage_rmse: f64,
    pub two_stage_mae: f64,
    pub two_stage_pearson: f64,
    pub reference_rmse: f64,
    pub reference_mae: f64,
    pub reference_pearson: f64,
    /// rmse(two-stage) - rmse(reference-input) at non-instrumented nodes.
    pub delta_rmse: f64,
    /// [N, horizon] physical-unit fields.
    #[serde(skip)]
    pub y_fut: Vec<f64>,
    #[serde(skip)]
    pub y_ref: Vec<f64>,
    #[serde(skip)]
    pub y_fut_normalized: Vec<f64>,
    #[serde(skip)]
    pub y_ref_normalized: Vec<f64>,
}

/// Build a horizon-length pseudo-record whose observed rows carry the given
/// sensor signals; everything else is zero (never read by the model).
fn horizon_record(
    base: &PreparedRecord,
    observed: &[usize],
    sensor_values: &[f64],
    horizon: usize,
) -> PreparedRecord {
    let n = base.n;
    let mut normalized = vec![0.0; n * horizon];
    for (ci, &node) in observed.iter().enumerate() {
        normalized[node * horizon..(node + 1) * horizon]
            .copy_from_slice(&sensor_values[ci * horizon..(ci + 1) * horizon]);
    }
    PreparedRecord {
        direction_deg: base.direction_deg,
        sample_rate_hz: base.sample_rate_hz,
        n,
        t_full: horizon,
        t_train: horizon,
        normalized,
        stats: NormalizationStats {
            mean: base.stats.mean.clone(),
            std: base.stats.std.clone(),
            clamped_nodes: base.stats.clamped_nodes.clone(),
        },
    }
}

/// Two-stage prediction over the horizon starting at `t0`: forecast sensors,
/// complete the field with the frozen reconstruction model, and compare with
/// the reference-input variant driven by measured future sensor values.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_predict<S: Scalar>(
    rec: &PreparedRecord,
    graph: &FacadeGraph,
    t0: usize,
    horizon: usize,
    forecaster: &Forecaster<S>,
    recon: &impl WindowReconstructor<S>,
    scenario: &MaskScenario,
    overlap: &OverlapConfig,
) -> Result<TwoStageResult> {
    scenario.validate(graph)?;
    let t_hist = forecaster.t_hist();
    if t0 < t_hist {
        return Err(Error::Data(format!("history window needs {t_hist} samples before t0 = {t0}")));
    }
    if t0 + horizon > rec.t_full {
        return Err(Error::Data(format!(
            "horizon [{t0}, {}) runs past the record ({}); the reference variant needs measured future data",
            t0 + horizon,
            rec.t_full
        )));
    }
    let observed = scenario.observed_nodes(graph);
    let s = observed.len();
    let mut history = vec![0.0; s * t_hist];
    let mut future = vec![0.0; s * horizon];
    for (ci, &node) in observed.iter().enumerate() {
        let series = rec.node_series(node);
        history[ci * t_hist..(ci + 1) * t_hist].copy_from_slice(&series[t0 - t_hist..t0]);
        future[ci * horizon..(ci + 1) * horizon].copy_from_slice(&series[t0..t0 + horizon]);
    }
    let forecast = forecaster.predict(&history, s, horizon, &future)?;

    // stage 2 through the identical mask-aware inference pathway
    let fut_rec = horizon_record(rec, &observed, &forecast, horizon);
    let ref_rec = horizon_record(rec, &observed, &future, horizon);
    let fut = reconstruct_full(&fut_rec, recon, graph, scenario, overlap, None)?;
    let reference = reconstruct_full(&ref_rec, recon, graph, scenario, overlap, None)?;

    // metrics at non-instrumented nodes, normalized units
    let unobserved = graph.unobserved_nodes();
    let gather = |field: &[f64]| -> Vec<f64> {
        unobserved.iter().flat_map(|&node| field[node * horizon..(node + 1) * horizon].to_vec()).collect()
    };
    let truth: Vec<f64> = unobserved
        .iter()
        .flat_map(|&node| rec.node_series(node)[t0..t0 + horizon].to_vec())
        .collect();
    let m_fut = pooled_metrics(&gather(&fut.normalized), &truth)?;
    let m_ref = pooled_metrics(&gather(&reference.normalized), &truth)?;
    let m_sensor = pooled_metrics(&forecast, &future)?;

    Ok(TwoStageResult {
        t0,
        horizon,
        sensor_rmse: m_sensor.rmse,
        sensor_mae: m_sensor.mae,
        sensor_pearson: m_sensor.pearson.unwrap_or(f64::NAN),
        two_stage_rmse: m_fut.rmse,
        two_stage_mae: m_fut.mae,
        two_stage_pearson: m_fut.pearson.unwrap_or(f64::NAN),
        reference_rmse: m_ref.rmse,
        reference_mae: m_ref.mae,
        reference_pearson: m_ref.pearson.unwrap_or(f64::NAN),
        delta_rmse: m_fut.rmse - m_ref.rmse,
        y_fut: fut.physical,
        y_ref: reference.physical,
        y_fut_normalized: fut.normalized,
        y_ref_normalized: reference.normalized,
    })
}
