//! Data pipeline: pressure records, the leakage-free split/normalization
//! protocol, masking scenarios, and training-window sampling.

pub mod io;
pub mod synth;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FacadeGraph;
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

/// Raw pressure-coefficient record for one wind direction: values are an
/// N x T_full matrix, row per node.
#[derive(Debug, Clone)]
pub struct PressureRecord {
    pub direction_deg: f64,
    pub sample_rate_hz: f64,
    pub n: usize,
    pub t_full: usize,
    /// Row-major [N, T_full].
    pub values: Vec<f64>,
}

impl PressureRecord {
    pub fn new(direction_deg: f64, sample_rate_hz: f64, n: usize, t_full: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * t_full {
            return Err(Error::Data(format!(
                "record {direction_deg} deg: {n}x{t_full} needs {} values, got {}",
                n * t_full,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "record {direction_deg} deg: non-finite value at (node {}, sample {})",
                    i / t_full,
                    i % t_full
                )));
            }
        }
        Ok(PressureRecord { direction_deg, sample_rate_hz, n, t_full, values })
    }

    pub fn node_series(&self, node: usize) -> &[f64] {
        &self.values[node * self.t_full..(node + 1) * self.t_full]
    }
}

/// Per-node mean/std computed on the training segment only.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Nodes whose std was clamped (constant training segment).
    pub clamped_nodes: Vec<usize>,
}

pub const STD_CLAMP: f64 = 1e-8;

/// A record after the contiguous temporal split and train-only z-scoring.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub direction_deg: f64,
    pub sample_rate_hz: f64,
    pub n: usize,
    pub t_full: usize,
    pub t_train: usize,
    /// Row-major [N, T_full], z-scored with train-segment statistics.
    pub normalized: Vec<f64>,
    pub stats: NormalizationStats,
}

impl PreparedRecord {
    pub fn t_holdout(&self) -> usize {
        self.t_full - self.t_train
    }

    pub fn node_series(&self, node: usize) -> &[f64] {
        &self.normalized[node * self.t_full..(node + 1) * self.t_full]
    }

    /// De-normalize a [N, T] block of model output back to physical units.
    pub fn denormalize(&self, block: &[f64]) -> Vec<f64> {
        let t = block.len() / self.n;
        let mut out = vec![0.0; block.len()];
        for node in 0..self.n {
            let m = self.stats.mean[node];
            let s = self.stats.std[node];
            for i in 0..t {
                out[node * t + i] = block[node * t + i] * s + m;
            }
        }
        out
    }
}

/// Contiguous 80/20 split followed by per-node z-scoring with statistics from
/// the training segment exclusively.
pub fn split_and_normalize(record: &PressureRecord, train_fraction: f64) -> Result<PreparedRecord> {
    if record.t_full < 2 {
        return Err(Error::Data(format!("record {} deg too short to split", record.direction_deg)));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction <= 0.0 {
        return Err(Error::config("data.train_fraction", format!("{train_fraction} not in (0,1)")));
    }
    let t_train = (train_fraction * record.t_full as f64).floor() as usize;
    if t_train == 0 || t_train >= record.t_full {
        return Err(Error::Data(format!("degenerate split: t_train={t_train} of {}", record.t_full)));
    }
    let mut mean = vec![0.0; record.n];
    let mut std = vec![0.0; record.n];
    let mut clamped = Vec::new();
    for node in 0..record.n {
        let train = &record.values[node * record.t_full..node * record.t_full + t_train];
        let mut m: f64 = train.iter().sum::<f64>() / t_train as f64;
        let var: f64 = train.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t_train as f64;
        let mut s = var.sqrt();
        if s < STD_CLAMP {
            s = STD_CLAMP;
            clamped.push(node);
            // an exactly constant segment normalizes to exact zeros
            if train.iter().all(|&v| v == train[0]) {
                m = train[0];
            }
        }
        mean[node] = m;
        std[node] = s;
    }
    let mut normalized = vec![0.0; record.values.len()];
    for node in 0..record.n {
        let m = mean[node];
        let s = std[node];
        let src = &record.values[node * record.t_full..(node + 1) * record.t_full];
        let dst = &mut normalized[node * record.t_full..(node + 1) * record.t_full];
        for (d, v) in dst.iter_mut().zip(src) {
            *d = (v - m) / s;
        }
    }
    Ok(PreparedRecord {
        direction_deg: record.direction_deg,
        sample_rate_hz: record.sample_rate_hz,
        n: record.n,
        t_full: record.t_full,
        t_train,
        normalized,
        stats: NormalizationStats { mean, std, clamped_nodes: clamped },
    })
}

/// Masked instrumented sensors for one reconstruction scenario, as local
/// sensor indices into the ordered sensor list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct MaskScenario {
    pub masked_sensors: Vec<usize>,
}

impl MaskScenario {
    pub fn new(masked_sensors: Vec<usize>) -> Self {
        MaskScenario { masked_sensors }
    }

    pub fn validate(&self, graph: &FacadeGraph) -> Result<()> {
        let ns = graph.sensors.len();
        let mut seen = vec![false; ns];
        for &s in &self.masked_sensors {
            if s >= ns {
                return Err(Error::config("scenario.masked_sensors", format!("sensor index {s} out of {ns}")));
            }
            if seen[s] {
                return Err(Error::config("scenario.masked_sensors", format!("duplicate sensor index {s}")));
            }
            seen[s] = true;
        }
        if self.masked_sensors.len() == ns {
            return Err(Error::Data("scenario masks all sensors; no observations remain".to_string()));
        }
        Ok(())
    }

    /// Global node ids of masked sensors.
    pub fn masked_nodes(&self, graph: &FacadeGraph) -> Vec<usize> {
        self.masked_sensors.iter().map(|&s| graph.sensors[s]).collect()
    }

    /// Global node ids of available (observed) sensors, in sensor order.
    pub fn observed_nodes(&self, graph: &FacadeGraph) -> Vec<usize> {
        let mut masked = vec![false; graph.sensors.len()];
        for &s in &self.masked_sensors {
            masked[s] = true;
        }
        graph
            .sensors
            .iter()
            .enumerate()
            .filter(|(i, _)| !masked[*i])
            .map(|(_, &id)| id)
            .collect()
    }

    /// Local indices of available sensors, ascending.
    pub fn observed_sensors(&self, n_sensors: usize) -> Vec<usize> {
        let mut masked = vec![false; n_sensors];
        for &s in &self.masked_sensors {
            masked[s] = true;
        }
        (0..n_sensors).filter(|&i| !masked[i]).collect()
    }
}

/// One training/evaluation window: zero-filled input X, mask P, conditioning,
/// and the full-field target Y (normalized space).
#[derive(Debug, Clone)]
pub struct WindowSample<S: Scalar> {
    /// [N, T], zero wherever P is zero.
    pub x: Tensor<S>,
    /// [N, T] binary observation mask.
    pub p: Tensor<S>,
    pub direction_deg: f64,
    /// [N, T] target over all nodes.
    pub y: Tensor<S>,
    pub scenario: MaskScenario,
    pub direction_index: usize,
    pub start: usize,
}

/// Deterministic outage application: builds (X, P) from a normalized [N, T]
/// segment under a scenario. Masking spans the full window.
pub fn apply_outage<S: Scalar>(
    segment: &[f64],
    n: usize,
    t: usize,
    scenario: &MaskScenario,
    graph: &FacadeGraph,
) -> Result<(Tensor<S>, Tensor<S>)> {
    scenario.validate(graph)?;
    if segment.len() != n * t || n != graph.n_nodes() {
        return Err(Error::shape("apply_outage", format!("segment {}x{} vs graph {}", n, t, graph.n_nodes())));
    }
    let observed = scenario.observed_nodes(graph);
    let mut x = vec![S::ZERO; n * t];
    let mut p = vec![S::ZERO; n * t];
    for &node in &observed {
        for i in 0..t {
            x[node * t + i] = S::from_f64(segment[node * t + i]);
            p[node * t + i] = S::ONE;
        }
    }
    Ok((Tensor::new(vec![n, t], x)?, Tensor::new(vec![n, t], p)?))
}

/// Draw one training window: uniform direction, uniform start within the
/// training segment, masking per the provided scenario.
pub fn sample_window<S: Scalar, R: Rng>(
    pool: &[PreparedRecord],
    graph: &FacadeGraph,
    rng: &mut R,
    t: usize,
    scenario: MaskScenario,
) -> Result<WindowSample<S>> {
    if pool.is_empty() {
        return Err(Error::Data("empty training pool".to_string()));
    }
    let di = rng.random_range(0..pool.len());
    let rec = &pool[di];
    if rec.t_train < t {
        return Err(Error::Data(format!(
            "training segment of {} deg has {} samples, shorter than window {t}",
            rec.direction_deg, rec.t_train
        )));
    }
    let start = rng.random_range(0..=rec.t_train - t);
    window_at(rec, di, graph, start, t, scenario)
}

/// Assemble the window at a fixed (direction, start) position.
pub fn window_at<S: Scalar>(
    rec: &PreparedRecord,
    direction_index: usize,
    graph: &FacadeGraph,
    start: usize,
    t: usize,
    scenario: MaskScenario,
) -> Result<WindowSample<S>> {
    let n = rec.n;
    if start + t > rec.t_full {
        return Err(Error::Data(format!("window [{start}, {}) beyond record length {}", start + t, rec.t_full)));
    }
    let mut segment = vec![0.0; n * t];
    for node in 0..n {
        let src = &rec.normalized[node * rec.t_full + start..node * rec.t_full + start + t];
        segment[node * t..(node + 1) * t].copy_from_slice(src);
    }
    let (x, p) = apply_outage::<S>(&segment, n, t, &scenario, graph)?;
    let y = Tensor::from_f64_slice(&[n, t], &segment)?;
    Ok(WindowSample {
        x,
        p,
        direction_deg: rec.direction_deg,
        y,
        scenario,
        direction_index,
        start,
    })
}
