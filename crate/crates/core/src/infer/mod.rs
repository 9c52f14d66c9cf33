//! Full-sequence reconstruction: overlapping windows, normalized weighted
//! overlap-add merging, and a graph-neighbor-average baseline.

pub mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_outage, MaskScenario, PreparedRecord, WindowSample};
use crate::error::{Error, Result};
use crate::graph::FacadeGraph;
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

/// Temporal weighting profile for window merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// Strictly positive Hann-like bump 0.5 - 0.5 cos(2 pi (tau+0.5) / T).
    #[default]
    Hann,
    Uniform,
}

impl std::str::FromStr for WeightKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WeightKind::Hann),
            "uniform" => Ok(WeightKind::Uniform),
            other => Err(Error::config("overlap.weights", format!("unknown weight kind `{other}`"))),
        }
    }
}

/// Per-offset window weights.
pub fn window_weights(t: usize, kind: WeightKind) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::config("overlap.window", "window length must be >= 2"));
    }
    Ok(match kind {
        WeightKind::Uniform => vec![1.0; t],
        WeightKind::Hann => {
            // computed on the first half and mirrored so the symmetry
            // w(tau) = w(t-1-tau) holds bit-exactly
            let mut w = vec![0.0; t];
            for tau in 0..t.div_ceil(2) {
                let v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (tau as f64 + 0.5) / t as f64).cos();
                w[tau] = v;
                w[t - 1 - tau] = v;
            }
            w
        }
    })
}

/// Overlap-add execution plan over a record of length `t_full`.
#[derive(Debug, Clone)]
pub struct OverlapPlan {
    pub window: usize,
    pub hop: usize,
    pub eps: f64,
    pub weights: Vec<f64>,
    /// Window start indices: regular hops plus a final tail-aligned start.
    pub starts: Vec<usize>,
    pub t_full: usize,
}

/// Plan parameters as they appear in configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverlapConfig {
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default)]
    pub weights: WeightKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_hop() -> usize {
    100
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig { hop: default_hop(), weights: WeightKind::default(), eps: default_eps() }
    }
}

impl OverlapPlan {
    pub fn new(t_full: usize, window: usize, hop: usize, kind: WeightKind, eps: f64) -> Result<Self> {
        if t_full < window {
            return Err(Error::Data(format!(
                "record of {t_full} samples is shorter than the reconstruction window {window}"
            )));
        }
        if hop == 0 {
            return Err(Error::config("overlap.hop", "hop must be positive"));
        }
        let mut starts: Vec<usize> = (0..=(t_full - window)).step_by(hop).collect();
        let last = *starts.last().expect("at least one window");
        if last + window < t_full {
            // shift the final window left-aligned to end exactly at t_full
            starts.push(t_full - window);
        }
        let plan = OverlapPlan { window, hop, eps, weights: window_weights(window, kind)?, starts, t_full };
        plan.check_coverage()?;
        Ok(plan)
    }

    /// Every instant must be covered by at least one window.
    fn check_coverage(&self) -> Result<()> {
        let mut covered = vec![false; self.t_full];
        for &s in &self.starts {
            for c in covered.iter_mut().skip(s).take(self.window) {
                *c = true;
            }
        }
        let gaps: Vec<usize> = covered.iter().enumerate().filter(|(_, &c)| !c).map(|(i, _)| i).collect();
        if !gaps.is_empty() {
            let head: Vec<usize> = gaps.iter().copied().take(8).collect();
            return Err(Error::Data(format!(
                "overlap plan leaves {} instants uncovered (first: {head:?}); decrease the hop",
                gaps.len()
            )));
        }
        Ok(())
    }
}

/// Normalized weighted overlap-add of per-window predictions, each shaped
/// [N, T] row-major, into the full [N, T_full] field.
pub fn overlap_add(windows: &[Vec<f64>], n: usize, plan: &OverlapPlan) -> Result<Vec<f64>> {
    if windows.len() != plan.starts.len() {
        return Err(Error::shape(
            "overlap_add",
            format!("{} window predictions for {} planned starts", windows.len(), plan.starts.len()),
        ));
    }
    for (k, w) in windows.iter().enumerate() {
        if w.len() != n * plan.window {
            return Err(Error::shape("overlap_add", format!("window {k} has {} values, want {}", w.len(), n * plan.window)));
        }
    }
    let t_full = plan.t_full;
    let mut num = vec![0.0; n * t_full];
    let mut den = vec![0.0; t_full];
    for (k, &start) in plan.starts.iter().enumerate() {
        let w = &windows[k];
        for (tau, &omega) in plan.weights.iter().enumerate() {
            den[start + tau] += omega;
        }
        for node in 0..n {
            let src = &w[node * plan.window..(node + 1) * plan.window];
            let dst = &mut num[node * t_full + start..node * t_full + start + plan.window];
            for ((d, &s), &omega) in dst.iter_mut().zip(src).zip(&plan.weights) {
                *d += omega * s;
            }
        }
    }
    for t in 0..t_full {
        let d = den[t] + plan.eps;
        if d <= 0.0 {
            return Err(Error::Data(format!("zero total weight at instant {t}")));
        }
        for node in 0..n {
            num[node * t_full + t] /= d;
        }
    }
    Ok(num)
}

/// Anything that maps one partially observed window to a full-field window.
pub trait WindowReconstructor<S: Scalar>: Sync {
    fn window_len(&self) -> usize;
    fn reconstruct_window(&self, sample: &WindowSample<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> WindowReconstructor<S> for crate::model::ReconModel<S> {
    fn window_len(&self) -> usize {
        self.cfg.window
    }
    fn reconstruct_window(&self, sample: &WindowSample<S>) -> Result<Tensor<S>> {
        self.forward(sample)
    }
}

/// Full-record reconstruction output.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub direction_deg: f64,
    pub n: usize,
    /// Offset of the reconstructed range within the source record.
    pub range_start: usize,
    pub t_len: usize,
    /// [N, t_len] in normalized units.
    pub normalized: Vec<f64>,
    /// [N, t_len] de-normalized to physical units.
    pub physical: Vec<f64>,
    pub scenario: MaskScenario,
}

/// Reconstruct a (sub)range of a prepared record through overlapping windows
/// and weighted overlap-add; the outage scenario is fixed over the record.
pub fn reconstruct_full<S: Scalar>(
    rec: &PreparedRecord,
    model: &impl WindowReconstructor<S>,
    graph: &FacadeGraph,
    scenario: &MaskScenario,
    overlap: &OverlapConfig,
    range: Option<(usize, usize)>,
) -> Result<ReconstructionResult> {
    scenario.validate(graph)?;
    let (range_start, t_len) = range.unwrap_or((0, rec.t_full));
    if range_start + t_len > rec.t_full {
        return Err(Error::Data(format!(
            "range [{range_start}, {}) outside record of {}",
            range_start + t_len,
            rec.t_full
        )));
    }
    let t = model.window_len();
    let plan = OverlapPlan::new(t_len, t, overlap.hop, overlap.weights, overlap.eps)?;
    let n = rec.n;

    let predictions: Vec<Result<Vec<f64>>> = plan
        .starts
        .par_iter()
        .map(|&s| {
            let abs = range_start + s;
            let mut segment = vec![0.0; n * t];
            for node in 0..n {
                let src = &rec.normalized[node * rec.t_full + abs..node * rec.t_full + abs + t];
                segment[node * t..(node + 1) * t].copy_from_slice(src);
            }
            let (x, p) = apply_outage::<S>(&segment, n, t, scenario, graph)?;
            let sample = WindowSample {
                x,
                p,
                direction_deg: rec.direction_deg,
                y: Tensor::from_f64_slice(&[n, t], &segment)?,
                scenario: scenario.clone(),
                direction_index: 0,
                start: abs,
            };
            let out = model.reconstruct_window(&sample)?;
            Ok(out.to_f64_vec())
        })
        .collect();
    let windows: Vec<Vec<f64>> = predictions.into_iter().collect::<Result<_>>()?;
    let normalized = overlap_add(&windows, n, &plan)?;
    let mut physical = vec![0.0; normalized.len()];
    for node in 0..n {
        let m = rec.stats.mean[node];
        let s = rec.stats.std[node];
        for i in 0..t_len {
            physical[node * t_len + i] = normalized[node * t_len + i] * s + m;
        }
    }
    Ok(ReconstructionResult {
        direction_deg: rec.direction_deg,
        n,
        range_start,
        t_len,
        normalized,
        physical,
        scenario: scenario.clone(),
    })
}

/// Graph-neighbor-average baseline: each node is predicted as the mean of
/// the nearest observed sensors by breadth-first graph distance.
pub fn neighbor_average_baseline(
    rec: &PreparedRecord,
    graph: &FacadeGraph,
    scenario: &MaskScenario,
    range: (usize, usize),
) -> Result<Vec<f64>> {
    scenario.validate(graph)?;
    let n = graph.n_nodes();
    let (start, len) = range;
    if start + len > rec.t_full {
        return Err(Error::Data("baseline range outside record".to_string()));
    }
    let observed = scenario.observed_nodes(graph);
    let mut is_observed = vec![false; n];
    for &o in &observed {
        is_observed[o] = true;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &graph.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut out = vec![0.0; n * len];
    for node in 0..n {
        // BFS level by level until a level holds observed sensors
        let mut seen = vec![false; n];
        let mut frontier = vec![node];
        seen[node] = true;
        let sources = loop {
            let found: Vec<usize> = frontier.iter().copied().filter(|&u| is_observed[u]).collect();
            if !found.is_empty() {
                break found;
            }
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break observed.clone(); // disconnected: fall back to all observed
            }
            frontier = next;
        };
        let inv = 1.0 / sources.len() as f64;
        let dst = &mut out[node * len..(node + 1) * len];
        for &src_node in &sources {
            let src = &rec.normalized[src_node * rec.t_full + start..src_node * rec.t_full + start + len];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += v * inv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_and_normalize, PressureRecord};
    use crate::graph::GraphConfig;

    fn rng_vals(seed: u64, n: usize) -> Vec<f64> {
        let mut st = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        (0..n)
            .map(|_| {
                st ^= st << 13;
                st ^= st >> 7;
                st ^= st << 17;
                (st >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn weight_profiles() {
        let u = window_weights(8, WeightKind::Uniform).unwrap();
        assert!(u.iter().all(|&w| w == 1.0));
        let h = window_weights(200, WeightKind::Hann).unwrap();
        // symmetric: w(tau) = w(T-1-tau) exactly
        for tau in 0..200 {
            assert_eq!(h[tau], h[199 - tau], "asymmetry at {tau}");
        }
        // strictly positive, attenuating toward the edges
        assert!(h.iter().all(|&w| w > 0.0));
        let w0_expected = 0.5 - 0.5 * (std::f64::consts::PI / 200.0).cos();
        assert!((h[0] - w0_expected).abs() < 1e-15);
        assert!(h[0] < 1e-4 && h[100] > 0.99);
        assert!(matches!("nope".parse::<WeightKind>(), Err(_)));
    }

    #[test]
    fn overlap_add_hand_cases() {
        // single window spanning the record, uniform weights
        let plan = OverlapPlan::new(4, 4, 4, WeightKind::Uniform, 1e-8).unwrap();
        let w0 = vec![1.0, 2.0, 3.0, 4.0];
        let out = overlap_add(&[w0.clone()], 1, &plan).unwrap();
        for (o, w) in out.iter().zip(&w0) {
            assert!((o - w / (1.0 + 1e-8)).abs() < 1e-9);
            assert!((o - w).abs() < 1e-7 * w.abs().max(1.0));
        }

        // two overlapping windows with identical values in the overlap
        let plan = OverlapPlan::new(6, 4, 2, WeightKind::Uniform, 0.0).unwrap();
        assert_eq!(plan.starts, vec![0, 2]);
        let a = vec![5.0; 4];
        let b = vec![5.0; 4];
        let out = overlap_add(&[a, b], 1, &plan).unwrap();
        assert!(out.iter().all(|&v| (v - 5.0).abs() < 1e-12));

        // weighted average: w1 = 0.25, w2 = 0.75, values 0 and 4 -> 3.0
        let mut plan = OverlapPlan::new(6, 4, 2, WeightKind::Uniform, 0.0).unwrap();
        // overlap instants are covered by window0 (tau 2,3) and window1 (tau 0,1)
        plan.weights = vec![0.75, 0.75, 0.25, 0.25];
        let a = vec![0.0; 4];
        let b = vec![4.0; 4];
        let out = overlap_add(&[a, b], 1, &plan).unwrap();
        // t=2: window0 tau=2 (w 0.25, v 0), window1 tau=0 (w 0.75, v 4)
        assert!((out[2] - 3.0).abs() < 1e-12, "got {}", out[2]);
    }

    #[test]
    fn overlap_add_matches_brute_force() {
        let n = 3;
        let t_full = 57;
        let window = 16;
        let hop = 7;
        let plan = OverlapPlan::new(t_full, window, hop, WeightKind::Hann, 1e-8).unwrap();
        let windows: Vec<Vec<f64>> =
            (0..plan.starts.len()).map(|k| rng_vals(100 + k as u64, n * window)).collect();
        let fast = overlap_add(&windows, n, &plan).unwrap();
        // direct accumulation over all (k, t) pairs
        for node in 0..n {
            for t in 0..t_full {
                let mut num = 0.0;
                let mut den = plan.eps;
                for (k, &s) in plan.starts.iter().enumerate() {
                    if t >= s && t < s + window {
                        let tau = t - s;
                        num += plan.weights[tau] * windows[k][node * window + tau];
                        den += plan.weights[tau];
                    }
                }
                let want = num / den;
                assert!((fast[node * t_full + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiling_uniform_eps0_is_exact_concatenation() {
        let n = 2;
        let plan = OverlapPlan::new(12, 4, 4, WeightKind::Uniform, 0.0).unwrap();
        assert_eq!(plan.starts, vec![0, 4, 8]);
        let windows: Vec<Vec<f64>> = (0..3).map(|k| rng_vals(k as u64 + 7, n * 4)).collect();
        let out = overlap_add(&windows, n, &plan).unwrap();
        for (k, w) in windows.iter().enumerate() {
            for node in 0..n {
                for tau in 0..4 {
                    assert_eq!(out[node * 12 + k * 4 + tau], w[node * 4 + tau]);
                }
            }
        }
    }

    #[test]
    fn start_enumeration_with_tail_alignment() {
        let plan = OverlapPlan::new(1520, 200, 100, WeightKind::Hann, 1e-8).unwrap();
        let mut want: Vec<usize> = (0..=1300).step_by(100).collect();
        want.push(1320);
        assert_eq!(plan.starts, want);
        assert_eq!(plan.starts.len(), 15);
        // record shorter than the window is rejected
        assert!(OverlapPlan::new(150, 200, 100, WeightKind::Hann, 1e-8).is_err());
        // degenerate hop leaving gaps is rejected at construction
        assert!(OverlapPlan::new(1000, 16, 700, WeightKind::Hann, 1e-8).is_err());
    }

    /// Identity "model": echoes X where observed, zero elsewhere.
    struct IdentityModel {
        t: usize,
    }

    impl WindowReconstructor<f64> for IdentityModel {
        fn window_len(&self) -> usize {
            self.t
        }
        fn reconstruct_window(&self, sample: &WindowSample<f64>) -> Result<Tensor<f64>> {
            Ok(sample.x.clone())
        }
    }

    fn prepared_fixture() -> (PreparedRecord, FacadeGraph) {
        let graph = FacadeGraph::build(&GraphConfig { rows: 3, cols: 2, sensors: Some(vec![0, 4]) }).unwrap();
        let n = 6;
        let t_full = 40;
        let mut values = rng_vals(42, n * t_full);
        for (i, v) in values.iter_mut().enumerate() {
            *v = *v * 2.0 + (i / t_full) as f64;
        }
        let rec = PressureRecord::new(5.0, 100.0, n, t_full, values).unwrap();
        (split_and_normalize(&rec, 0.8).unwrap(), graph)
    }

    #[test]
    fn identity_model_reproduces_observed_rows() {
        let (prep, graph) = prepared_fixture();
        let model = IdentityModel { t: 8 };
        let scenario = MaskScenario::default();
        // exact variant: uniform weights, eps 0, tiling hop
        let overlap = OverlapConfig { hop: 8, weights: WeightKind::Uniform, eps: 0.0 };
        let res = reconstruct_full(&prep, &model, &graph, &scenario, &overlap, None).unwrap();
        // observed sensor rows reproduce the raw record after de-normalization
        let raw_mean = |node: usize| prep.stats.mean[node];
        for &node in &graph.sensors {
            for t in 0..prep.t_full {
                let want = prep.normalized[node * prep.t_full + t] * prep.stats.std[node] + raw_mean(node);
                let got = res.physical[node * prep.t_full + t];
                assert!((got - want).abs() < 1e-12, "node {node} t {t}");
            }
        }
        // default plan: within the eps attenuation tolerance
        let overlap = OverlapConfig { hop: 4, weights: WeightKind::Hann, eps: 1e-8 };
        let res = reconstruct_full(&prep, &model, &graph, &scenario, &overlap, None).unwrap();
        for &node in &graph.sensors {
            for t in 0..prep.t_full {
                let want = prep.normalized[node * prep.t_full + t];
                let got = res.normalized[node * prep.t_full + t];
                assert!((got - want).abs() < 1e-6, "node {node} t {t}: {got} vs {want}");
            }
        }
        // deterministic
        let res2 = reconstruct_full(&prep, &model, &graph, &scenario, &overlap, None).unwrap();
        assert_eq!(res.physical, res2.physical);
    }

    #[test]
    fn subrange_reconstruction() {
        let (prep, graph) = prepared_fixture();
        let model = IdentityModel { t: 8 };
        let overlap = OverlapConfig { hop: 4, weights: WeightKind::Hann, eps: 1e-8 };
        let holdout = (prep.t_train, prep.t_holdout());
        let res =
            reconstruct_full(&prep, &model, &graph, &MaskScenario::default(), &overlap, Some(holdout)).unwrap();
        assert_eq!(res.range_start, 32);
        assert_eq!(res.t_len, 8);
    }

    #[test]
    fn baseline_uses_nearest_observed_sensors() {
        let (prep, graph) = prepared_fixture();
        // sensors at nodes 0 and 4; mask sensor 0 (node 0)
        let scenario = MaskScenario::new(vec![0]);
        let base = neighbor_average_baseline(&prep, &graph, &scenario, (0, prep.t_full)).unwrap();
        // every node's baseline equals node 4's series (single observed sensor)
        for node in 0..6 {
            for t in 0..prep.t_full {
                assert!((base[node * prep.t_full + t] - prep.normalized[4 * prep.t_full + t]).abs() < 1e-12);
            }
        }
    }
}
