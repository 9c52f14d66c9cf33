//! Evaluation metrics: RMSE / MAE / Pearson, Welch power spectral density,
//! bandpower relative error, and mean +- std aggregation across directions.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FacadeGraph;
use crate::infer::ReconstructionResult;
use crate::train::SubsetPartition;

/// Time-domain metrics of one series pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// None flags a zero-variance series (correlation undefined).
    pub pearson: Option<f64>,
}

pub fn metrics(pred: &[f64], reference: &[f64]) -> Result<SeriesMetrics> {
    if pred.len() != reference.len() || pred.len() < 2 {
        return Err(Error::shape("metrics", format!("{} vs {} samples (need >= 2)", pred.len(), reference.len())));
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (&p, &r) in pred.iter().zip(reference) {
        let e = p - r;
        se += e * e;
        ae += e.abs();
    }
    let rmse = (se / n).sqrt();
    let mae = ae / n;
    let mp: f64 = pred.iter().sum::<f64>() / n;
    let mr: f64 = reference.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vr = 0.0;
    for (&p, &r) in pred.iter().zip(reference) {
        cov += (p - mp) * (r - mr);
        vp += (p - mp) * (p - mp);
        vr += (r - mr) * (r - mr);
    }
    let pearson = if vp <= 0.0 || vr <= 0.0 { None } else { Some(cov / (vp.sqrt() * vr.sqrt())) };
    Ok(SeriesMetrics { rmse, mae, pearson })
}

/// Welch parameters (scipy-style defaults; Hann window, mean detrend per
/// segment, one-sided density scaling).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WelchConfig {
    #[serde(default = "default_nperseg")]
    pub nperseg: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

fn default_nperseg() -> usize {
    256
}
fn default_overlap() -> f64 {
    0.5
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig { nperseg: default_nperseg(), overlap: default_overlap() }
    }
}

/// Welch power spectral density. Returns (frequencies, one-sided density);
/// integrating the density over frequency approximates the series variance.
pub fn welch_psd(series: &[f64], fs: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let nper = cfg.nperseg;
    if series.len() < nper {
        return Err(Error::Data(format!(
            "series of {} samples shorter than nperseg {}; use a smaller segment length",
            series.len(),
            nper
        )));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::config("welch.overlap", "overlap fraction must be in [0, 1)"));
    }
    let noverlap = (cfg.overlap * nper as f64).round() as usize;
    let step = nper - noverlap;
    // periodic Hann window
    let window: Vec<f64> =
        (0..nper).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nper as f64).cos()).collect();
    let win_sq: f64 = window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (fs * win_sq);
    let bins = nper / 2 + 1;
    let mut psd = vec![0.0; bins];
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nper);
    let mut buf = vec![Complex::new(0.0, 0.0); nper];
    let mut count = 0usize;
    let mut start = 0usize;
    while start + nper <= series.len() {
        let seg = &series[start..start + nper];
        let mean: f64 = seg.iter().sum::<f64>() / nper as f64;
        for (b, (&v, &w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            let c = buf[k];
            *p += (c.re * c.re + c.im * c.im) * scale;
        }
        count += 1;
        start += step;
    }
    let inv = 1.0 / count as f64;
    for (k, p) in psd.iter_mut().enumerate() {
        *p *= inv;
        // one-sided doubling except DC and Nyquist
        if k != 0 && !(nper % 2 == 0 && k == bins - 1) {
            *p *= 2.0;
        }
    }
    let freqs = (0..bins).map(|k| k as f64 * fs / nper as f64).collect();
    Ok((freqs, psd))
}

/// Trapezoidal integral of a PSD over a frequency band.
pub fn bandpower(freqs: &[f64], psd: &[f64], band: (f64, f64)) -> f64 {
    let mut acc = 0.0;
    for i in 0..freqs.len().saturating_sub(1) {
        let (f0, f1) = (freqs[i], freqs[i + 1]);
        if f1 <= band.0 || f0 >= band.1 {
            continue;
        }
        // clip the trapezoid to the band
        let lo = f0.max(band.0);
        let hi = f1.min(band.1);
        let v0 = psd[i] + (psd[i + 1] - psd[i]) * ((lo - f0) / (f1 - f0));
        let v1 = psd[i] + (psd[i + 1] - psd[i]) * ((hi - f0) / (f1 - f0));
        acc += 0.5 * (v0 + v1) * (hi - lo);
    }
    acc
}

/// Relative bandpower error |P_pred - P_ref| / P_ref over a band
/// (default: the full band up to Nyquist).
pub fn bandpower_error(freqs: &[f64], psd_pred: &[f64], psd_ref: &[f64], band: Option<(f64, f64)>) -> Result<f64> {
    if freqs.len() != psd_pred.len() || freqs.len() != psd_ref.len() {
        return Err(Error::shape("bandpower_error", "frequency grids differ".to_string()));
    }
    let band = band.unwrap_or((0.0, *freqs.last().unwrap_or(&0.0)));
    let p_ref = bandpower(freqs, psd_ref, band);
    if p_ref <= 0.0 {
        return Err(Error::Data("zero reference bandpower".to_string()));
    }
    let p_pred = bandpower(freqs, psd_pred, band);
    Ok((p_pred - p_ref).abs() / p_ref)
}

/// Metrics of one node subset within one direction: per-node metrics
/// averaged over the subset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubsetMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub pearson: f64,
    pub psd_rel_err: f64,
    pub nodes: usize,
    /// Nodes excluded from pearson/psd means (zero variance or bandpower).
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DirectionReport {
    pub direction_deg: f64,
    pub masked: Option<SubsetMetrics>,
    pub observed: Option<SubsetMetrics>,
    pub unobserved: Option<SubsetMetrics>,
}

/// Evaluate one reconstruction against its record over an evaluation range
/// given in record coordinates (normally the holdout segment).
pub fn evaluate_direction(
    result: &ReconstructionResult,
    reference: &crate::data::PreparedRecord,
    graph: &FacadeGraph,
    parts: &SubsetPartition,
    eval_range: (usize, usize),
    welch: &WelchConfig,
    physical_units: bool,
) -> Result<DirectionReport> {
    let (eval_start, eval_len) = eval_range;
    if eval_start < result.range_start || eval_start + eval_len > result.range_start + result.t_len {
        return Err(Error::Data(format!(
            "evaluation range [{eval_start}, {}) outside reconstruction [{}, {})",
            eval_start + eval_len,
            result.range_start,
            result.range_start + result.t_len
        )));
    }
    let n = graph.n_nodes();
    let fs = reference.sample_rate_hz;
    let pred_all = if physical_units { &result.physical } else { &result.normalized };

    let subset_metrics = |nodes: &[usize]| -> Result<Option<SubsetMetrics>> {
        if nodes.is_empty() {
            return Ok(None);
        }
        let mut rmse = 0.0;
        let mut mae = 0.0;
        let mut pearson = 0.0;
        let mut pearson_n = 0usize;
        let mut psd_err = 0.0;
        let mut psd_n = 0usize;
        let mut excluded = 0usize;
        for &node in nodes {
            debug_assert!(node < n);
            let off = eval_start - result.range_start;
            let pred = &pred_all[node * result.t_len + off..node * result.t_len + off + eval_len];
            let refer: Vec<f64> = if physical_units {
                reference.node_series(node)[eval_start..eval_start + eval_len]
                    .iter()
                    .map(|z| z * reference.stats.std[node] + reference.stats.mean[node])
                    .collect()
            } else {
                reference.node_series(node)[eval_start..eval_start + eval_len].to_vec()
            };
            let m = metrics(pred, &refer)?;
            rmse += m.rmse;
            mae += m.mae;
            match m.pearson {
                Some(r) => {
                    pearson += r;
                    pearson_n += 1;
                }
                None => excluded += 1,
            }
            if eval_len >= welch.nperseg {
                let (freqs, psd_p) = welch_psd(pred, fs, welch)?;
                let (_, psd_r) = welch_psd(&refer, fs, welch)?;
                match bandpower_error(&freqs, &psd_p, &psd_r, None) {
                    Ok(e) => {
                        psd_err += e;
                        psd_n += 1;
                    }
                    Err(_) => excluded += 1,
                }
            }
        }
        let count = nodes.len() as f64;
        Ok(Some(SubsetMetrics {
            rmse: rmse / count,
            mae: mae / count,
            pearson: if pearson_n > 0 { pearson / pearson_n as f64 } else { f64::NAN },
            psd_rel_err: if psd_n > 0 { psd_err / psd_n as f64 } else { f64::NAN },
            nodes: nodes.len(),
            excluded,
        }))
    };

    Ok(DirectionReport {
        direction_deg: result.direction_deg,
        masked: subset_metrics(&parts.masked)?,
        observed: subset_metrics(&parts.observed)?,
        unobserved: subset_metrics(&parts.unobserved)?,
    })
}

/// mean +- sample std (n-1 denominator; n = 1 reports std 0, flagged).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub single_direction: bool,
}

pub fn aggregate_values(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Data("aggregate over zero directions".to_string()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate { mean, std, n, single_direction: n == 1 })
}

/// One row of the facade summary table: RMSE / MAE / Correlation / PSD (%)
/// as mean +- std across directions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryRow {
    pub rmse: Aggregate,
    pub mae: Aggregate,
    pub correlation: Aggregate,
    pub psd_rel_err: Aggregate,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FacadeSummary {
    pub facade: String,
    pub masked: Option<SummaryRow>,
    pub observed: Option<SummaryRow>,
    pub unobserved: Option<SummaryRow>,
}

fn collect_row(reports: &[DirectionReport], pick: impl Fn(&DirectionReport) -> &Option<SubsetMetrics>) -> Result<Option<SummaryRow>> {
    let vals: Vec<&SubsetMetrics> = reports.iter().filter_map(|r| pick(r).as_ref()).collect();
    if vals.is_empty() {
        return Ok(None);
    }
    let take = |f: fn(&SubsetMetrics) -> f64| -> Vec<f64> { vals.iter().map(|m| f(m)).filter(|v| v.is_finite()).collect() };
    let rmse = aggregate_values(&take(|m| m.rmse))?;
    let mae = aggregate_values(&take(|m| m.mae))?;
    let correlation = aggregate_values(&take(|m| m.pearson))?;
    let psd_vals = take(|m| m.psd_rel_err);
    let psd_rel_err = if psd_vals.is_empty() {
        Aggregate { mean: f64::NAN, std: 0.0, n: 0, single_direction: false }
    } else {
        aggregate_values(&psd_vals)?
    };
    Ok(Some(SummaryRow { rmse, mae, correlation, psd_rel_err }))
}

/// Aggregate per-direction reports into the facade summary.
pub fn aggregate(facade: &str, reports: &[DirectionReport]) -> Result<FacadeSummary> {
    if reports.is_empty() {
        return Err(Error::Data("no direction reports to aggregate".to_string()));
    }
    Ok(FacadeSummary {
        facade: facade.to_string(),
        masked: collect_row(reports, |r| &r.masked)?,
        observed: collect_row(reports, |r| &r.observed)?,
        unobserved: collect_row(reports, |r| &r.unobserved)?,
    })
}

impl FacadeSummary {
    /// Plain-text table in the reporting layout:
    /// facade | RMSE | MAE | Correlation | PSD (%).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:<12} {:>20} {:>20} {:>20} {:>12}\n", "Facade", "Subset", "RMSE", "MAE", "Correlation", "PSD (%)"));
        let mut row = |name: &str, r: &Option<SummaryRow>| {
            if let Some(r) = r {
                out.push_str(&format!(
                    "{:<14} {:<12} {:>20} {:>20} {:>20} {:>12}\n",
                    self.facade,
                    name,
                    format!("{:.4} (± {:.4})", r.rmse.mean, r.rmse.std),
                    format!("{:.4} (± {:.4})", r.mae.mean, r.mae.std),
                    format!("{:.4}", r.correlation.mean),
                    format!("{:.3}", r.psd_rel_err.mean),
                ));
            }
        };
        row("masked", &self.masked);
        row("unobserved", &self.unobserved);
        row("observed", &self.observed);
        out
    }
}
