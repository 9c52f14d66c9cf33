//! Parameter registry and AdamW with global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Ordered parameter registry; order is the creation order and defines the
/// iteration order of the optimizer and the checkpoint manifest.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<S: Scalar> {
    params: Vec<Parameter<S>>,
}

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Usage(format!("duplicate parameter identifier `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.params[id.0].value.shape() {
            return Err(Error::shape("param_set", format!("shape mismatch for `{}`", self.params[id.0].name)));
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = S::ZERO;
            }
        }
    }

    /// Accumulate a gradient contribution into a parameter (additive).
    pub fn accumulate_grad(&mut self, id: ParamId, contribution: &[S]) {
        let dst = self.params[id.0].grad.data_mut();
        debug_assert_eq!(dst.len(), contribution.len());
        for (d, s) in dst.iter_mut().zip(contribution) {
            *d += *s;
        }
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Optimizer hyperparameters; beta/eps defaults follow the standard AdamW
/// settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.0,
            clip_norm: 1.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// Per-parameter moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<S: Scalar> {
    cfg: AdamWConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<S>) -> Self {
        let m = params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect();
        let v = params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect();
        OptimizerState { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// One AdamW update: clip the global gradient norm, update moments with
    /// bias correction, apply decoupled weight decay.
    pub fn step(&mut self, params: &mut ParamSet<S>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Usage("optimizer state does not match parameter set".to_string()));
        }
        self.step += 1;
        clip_gradients(params, self.cfg.clip_norm);
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.cfg.beta2);
        let bc1 = S::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = S::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = S::from_f64(self.cfg.lr);
        let wd = S::from_f64(self.cfg.lr * self.cfg.weight_decay);
        let eps = S::from_f64(self.cfg.eps);
        for (pi, p) in params.params.iter_mut().enumerate() {
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            let value = p.value.data_mut();
            let grad = p.grad.data();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_m_b1 * g;
                v[j] = b2 * v[j] + one_m_b2 * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= lr * mhat / (vhat.sqrt() + eps) + wd * value[j];
            }
        }
        Ok(())
    }
}

/// Scale all gradients so the global L2 norm does not exceed `clip_norm`
/// (no-op when `clip_norm <= 0` or the norm is already within bounds).
/// Returns the pre-clip norm.
pub fn clip_gradients<S: Scalar>(params: &mut ParamSet<S>, clip_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        sq += p.grad.sq_norm();
    }
    let norm = sq.sqrt();
    if clip_norm > 0.0 && norm > clip_norm {
        let scale = S::from_f64(clip_norm / norm);
        for p in &mut params.params {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(g: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(1.0)).unwrap();
        ps.accumulate_grad(id, &[g]);
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = single_param(0.0);
        let mut opt = OptimizerState::new(AdamWConfig::default(), &ps);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.params[0].value.data()[0], 1.0);
    }

    #[test]
    fn first_step_magnitude() {
        // g = 1, lr = 1e-4, step 1: update ~ -1e-4 (bias-corrected)
        let mut ps = single_param(1.0);
        let mut opt = OptimizerState::new(AdamWConfig::default(), &ps);
        opt.step(&mut ps).unwrap();
        let w = ps.params[0].value.data()[0];
        let update = w - 1.0;
        assert!((update + 1e-4).abs() < 1e-8, "update = {update}");
    }

    #[test]
    fn global_norm_clipping_halves_gradients() {
        // two params with grads (1.2, 1.6): norm 2.0, clip 1.0 -> scale 0.5
        let mut ps = ParamSet::new();
        let a = ps.add("a", Tensor::scalar(0.0)).unwrap();
        let b = ps.add("b", Tensor::scalar(0.0)).unwrap();
        ps.accumulate_grad(a, &[1.2]);
        ps.accumulate_grad(b, &[1.6]);
        let norm = clip_gradients(&mut ps, 1.0);
        assert!((norm - 2.0).abs() < 1e-12);
        assert!((ps.params[0].grad.data()[0] - 0.6).abs() < 1e-12);
        assert!((ps.params[1].grad.data()[0] - 0.8).abs() < 1e-12);
        // below the threshold nothing changes
        let norm2 = clip_gradients(&mut ps, 1.0);
        assert!((norm2 - 1.0).abs() < 1e-12);
        assert!((ps.params[0].grad.data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn duplicate_identifiers_rejected() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Tensor::scalar(0.0)).unwrap();
        assert!(ps.add("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn decoupled_weight_decay_noop_at_zero() {
        let mut ps = single_param(0.5);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = OptimizerState::new(cfg, &ps);
        opt.step(&mut ps).unwrap();
        let w_no_decay = ps.params[0].value.data()[0];

        let mut ps2 = single_param(0.5);
        let cfg2 = AdamWConfig { weight_decay: 0.1, ..AdamWConfig::default() };
        let mut opt2 = OptimizerState::new(cfg2, &ps2);
        opt2.step(&mut ps2).unwrap();
        let w_decay = ps2.params[0].value.data()[0];
        assert!(w_decay < w_no_decay, "decay must shrink the weight");
    }
}
