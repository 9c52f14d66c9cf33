//! Building blocks of the reconstruction network. Layers own parameter ids
//! into the model's [`ParamSet`]; at forward time parameters are registered
//! as tape leaves and layers look their `Var`s up by id.

use rand::Rng;

use crate::error::Result;
use crate::num::optim::{ParamId, ParamSet};
use crate::num::scalar::Scalar;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;

/// Tape handles of all registered parameters, indexed by [`ParamId`].
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn register<S: Scalar>(params: &ParamSet<S>, tape: &mut Tape<S>) -> Self {
        ParamVars(params.iter().map(|p| tape.leaf(p.value.clone())).collect())
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

fn kaiming_uniform<S: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(shape, bound, rng)
}

fn xavier_uniform<S: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, bound, rng)
}

fn uniform<S: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform init shape")
}

#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamSet<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = ps.add(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in, k], c_in * k, rng))?;
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv1dLayer { w, b, stride, dilation, padding })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        tape.conv1d(x, pv.var(self.w), Some(pv.var(self.b)), self.stride, self.dilation, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct ConvT1dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvT1dLayer {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamSet<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = ps.add(format!("{name}.weight"), kaiming_uniform(&[c_in, c_out, k], c_in * k, rng))?;
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(ConvT1dLayer { w, b, stride, padding })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        tape.conv_transpose1d(x, pv.var(self.w), Some(pv.var(self.b)), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNormLayer {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, name: &str, channels: usize, groups: usize, eps: f64) -> Result<Self> {
        // fall back to one group when the preferred count does not divide
        let groups = if channels % groups == 0 { groups } else { 1 };
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[channels], S::ONE))?;
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        Ok(GroupNormLayer { gamma, beta, groups, eps })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        tape.group_norm(x, pv.var(self.gamma), pv.var(self.beta), self.groups, self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNormLayer {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, name: &str, d: usize, eps: f64) -> Result<Self> {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[d], S::ONE))?;
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(LayerNormLayer { gamma, beta, eps })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        tape.layer_norm(x, pv.var(self.gamma), pv.var(self.beta), self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearLayer {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        attention_scaled: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = if attention_scaled {
            ps.add(format!("{name}.weight"), xavier_uniform(&[d_in, d_out], d_in, d_out, rng))?
        } else {
            ps.add(format!("{name}.weight"), kaiming_uniform(&[d_in, d_out], d_in, rng))?
        };
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
        Ok(LinearLayer { w, b })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        let mm = tape.matmul(x, pv.var(self.w))?;
        tape.add_row_bias(mm, pv.var(self.b))
    }
}

/// conv -> GroupNorm -> GELU unit used by the strided encoder stages and the
/// decoder upsampling stages.
#[derive(Debug, Clone)]
pub enum ConvUnit {
    Down { conv: Conv1dLayer, norm: GroupNormLayer },
    Up { conv: ConvT1dLayer, norm: GroupNormLayer },
}

impl ConvUnit {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        let h = match self {
            ConvUnit::Down { conv, .. } => conv.apply(tape, pv, x)?,
            ConvUnit::Up { conv, .. } => conv.apply(tape, pv, x)?,
        };
        let norm = match self {
            ConvUnit::Down { norm, .. } | ConvUnit::Up { norm, .. } => norm,
        };
        let h = norm.apply(tape, pv, h)?;
        tape.gelu(h)
    }
}

/// Residual temporal block: conv -> GN -> GELU -> conv -> GN, skip-added,
/// GELU. Channel count is preserved.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv1dLayer,
    pub norm1: GroupNormLayer,
    pub conv2: Conv1dLayer,
    pub norm2: GroupNormLayer,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamSet<S>,
        name: &str,
        channels: usize,
        k: usize,
        dilation: usize,
        norm_groups: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let padding = dilation * (k - 1) / 2;
        Ok(ResBlock {
            conv1: Conv1dLayer::new(ps, &format!("{name}.conv1"), channels, channels, k, 1, dilation, padding, rng)?,
            norm1: GroupNormLayer::new(ps, &format!("{name}.norm1"), channels, norm_groups, eps)?,
            conv2: Conv1dLayer::new(ps, &format!("{name}.conv2"), channels, channels, k, 1, dilation, padding, rng)?,
            norm2: GroupNormLayer::new(ps, &format!("{name}.norm2"), channels, norm_groups, eps)?,
        })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        let h = self.conv1.apply(tape, pv, x)?;
        let h = self.norm1.apply(tape, pv, h)?;
        let h = tape.gelu(h)?;
        let h = self.conv2.apply(tape, pv, h)?;
        let h = self.norm2.apply(tape, pv, h)?;
        let h = tape.add(h, x)?;
        tape.gelu(h)
    }
}

/// One graph-attention layer: multi-head neighborhood attention with a
/// residual connection (projected on the first layer where widths differ),
/// layer normalization, and ELU.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub query: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
    pub out: LinearLayer,
    pub residual: Option<LinearLayer>,
    pub norm: LayerNormLayer,
    pub heads: usize,
}

impl GatLayer {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        hidden: usize,
        heads: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let residual = if d_in != hidden {
            Some(LinearLayer::new(ps, &format!("{name}.residual"), d_in, hidden, false, rng)?)
        } else {
            None
        };
        Ok(GatLayer {
            query: LinearLayer::new(ps, &format!("{name}.query"), d_in, hidden, true, rng)?,
            key: LinearLayer::new(ps, &format!("{name}.key"), d_in, hidden, true, rng)?,
            value: LinearLayer::new(ps, &format!("{name}.value"), d_in, hidden, true, rng)?,
            out: LinearLayer::new(ps, &format!("{name}.out"), hidden, hidden, true, rng)?,
            residual,
            norm: LayerNormLayer::new(ps, &format!("{name}.norm"), hidden, eps)?,
            heads,
        })
    }

    pub fn apply<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pv: &ParamVars,
        h: Var,
        nbrs: &std::sync::Arc<crate::num::kernels::Neighborhoods>,
        slices: usize,
    ) -> Result<Var> {
        let q = self.query.apply(tape, pv, h)?;
        let k = self.key.apply(tape, pv, h)?;
        let v = self.value.apply(tape, pv, h)?;
        let ctx = tape.attention(q, k, v, std::sync::Arc::clone(nbrs), slices, self.heads)?;
        let o = self.out.apply(tape, pv, ctx)?;
        let res = match &self.residual {
            Some(proj) => proj.apply(tape, pv, h)?,
            None => h,
        };
        let sum = tape.add(res, o)?;
        let normed = self.norm.apply(tape, pv, sum)?;
        tape.elu(normed)
    }
}
