//! Reverse-mode automatic differentiation tape.
//!
//! Ops append nodes that own their output tensor plus whatever small context
//! backward needs (normalization statistics, attention weights, precomputed
//! activation derivatives). `backward` walks the tape in reverse and returns
//! per-node gradients; the caller maps leaf gradients onto parameters.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::num::kernels::{self, ConvGeom, Neighborhoods};
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

/// Handle of a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Precomputed one-sided DFT tables for a window length, shared across loss
/// evaluations. `cos`/`sin` are stored [t, bins] row-major.
#[derive(Debug, Clone)]
pub struct DftTable<S: Scalar> {
    pub t: usize,
    pub bins: usize,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl<S: Scalar> DftTable<S> {
    pub fn new(t: usize) -> Self {
        let bins = t / 2 + 1;
        let mut cos = vec![S::ZERO; t * bins];
        let mut sin = vec![S::ZERO; t * bins];
        for ti in 0..t {
            for k in 0..bins {
                let ang = 2.0 * std::f64::consts::PI * (k * ti) as f64 / t as f64;
                cos[ti * bins + k] = S::from_f64(ang.cos());
                sin[ti * bins + k] = S::from_f64(ang.sin());
            }
        }
        DftTable { t, bins, cos, sin }
    }

    /// One-sided DFT magnitudes of each row of `x` [rows, t].
    pub fn magnitudes(&self, x: &[S], rows: usize) -> Vec<S> {
        let (re, im) = self.transform(x, rows);
        re.iter().zip(&im).map(|(&r, &i)| (r * r + i * i).sqrt()).collect()
    }

    fn transform(&self, x: &[S], rows: usize) -> (Vec<S>, Vec<S>) {
        let mut re = vec![S::ZERO; rows * self.bins];
        let mut im = vec![S::ZERO; rows * self.bins];
        kernels::gemm_nn(rows, self.t, self.bins, x, &self.cos, false, &mut re);
        kernels::gemm_nn(rows, self.t, self.bins, x, &self.sin, false, &mut im);
        for v in &mut im {
            *v = -*v;
        }
        (re, im)
    }
}

enum Op<S: Scalar> {
    Leaf,
    Reshape { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: S },
    Sum { a: usize },
    Mean { a: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddRowBias { a: usize, bias: usize, rows: usize, d: usize },
    Conv1d { x: usize, w: usize, bias: Option<usize>, batch: usize, t_in: usize, geom: ConvGeom },
    ConvT1d { x: usize, w: usize, bias: Option<usize>, batch: usize, l_in: usize, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize },
    GroupNorm { x: usize, gamma: usize, beta: usize, batch: usize, channels: usize, t: usize, groups: usize, mean: Vec<S>, rstd: Vec<S> },
    LayerNorm { x: usize, gamma: usize, beta: usize, rows: usize, d: usize, mean: Vec<S>, rstd: Vec<S> },
    Gelu { x: usize, grad: Vec<S> },
    Elu { x: usize },
    Attention { q: usize, k: usize, v: usize, nbrs: Arc<Neighborhoods>, slices: usize, heads: usize, dh: usize, alphas: Vec<S> },
    BuildTokens { z: usize, n: usize, d: usize, l: usize, aux_width: usize },
    Untokenize { h: usize, n: usize, d: usize, l: usize },
    GatherRows { x: usize, rows: Arc<Vec<usize>>, row_stride: usize, n_in: usize },
    TimeAt { x: usize, idx: usize, t: usize },
    HuberMean { pred: usize, target: Arc<Tensor<S>>, beta: S },
    DiffL1Mean { pred: usize, target: Arc<Tensor<S>>, rows: usize, t: usize },
    SpecL1Mean { pred: usize, table: Arc<DftTable<S>>, rows: usize, re: Vec<S>, im: Vec<S>, target_mag: Vec<S> },
    MseConst { x: usize, target: Arc<Tensor<S>> },
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Reshape { .. } => "reshape",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MatMul { .. } => "matmul",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvT1d { .. } => "conv_transpose1d",
            Op::GroupNorm { .. } => "group_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Elu { .. } => "elu",
            Op::Attention { .. } => "attention",
            Op::BuildTokens { .. } => "build_tokens",
            Op::Untokenize { .. } => "untokenize",
            Op::GatherRows { .. } => "gather_rows",
            Op::TimeAt { .. } => "time_at",
            Op::HuberMean { .. } => "huber_mean",
            Op::DiffL1Mean { .. } => "diff_l1_mean",
            Op::SpecL1Mean { .. } => "spec_l1_mean",
            Op::MseConst { .. } => "mse_const",
        }
    }
}

/// Recorded computation. Single-owner; forward with frozen parameters can run
/// on independent tapes concurrently.
pub struct Tape<S: Scalar> {
    values: Vec<Tensor<S>>,
    ops: Vec<Op<S>>,
    check_finite: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads[v.0].take()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), check_finite: true }
    }

    /// Disable per-op finiteness scans (hot training loops check the loss
    /// value instead).
    pub fn without_finite_checks() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), check_finite: false }
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.values.push(t);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Result<Var> {
        if self.check_finite && !value.is_all_finite() {
            return Err(Error::NonFinite { context: op.name().to_string() });
        }
        self.values.push(value);
        self.ops.push(op);
        Ok(Var(self.values.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.values[a.0].shape(), self.values[b.0].shape()),
            ));
        }
        Ok(())
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.values[a.0].clone().reshaped(shape)?;
        self.push(t, Op::Reshape { a: a.0 })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(t, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(t, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(t, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let t = self.values[a.0].map(|v| v * c);
        self.push(t, Op::Scale { a: a.0, c })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut s = S::ZERO;
        for v in self.values[a.0].data() {
            s += *v;
        }
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.values[a.0].numel();
        let mut s = S::ZERO;
        for v in self.values[a.0].data() {
            s += *v;
        }
        s = s / S::from_usize(n);
        self.push(Tensor::scalar(s), Op::Mean { a: a.0 })
    }

    /// Matrix product of [m,k] x [k,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::ZERO; m * n];
        kernels::gemm_nn(m, k, n, self.values[a.0].data(), self.values[b.0].data(), false, &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: a.0, b: b.0, m, k, n })
    }

    /// Broadcast a [d] bias over the rows of a [rows, d] matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.values[a.0].shape().to_vec();
        let sb = self.values[bias.0].shape();
        if sa.len() != 2 || sb != [sa[1]] {
            return Err(Error::shape("add_row_bias", format!("{sa:?} + {sb:?}")));
        }
        let (rows, d) = (sa[0], sa[1]);
        let bv = self.values[bias.0].data().to_vec();
        let mut out = self.values[a.0].data().to_vec();
        for r in 0..rows {
            for (o, &b) in out[r * d..(r + 1) * d].iter_mut().zip(&bv) {
                *o += b;
            }
        }
        self.push(Tensor::new(sa, out)?, Op::AddRowBias { a: a.0, bias: bias.0, rows, d })
    }

    /// 1-D convolution of x [B, Cin, T] (or [Cin, T]) with w [Cout, Cin, k].
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, dilation: usize, padding: usize) -> Result<Var> {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        if ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("weight must be [Cout,Cin,k], got {ws:?}")));
        }
        let (batch, c_in, t_in, batched) = match xs.len() {
            2 => (1, xs[0], xs[1], false),
            3 => (xs[0], xs[1], xs[2], true),
            _ => return Err(Error::shape("conv1d", format!("input must be [Cin,T] or [B,Cin,T], got {xs:?}"))),
        };
        if ws[1] != c_in {
            return Err(Error::shape("conv1d", format!("input channels {c_in} vs weight {:?}", ws)));
        }
        let geom = ConvGeom { c_in, c_out: ws[0], k: ws[2], stride, dilation, padding };
        let t_out = geom.out_len(t_in)?;
        let bdata = bias.map(|b| self.values[b.0].data().to_vec());
        let out = kernels::conv_fwd(self.values[x.0].data(), self.values[w.0].data(), bdata.as_deref(), batch, t_in, &geom)?;
        let shape = if batched { vec![batch, geom.c_out, t_out] } else { vec![geom.c_out, t_out] };
        self.push(Tensor::new(shape, out)?, Op::Conv1d { x: x.0, w: w.0, bias: bias.map(|b| b.0), batch, t_in, geom })
    }

    /// Transposed 1-D convolution of x [B, Cin, L] (or [Cin, L]) with
    /// w [Cin, Cout, k]; the adjoint of `conv1d` with the same geometry.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        if ws.len() != 3 {
            return Err(Error::shape("conv_transpose1d", format!("weight must be [Cin,Cout,k], got {ws:?}")));
        }
        let (batch, c_in, l_in, batched) = match xs.len() {
            2 => (1, xs[0], xs[1], false),
            3 => (xs[0], xs[1], xs[2], true),
            _ => return Err(Error::shape("conv_transpose1d", format!("input must be [Cin,L] or [B,Cin,L], got {xs:?}"))),
        };
        if ws[0] != c_in {
            return Err(Error::shape("conv_transpose1d", format!("input channels {c_in} vs weight {ws:?}")));
        }
        let (c_out, k) = (ws[1], ws[2]);
        let bdata = bias.map(|b| self.values[b.0].data().to_vec());
        let out = kernels::convt_fwd(self.values[x.0].data(), self.values[w.0].data(), bdata.as_deref(), batch, l_in, c_in, c_out, k, stride, padding)?;
        let t_out = (l_in - 1) * stride + k - 2 * padding;
        let shape = if batched { vec![batch, c_out, t_out] } else { vec![c_out, t_out] };
        self.push(Tensor::new(shape, out)?, Op::ConvT1d { x: x.0, w: w.0, bias: bias.map(|b| b.0), batch, l_in, c_in, c_out, k, stride, padding })
    }

    /// Group normalization over [B, C, T] or [C, T] with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let xs = self.values[x.0].shape().to_vec();
        let (batch, channels, t) = match xs.len() {
            2 => (1, xs[0], xs[1]),
            3 => (xs[0], xs[1], xs[2]),
            _ => return Err(Error::shape("group_norm", format!("expected [C,T] or [B,C,T], got {xs:?}"))),
        };
        if self.values[gamma.0].numel() != channels || self.values[beta.0].numel() != channels {
            return Err(Error::shape("group_norm", "affine parameters must be per-channel".to_string()));
        }
        let (y, mean, rstd) = kernels::group_norm_fwd(
            self.values[x.0].data(),
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            batch,
            channels,
            t,
            groups,
            eps,
        )?;
        self.push(
            Tensor::new(xs, y)?,
            Op::GroupNorm { x: x.0, gamma: gamma.0, beta: beta.0, batch, channels, t, groups, mean, rstd },
        )
    }

    /// Per-row layer normalization over [rows, d].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("layer_norm", format!("expected [rows,d], got {xs:?}")));
        }
        let (rows, d) = (xs[0], xs[1]);
        if self.values[gamma.0].numel() != d || self.values[beta.0].numel() != d {
            return Err(Error::shape("layer_norm", "affine parameters must be length d".to_string()));
        }
        let (y, mean, rstd) = kernels::layer_norm_fwd(
            self.values[x.0].data(),
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            rows,
            d,
            eps,
        );
        self.push(Tensor::new(xs, y)?, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, rows, d, mean, rstd })
    }

    /// Exact Gaussian-CDF GELU, elementwise.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let src = self.values[x.0].data();
        let mut y = vec![S::ZERO; src.len()];
        let mut grad = vec![S::ZERO; src.len()];
        for ((yi, gi), &v) in y.iter_mut().zip(grad.iter_mut()).zip(src) {
            let (val, g) = v.gelu_with_grad();
            *yi = val;
            *gi = g;
        }
        let t = Tensor::new(self.values[x.0].shape().to_vec(), y)?;
        self.push(t, Op::Gelu { x: x.0, grad })
    }

    /// ELU with alpha = 1, elementwise.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let t = self.values[x.0].map(|v| if v > S::ZERO { v } else { v.exp() - S::ONE });
        self.push(t, Op::Elu { x: x.0 })
    }

    /// Multi-head attention over graph neighborhoods; q/k/v are [S*N, heads*dh].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, nbrs: Arc<Neighborhoods>, slices: usize, heads: usize) -> Result<Var> {
        let qs = self.values[q.0].shape().to_vec();
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        if qs.len() != 2 || qs[0] != slices * nbrs.n_nodes() || qs[1] % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("tokens {qs:?} vs {} slices x {} nodes, {} heads", slices, nbrs.n_nodes(), heads),
            ));
        }
        let dh = qs[1] / heads;
        let (out, alphas) = kernels::attention_fwd(
            self.values[q.0].data(),
            self.values[k.0].data(),
            self.values[v.0].data(),
            &nbrs,
            slices,
            heads,
            dh,
        );
        self.push(
            Tensor::new(qs, out)?,
            Op::Attention { q: q.0, k: k.0, v: v.0, nbrs, slices, heads, dh, alphas },
        )
    }

    /// Concatenate per-node auxiliary features onto every latent time slice:
    /// z [N, d, L] + aux [N, w] -> tokens [L*N, d+w].
    pub fn build_tokens(&mut self, z: Var, aux: &Tensor<S>) -> Result<Var> {
        let zs = self.values[z.0].shape().to_vec();
        if zs.len() != 3 {
            return Err(Error::shape("build_tokens", format!("latent must be [N,d,L], got {zs:?}")));
        }
        let (n, d, l) = (zs[0], zs[1], zs[2]);
        let aw = aux.shape();
        if aw.len() != 2 || aw[0] != n {
            return Err(Error::shape("build_tokens", format!("aux features {aw:?} vs {n} nodes")));
        }
        let w = aw[1];
        let zd = self.values[z.0].data();
        let ad = aux.data();
        let width = d + w;
        let mut out = vec![S::ZERO; l * n * width];
        for s in 0..l {
            for i in 0..n {
                let dst0 = (s * n + i) * width;
                for c in 0..d {
                    out[dst0 + c] = zd[(i * d + c) * l + s];
                }
                out[dst0 + d..dst0 + width].copy_from_slice(&ad[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![l * n, width], out)?, Op::BuildTokens { z: z.0, n, d, l, aux_width: w })
    }

    /// Inverse of the token layout: h [L*N, d] -> z [N, d, L].
    pub fn untokenize(&mut self, h: Var, n: usize, l: usize) -> Result<Var> {
        let hs = self.values[h.0].shape().to_vec();
        if hs.len() != 2 || hs[0] != l * n {
            return Err(Error::shape("untokenize", format!("{hs:?} vs {l} slices x {n} nodes")));
        }
        let d = hs[1];
        let hd = self.values[h.0].data();
        let mut out = vec![S::ZERO; n * d * l];
        for s in 0..l {
            for i in 0..n {
                let src0 = (s * n + i) * d;
                for c in 0..d {
                    out[(i * d + c) * l + s] = hd[src0 + c];
                }
            }
        }
        self.push(Tensor::new(vec![n, d, l], out)?, Op::Untokenize { h: h.0, n, d, l })
    }

    /// Select rows along the first axis.
    pub fn gather_rows(&mut self, x: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.values[x.0].gather_rows(&rows)?;
        let n_in = self.values[x.0].shape()[0];
        let row_stride = self.values[x.0].numel() / n_in;
        self.push(t, Op::GatherRows { x: x.0, rows, row_stride, n_in })
    }

    /// Extract one time column of a [B, C, T] tensor: result [B, C].
    pub fn time_at(&mut self, x: Var, idx: usize) -> Result<Var> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 3 || idx >= xs[2] {
            return Err(Error::shape("time_at", format!("index {idx} into {xs:?}")));
        }
        let (b, c, t) = (xs[0], xs[1], xs[2]);
        let src = self.values[x.0].data();
        let mut out = vec![S::ZERO; b * c];
        for bi in 0..b {
            for ci in 0..c {
                out[bi * c + ci] = src[(bi * c + ci) * t + idx];
            }
        }
        self.push(Tensor::new(vec![b, c], out)?, Op::TimeAt { x: x.0, idx, t })
    }

    /// Mean Huber loss against a constant target.
    pub fn huber_mean(&mut self, pred: Var, target: Arc<Tensor<S>>, beta: f64) -> Result<Var> {
        if self.values[pred.0].shape() != target.shape() {
            return Err(Error::shape(
                "huber_mean",
                format!("{:?} vs {:?}", self.values[pred.0].shape(), target.shape()),
            ));
        }
        let b = S::from_f64(beta);
        let half = S::from_f64(0.5);
        let mut acc = S::ZERO;
        for (&p, &t) in self.values[pred.0].data().iter().zip(target.data()) {
            let e = p - t;
            let ae = e.abs();
            acc += if ae <= b { half * e * e } else { b * (ae - half * b) };
        }
        let n = S::from_usize(target.numel());
        self.push(Tensor::scalar(acc / n), Op::HuberMean { pred: pred.0, target, beta: b })
    }

    /// Mean absolute error of first differences against a constant target;
    /// rows are treated as independent series.
    pub fn diff_l1_mean(&mut self, pred: Var, target: Arc<Tensor<S>>) -> Result<Var> {
        let ps = self.values[pred.0].shape().to_vec();
        if ps != target.shape() || ps.len() != 2 || ps[1] < 2 {
            return Err(Error::shape(
                "diff_l1_mean",
                format!("{:?} vs {:?} (need [rows, t>=2])", ps, target.shape()),
            ));
        }
        let (rows, t) = (ps[0], ps[1]);
        let pd = self.values[pred.0].data();
        let td = target.data();
        let mut acc = S::ZERO;
        for r in 0..rows {
            let p = &pd[r * t..(r + 1) * t];
            let tt = &td[r * t..(r + 1) * t];
            for i in 0..t - 1 {
                acc += ((p[i + 1] - p[i]) - (tt[i + 1] - tt[i])).abs();
            }
        }
        let n = S::from_usize(rows * (t - 1));
        self.push(Tensor::scalar(acc / n), Op::DiffL1Mean { pred: pred.0, target, rows, t })
    }

    /// Mean L1 distance between one-sided DFT magnitude spectra of pred rows
    /// and a constant target (precomputed via the same table).
    pub fn spec_l1_mean(&mut self, pred: Var, table: Arc<DftTable<S>>, target_mag: Vec<S>) -> Result<Var> {
        let ps = self.values[pred.0].shape().to_vec();
        if ps.len() != 2 || ps[1] != table.t {
            return Err(Error::shape("spec_l1_mean", format!("{ps:?} vs table t={}", table.t)));
        }
        let rows = ps[0];
        if target_mag.len() != rows * table.bins {
            return Err(Error::shape("spec_l1_mean", "target magnitude size mismatch".to_string()));
        }
        let (re, im) = table.transform(self.values[pred.0].data(), rows);
        let mut acc = S::ZERO;
        for i in 0..re.len() {
            let mag = (re[i] * re[i] + im[i] * im[i]).sqrt();
            acc += (mag - target_mag[i]).abs();
        }
        let n = S::from_usize(rows * table.bins);
        self.push(Tensor::scalar(acc / n), Op::SpecL1Mean { pred: pred.0, table, rows, re, im, target_mag })
    }

    /// Mean squared difference against a constant target.
    pub fn mse_const(&mut self, x: Var, target: Arc<Tensor<S>>) -> Result<Var> {
        if self.values[x.0].shape() != target.shape() {
            return Err(Error::shape(
                "mse_const",
                format!("{:?} vs {:?}", self.values[x.0].shape(), target.shape()),
            ));
        }
        let mut acc = S::ZERO;
        for (&a, &b) in self.values[x.0].data().iter().zip(target.data()) {
            let d = a - b;
            acc += d * d;
        }
        let n = S::from_usize(target.numel());
        self.push(Tensor::scalar(acc / n), Op::MseConst { x: x.0, target })
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node on
    /// a path from a leaf to the loss; repeated calls on the same tape
    /// produce independent gradient sets (callers accumulate into parameter
    /// buffers, so successive backward calls add up).
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![S::ONE]);
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<S>>], idx: usize, len: usize, f: impl FnOnce(&mut [S])) {
        let slot = grads[idx].get_or_insert_with(|| vec![S::ZERO; len]);
        f(slot);
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, g: &[S], grads: &mut Vec<Option<Vec<S>>>) -> Result<()> {
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Reshape { a } => {
                Self::accumulate(grads, *a, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += *gi;
                    }
                });
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += *gi;
                    }
                });
                Self::accumulate(grads, *b, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += *gi;
                    }
                });
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += *gi;
                    }
                });
                Self::accumulate(grads, *b, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di -= *gi;
                    }
                });
            }
            Op::Mul { a, b } => {
                let av = self.values[*a].data();
                let bv = self.values[*b].data();
                Self::accumulate(grads, *a, g.len(), |d| {
                    for ((di, gi), bi) in d.iter_mut().zip(g).zip(bv) {
                        *di += *gi * *bi;
                    }
                });
                Self::accumulate(grads, *b, g.len(), |d| {
                    for ((di, gi), ai) in d.iter_mut().zip(g).zip(av) {
                        *di += *gi * *ai;
                    }
                });
            }
            Op::Scale { a, c } => {
                let c = *c;
                Self::accumulate(grads, *a, g.len(), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += *gi * c;
                    }
                });
            }
            Op::Sum { a } => {
                let n = self.values[*a].numel();
                let gv = g[0];
                Self::accumulate(grads, *a, n, |d| {
                    for di in d.iter_mut() {
                        *di += gv;
                    }
                });
            }
            Op::Mean { a } => {
                let n = self.values[*a].numel();
                let gv = g[0] / S::from_usize(n);
                Self::accumulate(grads, *a, n, |d| {
                    for di in d.iter_mut() {
                        *di += gv;
                    }
                });
            }
            Op::MatMul { a, b, m, k, n } => {
                let av = self.values[*a].data();
                let bv = self.values[*b].data();
                Self::accumulate(grads, *a, m * k, |d| {
                    kernels::gemm_nt(*m, *n, *k, g, bv, true, d);
                });
                Self::accumulate(grads, *b, k * n, |d| {
                    kernels::gemm_tn(*k, *m, *n, av, g, true, d);
                });
            }
            Op::AddRowBias { a, bias, rows, d } => {
                Self::accumulate(grads, *a, rows * d, |dst| {
                    for (di, gi) in dst.iter_mut().zip(g) {
                        *di += *gi;
                    }
                });
                Self::accumulate(grads, *bias, *d, |dst| {
                    for r in 0..*rows {
                        for (di, gi) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *di += *gi;
                        }
                    }
                });
            }
            Op::Conv1d { x, w, bias, batch, t_in, geom } => {
                let xv = self.values[*x].data();
                let wv = self.values[*w].data();
                let dx = kernels::conv_bwd_input(g, wv, *batch, *t_in, geom)?;
                Self::accumulate(grads, *x, dx.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dx) {
                        *di += *s;
                    }
                });
                let (dw, db) = kernels::conv_bwd_weight(g, xv, *batch, *t_in, geom)?;
                Self::accumulate(grads, *w, dw.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dw) {
                        *di += *s;
                    }
                });
                if let Some(bi) = bias {
                    Self::accumulate(grads, *bi, db.len(), |d| {
                        for (di, s) in d.iter_mut().zip(&db) {
                            *di += *s;
                        }
                    });
                }
            }
            Op::ConvT1d { x, w, bias, batch, l_in, c_in, c_out, k, stride, padding } => {
                let xv = self.values[*x].data();
                let wv = self.values[*w].data();
                let dx = kernels::convt_bwd_input(g, wv, *batch, *l_in, *c_in, *c_out, *k, *stride, *padding)?;
                Self::accumulate(grads, *x, dx.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dx) {
                        *di += *s;
                    }
                });
                let (dw, db) = kernels::convt_bwd_weight(g, xv, *batch, *l_in, *c_in, *c_out, *k, *stride, *padding)?;
                Self::accumulate(grads, *w, dw.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dw) {
                        *di += *s;
                    }
                });
                if let Some(bi) = bias {
                    Self::accumulate(grads, *bi, db.len(), |d| {
                        for (di, s) in d.iter_mut().zip(&db) {
                            *di += *s;
                        }
                    });
                }
            }
            Op::GroupNorm { x, gamma, beta, batch, channels, t, groups, mean, rstd } => {
                let (dx, dgamma, dbeta) = kernels::group_norm_bwd(
                    g,
                    self.values[*x].data(),
                    self.values[*gamma].data(),
                    mean,
                    rstd,
                    *batch,
                    *channels,
                    *t,
                    *groups,
                );
                Self::accumulate(grads, *x, dx.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dx) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *gamma, dgamma.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dgamma) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *beta, dbeta.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dbeta) {
                        *di += *s;
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, rows, d, mean, rstd } => {
                let (dx, dgamma, dbeta) = kernels::layer_norm_bwd(
                    g,
                    self.values[*x].data(),
                    self.values[*gamma].data(),
                    mean,
                    rstd,
                    *rows,
                    *d,
                );
                Self::accumulate(grads, *x, dx.len(), |dst| {
                    for (di, s) in dst.iter_mut().zip(&dx) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *gamma, dgamma.len(), |dst| {
                    for (di, s) in dst.iter_mut().zip(&dgamma) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *beta, dbeta.len(), |dst| {
                    for (di, s) in dst.iter_mut().zip(&dbeta) {
                        *di += *s;
                    }
                });
            }
            Op::Gelu { x, grad } => {
                Self::accumulate(grads, *x, grad.len(), |d| {
                    for ((di, gi), gg) in d.iter_mut().zip(g).zip(grad) {
                        *di += *gi * *gg;
                    }
                });
            }
            Op::Elu { x } => {
                let yv = self.values[i].data();
                Self::accumulate(grads, *x, yv.len(), |d| {
                    for ((di, gi), &y) in d.iter_mut().zip(g).zip(yv) {
                        let slope = if y > S::ZERO { S::ONE } else { y + S::ONE };
                        *di += *gi * slope;
                    }
                });
            }
            Op::Attention { q, k, v, nbrs, slices, heads, dh, alphas } => {
                let (dq, dk, dv) = kernels::attention_bwd(
                    g,
                    self.values[*q].data(),
                    self.values[*k].data(),
                    self.values[*v].data(),
                    alphas,
                    nbrs,
                    *slices,
                    *heads,
                    *dh,
                );
                Self::accumulate(grads, *q, dq.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dq) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *k, dk.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dk) {
                        *di += *s;
                    }
                });
                Self::accumulate(grads, *v, dv.len(), |d| {
                    for (di, s) in d.iter_mut().zip(&dv) {
                        *di += *s;
                    }
                });
            }
            Op::BuildTokens { z, n, d, l, aux_width } => {
                let width = d + aux_width;
                Self::accumulate(grads, *z, n * d * l, |dst| {
                    for s in 0..*l {
                        for node in 0..*n {
                            let src0 = (s * n + node) * width;
                            for c in 0..*d {
                                dst[(node * d + c) * l + s] += g[src0 + c];
                            }
                        }
                    }
                });
            }
            Op::Untokenize { h, n, d, l } => {
                Self::accumulate(grads, *h, l * n * d, |dst| {
                    for s in 0..*l {
                        for node in 0..*n {
                            let dst0 = (s * n + node) * d;
                            for c in 0..*d {
                                dst[dst0 + c] += g[(node * d + c) * l + s];
                            }
                        }
                    }
                });
            }
            Op::GatherRows { x, rows, row_stride, n_in } => {
                Self::accumulate(grads, *x, n_in * row_stride, |dst| {
                    for (out_r, &in_r) in rows.iter().enumerate() {
                        let src = &g[out_r * row_stride..(out_r + 1) * row_stride];
                        let d = &mut dst[in_r * row_stride..(in_r + 1) * row_stride];
                        for (di, si) in d.iter_mut().zip(src) {
                            *di += *si;
                        }
                    }
                });
            }
            Op::TimeAt { x, idx, t } => {
                let n = self.values[*x].numel();
                Self::accumulate(grads, *x, n, |d| {
                    for (row, gi) in g.iter().enumerate() {
                        d[row * t + idx] += *gi;
                    }
                });
            }
            Op::HuberMean { pred, target, beta } => {
                let pv = self.values[*pred].data();
                let tv = target.data();
                let gv = g[0] / S::from_usize(tv.len());
                let b = *beta;
                Self::accumulate(grads, *pred, pv.len(), |d| {
                    for ((di, &p), &t) in d.iter_mut().zip(pv).zip(tv) {
                        let e = p - t;
                        *di += gv * e.max_s(-b).min_s(b);
                    }
                });
            }
            Op::DiffL1Mean { pred, target, rows, t } => {
                let pv = self.values[*pred].data();
                let tv = target.data();
                let gv = g[0] / S::from_usize(rows * (t - 1));
                Self::accumulate(grads, *pred, pv.len(), |d| {
                    for r in 0..*rows {
                        let p = &pv[r * t..(r + 1) * t];
                        let tt = &tv[r * t..(r + 1) * t];
                        let dr = &mut d[r * t..(r + 1) * t];
                        for idx in 0..t - 1 {
                            let diff = (p[idx + 1] - p[idx]) - (tt[idx + 1] - tt[idx]);
                            let s = if diff > S::ZERO {
                                S::ONE
                            } else if diff < S::ZERO {
                                -S::ONE
                            } else {
                                S::ZERO
                            };
                            dr[idx + 1] += gv * s;
                            dr[idx] -= gv * s;
                        }
                    }
                });
            }
            Op::SpecL1Mean { pred, table, rows, re, im, target_mag } => {
                let bins = table.bins;
                let gv = g[0] / S::from_usize(rows * bins);
                // u = s * Re/|F|, w = s * Im/|F| per bin, then back through the DFT
                let mut u = vec![S::ZERO; re.len()];
                let mut wv = vec![S::ZERO; im.len()];
                for idx in 0..re.len() {
                    let mag = (re[idx] * re[idx] + im[idx] * im[idx]).sqrt();
                    if mag > S::ZERO {
                        let diff = mag - target_mag[idx];
                        let s = if diff > S::ZERO {
                            gv
                        } else if diff < S::ZERO {
                            -gv
                        } else {
                            S::ZERO
                        };
                        u[idx] = s * re[idx] / mag;
                        wv[idx] = s * im[idx] / mag;
                    }
                }
                let t = table.t;
                Self::accumulate(grads, *pred, rows * t, |d| {
                    // d += u @ cos^T - w @ sin^T  (tables stored [t, bins])
                    kernels::gemm_nt(*rows, bins, t, &u, &table.cos, true, d);
                    for x in wv.iter_mut() {
                        *x = -*x;
                    }
                    kernels::gemm_nt(*rows, bins, t, &wv, &table.sin, true, d);
                });
            }
            Op::MseConst { x, target } => {
                let xv = self.values[*x].data();
                let tv = target.data();
                let gv = g[0] * S::from_f64(2.0) / S::from_usize(tv.len());
                Self::accumulate(grads, *x, xv.len(), |d| {
                    for ((di, &a), &b) in d.iter_mut().zip(xv).zip(tv) {
                        *di += gv * (a - b);
                    }
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::gradcheck::max_rel_error;

    fn pseudo(seed: u64, n: usize) -> Vec<f64> {
        let mut st = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        (0..n)
            .map(|_| {
                st ^= st << 13;
                st ^= st >> 7;
                st ^= st << 17;
                (st >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    fn t64(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), pseudo(seed, shape.iter().product())).unwrap()
    }

    /// Run `build` on a fresh tape over the inputs, backward from its scalar
    /// result, and compare every input gradient against finite differences.
    fn check<F>(inputs: &[Tensor<f64>], tol: f64, build: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let eval = |ts: &[Tensor<f64>]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).item().unwrap()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| grads.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
            .collect();
        let err = max_rel_error(inputs, &analytic, eval);
        assert!(err < tol, "finite-difference mismatch: rel err {err:.3e} >= {tol:.0e}");
    }

    #[test]
    fn grad_of_weighted_sum_is_the_other_factor() {
        let w = t64(&[2, 3], 1);
        let x = t64(&[2, 3], 2);
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let xv = tape.leaf(x.clone());
        let prod = tape.mul(wv, xv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(wv).unwrap(), x.data());
        assert_eq!(grads.get(xv).unwrap(), w.data());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let v = tape.leaf(t64(&[2, 2], 3));
        assert!(matches!(tape.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn two_backwards_accumulate_at_parameters() {
        use crate::num::optim::ParamSet;
        let mut ps = ParamSet::new();
        let id = ps.add("w", t64(&[4], 4)).unwrap();
        let mut tape = Tape::new();
        let w = tape.leaf(ps.value(id).clone());
        let loss = tape.sum(w).unwrap();
        let g1 = tape.backward(loss).unwrap();
        ps.accumulate_grad(id, g1.get(w).unwrap());
        let g2 = tape.backward(loss).unwrap();
        ps.accumulate_grad(id, g2.get(w).unwrap());
        assert!(ps.get(id).grad.data().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn grad_elementwise_and_reductions() {
        check(&[t64(&[3, 4], 5), t64(&[3, 4], 6)], 1e-6, |tape, v| {
            let s = tape.sub(v[0], v[1]).unwrap();
            let m = tape.mul(s, v[0]).unwrap();
            let sc = tape.scale(m, 0.7).unwrap();
            let a = tape.add(sc, v[1]).unwrap();
            tape.mean(a).unwrap()
        });
    }

    #[test]
    fn grad_matmul_bias() {
        check(&[t64(&[3, 4], 7), t64(&[4, 2], 8), t64(&[2], 9)], 1e-6, |tape, v| {
            let mm = tape.matmul(v[0], v[1]).unwrap();
            let b = tape.add_row_bias(mm, v[2]).unwrap();
            let g = tape.gelu(b).unwrap();
            tape.sum(g).unwrap()
        });
    }

    #[test]
    fn grad_conv1d_strided_dilated() {
        // x [2,3,10], w [4,3,3], bias [4]; stride 2, dilation 2, padding 2
        check(&[t64(&[2, 3, 10], 10), t64(&[4, 3, 3], 11), t64(&[4], 12)], 1e-6, |tape, v| {
            let y = tape.conv1d(v[0], v[1], Some(v[2]), 2, 2, 2).unwrap();
            let e = tape.elu(y).unwrap();
            tape.sum(e).unwrap()
        });
    }

    #[test]
    fn grad_conv_transpose1d() {
        // x [2,3,5], w [3,2,4]; stride 2, padding 1 -> t_out 10
        check(&[t64(&[2, 3, 5], 13), t64(&[3, 2, 4], 14), t64(&[2], 15)], 1e-6, |tape, v| {
            let y = tape.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
            let g = tape.gelu(y).unwrap();
            tape.sum(g).unwrap()
        });
    }

    #[test]
    fn grad_group_norm() {
        check(&[t64(&[2, 4, 6], 16), t64(&[4], 17), t64(&[4], 18)], 1e-5, |tape, v| {
            let y = tape.group_norm(v[0], v[1], v[2], 2, 1e-5).unwrap();
            let g = tape.gelu(y).unwrap();
            tape.sum(g).unwrap()
        });
    }

    #[test]
    fn grad_layer_norm() {
        check(&[t64(&[5, 7], 19), t64(&[7], 20), t64(&[7], 21)], 1e-5, |tape, v| {
            let y = tape.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            let e = tape.elu(y).unwrap();
            tape.sum(e).unwrap()
        });
    }

    #[test]
    fn grad_attention() {
        // 4-node graph, 2 slices, 2 heads, dh 3
        let nbrs = Arc::new(
            Neighborhoods::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], true).unwrap(),
        );
        let shape = [8, 6]; // 2 slices x 4 nodes, 2 heads x dh 3
        check(&[t64(&shape, 22), t64(&shape, 23), t64(&shape, 24)], 1e-5, |tape, v| {
            let ctx = tape.attention(v[0], v[1], v[2], Arc::clone(&nbrs), 2, 2).unwrap();
            let g = tape.gelu(ctx).unwrap();
            tape.sum(g).unwrap()
        });
    }

    #[test]
    fn grad_token_roundtrip_and_gather() {
        let aux = t64(&[3, 5], 25);
        let rows = Arc::new(vec![2usize, 0]);
        check(&[t64(&[3, 4, 2], 26)], 1e-6, move |tape, v| {
            let tok = tape.build_tokens(v[0], &aux).unwrap();
            let g = tape.gelu(tok).unwrap();
            let z = tape.untokenize(g, 3, 2).unwrap();
            let sel = tape.gather_rows(z, Arc::clone(&rows)).unwrap();
            tape.sum(sel).unwrap()
        });
    }

    #[test]
    fn grad_huber_conv_composite() {
        // loss = huber(conv1d(x,w), y) on small tensors, vs finite differences
        let target = Arc::new(t64(&[2, 2], 27));
        check(&[t64(&[1, 3], 28), t64(&[2, 1, 2], 29)], 1e-6, move |tape, v| {
            let y = tape.conv1d(v[0], v[1], None, 1, 1, 0).unwrap();
            tape.huber_mean(y, Arc::clone(&target), 0.4).unwrap()
        });
    }

    #[test]
    fn grad_diff_and_spec_losses() {
        let target = Arc::new(t64(&[3, 8], 30));
        let table = Arc::new(DftTable::<f64>::new(8));
        let tmag = table.magnitudes(target.data(), 3);
        check(&[t64(&[3, 8], 31)], 1e-5, move |tape, v| {
            let d = tape.diff_l1_mean(v[0], Arc::clone(&target)).unwrap();
            let s = tape.spec_l1_mean(v[0], Arc::clone(&table), tmag.clone()).unwrap();
            let ds = tape.scale(d, 0.3).unwrap();
            let ss = tape.scale(s, 0.05).unwrap();
            let t = tape.add(ds, ss).unwrap();
            // keep the huber term in the mix as well
            let h = tape.huber_mean(v[0], Arc::clone(&target), 1.0).unwrap();
            tape.add(t, h).unwrap()
        });
    }

    #[test]
    fn grad_time_at() {
        check(&[t64(&[2, 3, 5], 40)], 1e-6, |tape, v| {
            let col = tape.time_at(v[0], 4).unwrap();
            let g = tape.gelu(col).unwrap();
            tape.sum(g).unwrap()
        });
    }

    #[test]
    fn grad_mse_const() {
        let target = Arc::new(t64(&[2, 3, 4], 32));
        check(&[t64(&[2, 3, 4], 33)], 1e-6, move |tape, v| {
            tape.mse_const(v[0], Arc::clone(&target)).unwrap()
        });
    }

    #[test]
    fn dft_magnitude_matches_naive() {
        let t = 16;
        let x = pseudo(34, t);
        let table = DftTable::<f64>::new(t);
        let mags = table.magnitudes(&x, 1);
        for k in 0..table.bins {
            let mut re = 0.0;
            let mut im = 0.0;
            for (ti, &v) in x.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * (k * ti) as f64 / t as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            let want = (re * re + im * im).sqrt();
            assert!((mags[k] - want).abs() < 1e-9, "bin {k}: {} vs {}", mags[k], want);
        }
    }

    #[test]
    fn finite_check_surfaces_nan() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0f64, -1.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![f64::INFINITY, 1.0]).unwrap());
        // a + b contains inf: reported as an error, not stored
        assert!(matches!(tape.add(a, b), Err(Error::NonFinite { .. })));
        // and the poisoned node was not appended
        assert_eq!(tape.len(), 2);
    }
}
