//! Raw numeric kernels shared by tape forward and backward passes.
//!
//! Convolutions are lowered to GEMM through im2col over chunks of the batch
//! dimension; transposed convolution reuses the same machinery with the
//! input/output roles swapped, which makes conv1d and conv_transpose1d exact
//! adjoints of each other by construction.

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_len(&self, t: usize) -> Result<usize> {
        if self.k < 1 || self.stride < 1 || self.dilation < 1 {
            return Err(Error::config(
                "conv",
                format!("k={}, stride={}, dilation={} must all be >= 1", self.k, self.stride, self.dilation),
            ));
        }
        let span = self.dilation * (self.k - 1) + 1;
        if t + 2 * self.padding < span {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "input length {} with padding {} shorter than kernel span {} (k={}, dilation={})",
                    t, self.padding, span, self.k, self.dilation
                ),
            ));
        }
        Ok((t + 2 * self.padding - span) / self.stride + 1)
    }

    /// Output length of the transposed convolution for input length `l`.
    pub fn transpose_out_len(&self, l: usize) -> usize {
        (l - 1) * self.stride + self.dilation * (self.k - 1) + 1 - 2 * self.padding
    }
}

// im2col chunk size: bounded so the column buffer stays cache-friendly.
fn chunk_nodes(ck: usize, t_out: usize) -> usize {
    (500_000 / (ck * t_out).max(1)).clamp(1, 64)
}

/// Output positions whose source index `to*stride + off` lands inside
/// `[0, t_in)`: returns (to_lo, to_hi) as an inclusive-exclusive range.
#[inline]
fn valid_out_range(off: isize, stride: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi_excl = (t_in as isize - off + s - 1) / s; // first to with src >= t_in
    let lo = lo.clamp(0, t_out as isize) as usize;
    let hi = hi_excl.clamp(lo as isize, t_out as isize) as usize;
    (lo, hi)
}

/// col[(ci*k + j), (g*t_out + to)] = x[b0+g, ci, to*stride - pad + j*dil] (0 outside).
fn im2col<S: Scalar>(x: &[S], b0: usize, g: usize, t_in: usize, t_out: usize, geom: &ConvGeom, col: &mut [S]) {
    let ck = geom.c_in * geom.k;
    debug_assert_eq!(col.len(), ck * g * t_out);
    for gi in 0..g {
        let xb = &x[(b0 + gi) * geom.c_in * t_in..(b0 + gi + 1) * geom.c_in * t_in];
        for ci in 0..geom.c_in {
            let xrow = &xb[ci * t_in..(ci + 1) * t_in];
            for j in 0..geom.k {
                let dst0 = (ci * geom.k + j) * (g * t_out) + gi * t_out;
                let dst = &mut col[dst0..dst0 + t_out];
                let off = j as isize * geom.dilation as isize - geom.padding as isize;
                let (lo, hi) = valid_out_range(off, geom.stride, t_in, t_out);
                dst[..lo].fill(S::ZERO);
                dst[hi..].fill(S::ZERO);
                if lo < hi {
                    let src0 = (lo as isize * geom.stride as isize + off) as usize;
                    if geom.stride == 1 {
                        dst[lo..hi].copy_from_slice(&xrow[src0..src0 + (hi - lo)]);
                    } else {
                        let mut src = src0;
                        for d in &mut dst[lo..hi] {
                            *d = xrow[src];
                            src += geom.stride;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add the column buffer back into `dx`.
fn col2im<S: Scalar>(col: &[S], b0: usize, g: usize, t_in: usize, t_out: usize, geom: &ConvGeom, dx: &mut [S]) {
    for gi in 0..g {
        let xb = &mut dx[(b0 + gi) * geom.c_in * t_in..(b0 + gi + 1) * geom.c_in * t_in];
        for ci in 0..geom.c_in {
            let xrow = &mut xb[ci * t_in..(ci + 1) * t_in];
            for j in 0..geom.k {
                let src0 = (ci * geom.k + j) * (g * t_out) + gi * t_out;
                let src = &col[src0..src0 + t_out];
                let off = j as isize * geom.dilation as isize - geom.padding as isize;
                let (lo, hi) = valid_out_range(off, geom.stride, t_in, t_out);
                if lo < hi {
                    let d0 = (lo as isize * geom.stride as isize + off) as usize;
                    if geom.stride == 1 {
                        for (d, &s) in xrow[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        let mut d = d0;
                        for &s in &src[lo..hi] {
                            xrow[d] += s;
                            d += geom.stride;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution: x [B, Cin, T] -> out [B, Cout, T'] with weight
/// [Cout, Cin, k] and optional per-channel bias.
pub fn conv_fwd<S: Scalar>(
    x: &[S],
    w: &[S],
    bias: Option<&[S]>,
    batch: usize,
    t_in: usize,
    geom: &ConvGeom,
) -> Result<Vec<S>> {
    let t_out = geom.out_len(t_in)?;
    let ck = geom.c_in * geom.k;
    let mut out = vec![S::ZERO; batch * geom.c_out * t_out];
    let g_max = chunk_nodes(ck, t_out);
    let mut col = vec![S::ZERO; ck * g_max * t_out];
    let mut tmp = vec![S::ZERO; geom.c_out * g_max * t_out];
    let mut b0 = 0;
    while b0 < batch {
        let g = g_max.min(batch - b0);
        let cols = g * t_out;
        im2col(x, b0, g, t_in, t_out, geom, &mut col[..ck * cols]);
        S::gemm(geom.c_out, ck, cols, S::ONE, w, &col[..ck * cols], S::ZERO, &mut tmp[..geom.c_out * cols]);
        // tmp [Cout, g*T'] -> out [b, Cout, T']
        for co in 0..geom.c_out {
            let add = bias.map(|b| b[co]).unwrap_or(S::ZERO);
            for gi in 0..g {
                let src = &tmp[co * cols + gi * t_out..co * cols + (gi + 1) * t_out];
                let dst0 = ((b0 + gi) * geom.c_out + co) * t_out;
                for (d, &s) in out[dst0..dst0 + t_out].iter_mut().zip(src) {
                    *d = s + add;
                }
            }
        }
        b0 += g;
    }
    Ok(out)
}

/// Gradient w.r.t. the convolution input. `dy` is [B, Cout, T'].
pub fn conv_bwd_input<S: Scalar>(
    dy: &[S],
    w: &[S],
    batch: usize,
    t_in: usize,
    geom: &ConvGeom,
) -> Result<Vec<S>> {
    let t_out = geom.out_len(t_in)?;
    let ck = geom.c_in * geom.k;
    let mut dx = vec![S::ZERO; batch * geom.c_in * t_in];
    let g_max = chunk_nodes(ck, t_out);
    let mut dyc = vec![S::ZERO; geom.c_out * g_max * t_out];
    let mut dcol = vec![S::ZERO; ck * g_max * t_out];
    let mut b0 = 0;
    while b0 < batch {
        let g = g_max.min(batch - b0);
        let cols = g * t_out;
        gather_bct(dy, b0, g, geom.c_out, t_out, &mut dyc[..geom.c_out * cols]);
        // dcol = W^T [ck, Cout] x dyc [Cout, cols]; pass W transposed via strides.
        gemm_tn(ck, geom.c_out, cols, w, &dyc[..geom.c_out * cols], false, &mut dcol[..ck * cols]);
        col2im(&dcol[..ck * cols], b0, g, t_in, t_out, geom, &mut dx);
        b0 += g;
    }
    Ok(dx)
}

/// Gradients w.r.t. weight and bias. Returns (dw [Cout, Cin, k], db [Cout]).
pub fn conv_bwd_weight<S: Scalar>(
    dy: &[S],
    x: &[S],
    batch: usize,
    t_in: usize,
    geom: &ConvGeom,
) -> Result<(Vec<S>, Vec<S>)> {
    let t_out = geom.out_len(t_in)?;
    let ck = geom.c_in * geom.k;
    let mut dw = vec![S::ZERO; geom.c_out * ck];
    let mut db = vec![S::ZERO; geom.c_out];
    let g_max = chunk_nodes(ck, t_out);
    let mut col = vec![S::ZERO; ck * g_max * t_out];
    let mut dyc = vec![S::ZERO; geom.c_out * g_max * t_out];
    let mut b0 = 0;
    while b0 < batch {
        let g = g_max.min(batch - b0);
        let cols = g * t_out;
        im2col(x, b0, g, t_in, t_out, geom, &mut col[..ck * cols]);
        gather_bct(dy, b0, g, geom.c_out, t_out, &mut dyc[..geom.c_out * cols]);
        // dw += dyc [Cout, cols] x col^T [cols, ck]
        gemm_nt(geom.c_out, cols, ck, &dyc[..geom.c_out * cols], &col[..ck * cols], true, &mut dw);
        for co in 0..geom.c_out {
            let mut s = S::ZERO;
            for v in &dyc[co * cols..(co + 1) * cols] {
                s += *v;
            }
            db[co] += s;
        }
        b0 += g;
    }
    Ok((dw, db))
}

/// Gather [B, C, T] rows for a batch chunk into a [C, g*T] matrix.
fn gather_bct<S: Scalar>(x: &[S], b0: usize, g: usize, c: usize, t: usize, out: &mut [S]) {
    for co in 0..c {
        for gi in 0..g {
            let src0 = ((b0 + gi) * c + co) * t;
            let dst0 = co * (g * t) + gi * t;
            out[dst0..dst0 + t].copy_from_slice(&x[src0..src0 + t]);
        }
    }
}

/// c = a @ b (accumulating when `acc`), all row-major: a [m,k], b [k,n].
pub fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], acc: bool, c: &mut [S]) {
    let beta = if acc { S::ONE } else { S::ZERO };
    gemm_dispatch(m, k, n, S::ONE, a, k as isize, 1, b, n as isize, 1, beta, c);
}

/// c = a^T @ b where a is stored [k, m] row-major.
pub fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], acc: bool, c: &mut [S]) {
    let beta = if acc { S::ONE } else { S::ZERO };
    gemm_dispatch(m, k, n, S::ONE, a, 1, m as isize, b, n as isize, 1, beta, c);
}

/// c = a @ b^T where b is stored [n, k] row-major.
pub fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], acc: bool, c: &mut [S]) {
    let beta = if acc { S::ONE } else { S::ZERO };
    gemm_dispatch(m, k, n, S::ONE, a, k as isize, 1, b, 1, k as isize, beta, c);
}

// Strided GEMM behind the Scalar row-major entry point: specialize by copying
// into the canonical layout is wasteful, so dispatch on the two concrete
// types through a small unsafe shim.
fn gemm_dispatch<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    rsa: isize,
    csa: isize,
    b: &[S],
    rsb: isize,
    csb: isize,
    beta: S,
    c: &mut [S],
) {
    use std::any::TypeId;
    if TypeId::of::<S>() == TypeId::of::<f32>() {
        unsafe {
            matrixmultiply::sgemm(
                m, k, n,
                alpha.to_f64() as f32,
                a.as_ptr() as *const f32, rsa, csa,
                b.as_ptr() as *const f32, rsb, csb,
                beta.to_f64() as f32,
                c.as_mut_ptr() as *mut f32, n as isize, 1,
            );
        }
    } else {
        unsafe {
            matrixmultiply::dgemm(
                m, k, n,
                alpha.to_f64(),
                a.as_ptr() as *const f64, rsa, csa,
                b.as_ptr() as *const f64, rsb, csb,
                beta.to_f64(),
                c.as_mut_ptr() as *mut f64, n as isize, 1,
            );
        }
    }
}

/// Transposed convolution forward: x [B, Cin, L] with weight [Cin, Cout, k]
/// -> out [B, Cout, (L-1)*stride - 2*pad + k].
///
/// Implemented as the adjoint of [`conv_fwd`]: with the weight tensor viewed
/// as a forward-conv weight, the scatter path of `conv_bwd_input` realizes
/// exactly the transposed convolution.
pub fn convt_fwd<S: Scalar>(
    x: &[S],
    w: &[S],
    bias: Option<&[S]>,
    batch: usize,
    l_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Vec<S>> {
    let geom = ConvGeom { c_in: c_out, c_out: c_in, k, stride, dilation: 1, padding };
    let t_out = geom.transpose_out_len(l_in);
    // sanity: forward length of t_out must reproduce l_in
    if geom.out_len(t_out)? != l_in {
        return Err(Error::shape(
            "conv_transpose1d",
            format!("inconsistent geometry: L={l_in}, k={k}, stride={stride}, padding={padding}"),
        ));
    }
    let mut out = conv_bwd_input(x, w, batch, t_out, &geom)?;
    if let Some(b) = bias {
        for bi in 0..batch {
            for co in 0..c_out {
                let o0 = (bi * c_out + co) * t_out;
                let add = b[co];
                for v in &mut out[o0..o0 + t_out] {
                    *v += add;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of the transposed convolution w.r.t. its input.
pub fn convt_bwd_input<S: Scalar>(
    dy: &[S],
    w: &[S],
    batch: usize,
    l_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Vec<S>> {
    let geom = ConvGeom { c_in: c_out, c_out: c_in, k, stride, dilation: 1, padding };
    let t_out = geom.transpose_out_len(l_in);
    conv_fwd(dy, w, None, batch, t_out, &geom)
}

/// Gradients of the transposed convolution w.r.t. weight and bias.
pub fn convt_bwd_weight<S: Scalar>(
    dy: &[S],
    x: &[S],
    batch: usize,
    l_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    let geom = ConvGeom { c_in: c_out, c_out: c_in, k, stride, dilation: 1, padding };
    let t_out = geom.transpose_out_len(l_in);
    // roles swapped: "input" = dy over t_out, "output grad" = x over l_in
    let (dw, _) = conv_bwd_weight(x, dy, batch, t_out, &geom)?;
    let mut db = vec![S::ZERO; c_out];
    for bi in 0..batch {
        for co in 0..c_out {
            let o0 = (bi * c_out + co) * t_out;
            let mut s = S::ZERO;
            for v in &dy[o0..o0 + t_out] {
                s += *v;
            }
            db[co] += s;
        }
    }
    Ok((dw, db))
}

/// Group normalization forward over [B, C, T].
/// Returns (y, mean, rstd) with mean/rstd per (batch, group).
pub fn group_norm_fwd<S: Scalar>(
    x: &[S],
    gamma: &[S],
    beta: &[S],
    batch: usize,
    channels: usize,
    t: usize,
    groups: usize,
    eps: f64,
) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    if channels % groups != 0 {
        return Err(Error::config(
            "group_norm",
            format!("channels {channels} not divisible by groups {groups}"),
        ));
    }
    let cg = channels / groups;
    let m = cg * t;
    let mut y = vec![S::ZERO; x.len()];
    let mut means = vec![S::ZERO; batch * groups];
    let mut rstds = vec![S::ZERO; batch * groups];
    let inv_m = S::from_f64(1.0 / m as f64);
    for b in 0..batch {
        for g in 0..groups {
            let x0 = (b * channels + g * cg) * t;
            let seg = &x[x0..x0 + m];
            let mut mean = S::ZERO;
            for v in seg {
                mean += *v;
            }
            mean *= inv_m;
            let mut var = S::ZERO;
            for v in seg {
                let d = *v - mean;
                var += d * d;
            }
            var *= inv_m;
            let rstd = S::ONE / (var + S::from_f64(eps)).sqrt();
            means[b * groups + g] = mean;
            rstds[b * groups + g] = rstd;
            for c_local in 0..cg {
                let ch = g * cg + c_local;
                let ga = gamma[ch];
                let be = beta[ch];
                let o0 = (b * channels + ch) * t;
                for i in 0..t {
                    y[o0 + i] = (x[o0 + i] - mean) * rstd * ga + be;
                }
            }
        }
    }
    Ok((y, means, rstds))
}

/// Group normalization backward. Returns (dx, dgamma, dbeta).
#[allow(clippy::too_many_arguments)]
pub fn group_norm_bwd<S: Scalar>(
    dy: &[S],
    x: &[S],
    gamma: &[S],
    means: &[S],
    rstds: &[S],
    batch: usize,
    channels: usize,
    t: usize,
    groups: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let cg = channels / groups;
    let m = cg * t;
    let inv_m = S::from_f64(1.0 / m as f64);
    let mut dx = vec![S::ZERO; x.len()];
    let mut dgamma = vec![S::ZERO; channels];
    let mut dbeta = vec![S::ZERO; channels];
    for b in 0..batch {
        for g in 0..groups {
            let mean = means[b * groups + g];
            let rstd = rstds[b * groups + g];
            // first pass: accumulate sums over the group
            let mut sum_dxhat = S::ZERO;
            let mut sum_dxhat_xhat = S::ZERO;
            for c_local in 0..cg {
                let ch = g * cg + c_local;
                let ga = gamma[ch];
                let o0 = (b * channels + ch) * t;
                let mut dga = S::ZERO;
                let mut dbe = S::ZERO;
                for i in 0..t {
                    let xhat = (x[o0 + i] - mean) * rstd;
                    let dyi = dy[o0 + i];
                    let dxhat = dyi * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    dga += dyi * xhat;
                    dbe += dyi;
                }
                dgamma[ch] += dga;
                dbeta[ch] += dbe;
            }
            let c1 = sum_dxhat * inv_m;
            let c2 = sum_dxhat_xhat * inv_m;
            for c_local in 0..cg {
                let ch = g * cg + c_local;
                let ga = gamma[ch];
                let o0 = (b * channels + ch) * t;
                for i in 0..t {
                    let xhat = (x[o0 + i] - mean) * rstd;
                    let dxhat = dy[o0 + i] * ga;
                    dx[o0 + i] = rstd * (dxhat - c1 - xhat * c2);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-row layer normalization over [M, D]. Returns (y, mean, rstd).
pub fn layer_norm_fwd<S: Scalar>(
    x: &[S],
    gamma: &[S],
    beta: &[S],
    rows: usize,
    d: usize,
    eps: f64,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut y = vec![S::ZERO; x.len()];
    let mut means = vec![S::ZERO; rows];
    let mut rstds = vec![S::ZERO; rows];
    let inv_d = S::from_f64(1.0 / d as f64);
    for r in 0..rows {
        let seg = &x[r * d..(r + 1) * d];
        let mut mean = S::ZERO;
        for v in seg {
            mean += *v;
        }
        mean *= inv_d;
        let mut var = S::ZERO;
        for v in seg {
            let dv = *v - mean;
            var += dv * dv;
        }
        var *= inv_d;
        let rstd = S::ONE / (var + S::from_f64(eps)).sqrt();
        means[r] = mean;
        rstds[r] = rstd;
        let dst = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            dst[i] = (seg[i] - mean) * rstd * gamma[i] + beta[i];
        }
    }
    (y, means, rstds)
}

/// Layer normalization backward. Returns (dx, dgamma, dbeta).
pub fn layer_norm_bwd<S: Scalar>(
    dy: &[S],
    x: &[S],
    gamma: &[S],
    means: &[S],
    rstds: &[S],
    rows: usize,
    d: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::ZERO; x.len()];
    let mut dgamma = vec![S::ZERO; d];
    let mut dbeta = vec![S::ZERO; d];
    let inv_d = S::from_f64(1.0 / d as f64);
    for r in 0..rows {
        let mean = means[r];
        let rstd = rstds[r];
        let xs = &x[r * d..(r + 1) * d];
        let dys = &dy[r * d..(r + 1) * d];
        let mut c1 = S::ZERO;
        let mut c2 = S::ZERO;
        for i in 0..d {
            let xhat = (xs[i] - mean) * rstd;
            let dxhat = dys[i] * gamma[i];
            c1 += dxhat;
            c2 += dxhat * xhat;
            dgamma[i] += dys[i] * xhat;
            dbeta[i] += dys[i];
        }
        c1 *= inv_d;
        c2 *= inv_d;
        let dst = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xs[i] - mean) * rstd;
            let dxhat = dys[i] * gamma[i];
            dst[i] = rstd * (dxhat - c1 - xhat * c2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Neighborhoods in CSR form; shared by all attention layers of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Neighborhoods {
    /// Build per-node neighbor lists from an undirected edge list; with
    /// `self_loops` every node attends over itself as well.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)], self_loops: bool) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::shape("neighborhoods", format!("edge ({a},{b}) out of {n_nodes} nodes")));
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        for (i, l) in lists.iter_mut().enumerate() {
            if self_loops {
                l.push(i);
            }
            l.sort_unstable();
            l.dedup();
            if l.is_empty() {
                return Err(Error::Usage(format!(
                    "node {i} has an empty attention neighborhood (isolated node without self-loop)"
                )));
            }
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend_from_slice(&l);
            offsets.push(targets.len());
        }
        Ok(Neighborhoods { offsets, targets })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn total_degree(&self) -> usize {
        self.targets.len()
    }
}

/// Multi-head attention restricted to graph neighborhoods.
///
/// `q`, `k`, `v` are [S*N, H*dh] where tokens are grouped per time slice
/// (token s*N + i is node i at slice s). Attention of a node runs over its
/// neighborhood within the same slice. Returns the context tensor and the
/// attention weights (layout: slice-major, then node, head, neighbor).
pub fn attention_fwd<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    nbrs: &Neighborhoods,
    slices: usize,
    heads: usize,
    dh: usize,
) -> (Vec<S>, Vec<S>) {
    let n = nbrs.n_nodes();
    let d = heads * dh;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![S::ZERO; slices * n * d];
    let mut alphas = vec![S::ZERO; slices * nbrs.total_degree() * heads];
    let mut scores: Vec<S> = Vec::new();
    for s in 0..slices {
        let base = s * n;
        let abase = s * nbrs.total_degree() * heads;
        for i in 0..n {
            let njs = nbrs.neighbors(i);
            let deg = njs.len();
            scores.resize(deg, S::ZERO);
            for h in 0..heads {
                let q0 = (base + i) * d + h * dh;
                let qi = &q[q0..q0 + dh];
                let mut max = S::from_f64(f64::NEG_INFINITY);
                for (jj, &j) in njs.iter().enumerate() {
                    let k0 = (base + j) * d + h * dh;
                    let kj = &k[k0..k0 + dh];
                    let mut dot = S::ZERO;
                    for (a, b) in qi.iter().zip(kj) {
                        dot += *a * *b;
                    }
                    let sc = dot * scale;
                    scores[jj] = sc;
                    if sc > max {
                        max = sc;
                    }
                }
                let mut denom = S::ZERO;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    denom += *sc;
                }
                let inv = S::ONE / denom;
                let a0 = abase + nbrs.offsets[i] * heads + h * deg;
                let o0 = (base + i) * d + h * dh;
                for (jj, &j) in njs.iter().enumerate() {
                    let alpha = scores[jj] * inv;
                    alphas[a0 + jj] = alpha;
                    let v0 = (base + j) * d + h * dh;
                    let vj = &v[v0..v0 + dh];
                    let dst = &mut out[o0..o0 + dh];
                    for (dd, &vv) in dst.iter_mut().zip(vj) {
                        *dd += alpha * vv;
                    }
                }
            }
        }
    }
    (out, alphas)
}

/// Backward of [`attention_fwd`]. Returns (dq, dk, dv).
#[allow(clippy::too_many_arguments)]
pub fn attention_bwd<S: Scalar>(
    dout: &[S],
    q: &[S],
    k: &[S],
    v: &[S],
    alphas: &[S],
    nbrs: &Neighborhoods,
    slices: usize,
    heads: usize,
    dh: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let n = nbrs.n_nodes();
    let d = heads * dh;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![S::ZERO; q.len()];
    let mut dk = vec![S::ZERO; k.len()];
    let mut dv = vec![S::ZERO; v.len()];
    let mut dalpha: Vec<S> = Vec::new();
    for s in 0..slices {
        let base = s * n;
        let abase = s * nbrs.total_degree() * heads;
        for i in 0..n {
            let njs = nbrs.neighbors(i);
            let deg = njs.len();
            dalpha.resize(deg, S::ZERO);
            for h in 0..heads {
                let o0 = (base + i) * d + h * dh;
                let go = &dout[o0..o0 + dh];
                let a0 = abase + nbrs.offsets[i] * heads + h * deg;
                // dv and dL/dalpha
                let mut sum_adot = S::ZERO;
                for (jj, &j) in njs.iter().enumerate() {
                    let alpha = alphas[a0 + jj];
                    let v0 = (base + j) * d + h * dh;
                    let vj = &v[v0..v0 + dh];
                    let mut dot = S::ZERO;
                    for (g, &vv) in go.iter().zip(vj) {
                        dot += *g * vv;
                    }
                    dalpha[jj] = dot;
                    sum_adot += alpha * dot;
                    let dvj = &mut dv[v0..v0 + dh];
                    for (dd, &g) in dvj.iter_mut().zip(go) {
                        *dd += alpha * g;
                    }
                }
                // softmax backward: ds_j = alpha_j * (dalpha_j - sum_m alpha_m dalpha_m)
                let q0 = (base + i) * d + h * dh;
                let qi = &q[q0..q0 + dh];
                for (jj, &j) in njs.iter().enumerate() {
                    let ds = alphas[a0 + jj] * (dalpha[jj] - sum_adot) * scale;
                    let k0 = (base + j) * d + h * dh;
                    let kj = &k[k0..k0 + dh];
                    let dqi = &mut dq[q0..q0 + dh];
                    for (dd, &kk) in dqi.iter_mut().zip(kj) {
                        *dd += ds * kk;
                    }
                    let dkj = &mut dk[k0..k0 + dh];
                    for (dd, &qq) in dkj.iter_mut().zip(qi) {
                        *dd += ds * qq;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
