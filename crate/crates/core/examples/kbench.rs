// Scratch kernel microbenchmarks (not part of the test suite).

use std::time::Instant;

use facade_recon::num::kernels::{self, ConvGeom, Neighborhoods};
use facade_recon::num::scalar::Scalar;

fn timeit(name: &str, reps: usize, mut f: impl FnMut()) {
    f();
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    let b = 125usize;
    let c = 128usize;
    let t = 200usize;

    // decoder residual conv [125,128,200] x [128,128,3]
    let x = vec![0.5f32; b * c * t];
    let w = vec![0.01f32; c * c * 3];
    let bias = vec![0.0f32; c];
    let geom = ConvGeom { c_in: c, c_out: c, k: 3, stride: 1, dilation: 1, padding: 1 };
    timeit("conv fwd 125x128x200 k3", 3, || {
        let _ = kernels::conv_fwd(&x, &w, Some(&bias), b, t, &geom).unwrap();
    });
    let dy = vec![0.3f32; b * c * t];
    timeit("conv bwd_input", 3, || {
        let _ = kernels::conv_bwd_input(&dy, &w, b, t, &geom).unwrap();
    });
    timeit("conv bwd_weight", 3, || {
        let _ = kernels::conv_bwd_weight(&dy, &x, b, t, &geom).unwrap();
    });

    // gelu over the same volume
    let src = vec![0.37f32; b * c * t];
    timeit("gelu 3.2M", 5, || {
        let mut y = vec![0.0f32; src.len()];
        let mut g = vec![0.0f32; src.len()];
        for ((yi, gi), &v) in y.iter_mut().zip(g.iter_mut()).zip(&src) {
            let (val, gg) = v.gelu_with_grad();
            *yi = val;
            *gi = gg;
        }
        std::hint::black_box((&y, &g));
    });

    // group norm fwd+bwd
    let gamma = vec![1.0f32; c];
    let beta = vec![0.0f32; c];
    timeit("gn fwd 3.2M", 5, || {
        let _ = kernels::group_norm_fwd(&x, &gamma, &beta, b, c, t, 8, 1e-5).unwrap();
    });
    let (_, mean, rstd) = kernels::group_norm_fwd(&x, &gamma, &beta, b, c, t, 8, 1e-5).unwrap();
    timeit("gn bwd 3.2M", 5, || {
        let _ = kernels::group_norm_bwd(&dy, &x, &gamma, &mean, &rstd, b, c, t, 8);
    });

    // attention at full scale: 50 slices x 125 nodes, 271-edge graph + self loops
    let gcfg = facade_recon::graph::GraphConfig::default();
    let graph = facade_recon::graph::FacadeGraph::build(&gcfg).unwrap();
    let nbrs = Neighborhoods::from_edges(125, &graph.edges, true).unwrap();
    let slices = 50usize;
    let d = 128usize;
    let q = vec![0.1f32; slices * 125 * d];
    timeit("attention fwd 50x125", 3, || {
        let _ = kernels::attention_fwd(&q, &q, &q, &nbrs, slices, 4, 32);
    });
    let (out, alphas) = kernels::attention_fwd(&q, &q, &q, &nbrs, slices, 4, 32);
    timeit("attention bwd 50x125", 3, || {
        let _ = kernels::attention_bwd(&out, &q, &q, &q, &alphas, &nbrs, slices, 4, 32);
    });

    // convT up2: [125,128,100] -> [125,128,200], k4 s2
    let xl = vec![0.2f32; b * c * 100];
    let wt = vec![0.01f32; c * c * 4];
    timeit("convT fwd 100->200", 3, || {
        let _ = kernels::convt_fwd(&xl, &wt, Some(&bias), b, 100, c, c, 4, 2, 1).unwrap();
    });

    // matmul 6250x133x128 (graph projections)
    let a = vec![0.1f32; 6250 * 133];
    let wm = vec![0.02f32; 133 * 128];
    timeit("gemm 6250x133x128", 5, || {
        let mut out = vec![0.0f32; 6250 * 128];
        kernels::gemm_nn(6250, 133, 128, &a, &wm, false, &mut out);
        std::hint::black_box(&out);
    });

    // layer norm rows
    let h = vec![0.3f32; 6250 * 128];
    let g2 = vec![1.0f32; 128];
    let b2 = vec![0.0f32; 128];
    timeit("ln 6250x128", 5, || {
        let _ = kernels::layer_norm_fwd(&h, &g2, &b2, 6250, 128, 1e-5);
    });

    // allocation + zeroing of a window-sized tensor
    timeit("alloc+zero 12.8MB", 5, || {
        let v = vec![0.0f32; b * c * t];
        std::hint::black_box(&v);
    });
}
