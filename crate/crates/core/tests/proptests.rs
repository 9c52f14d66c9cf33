//! Property tests for the spec invariants that benefit from randomized
//! inputs: overlap-add against brute force, conv/transpose adjointness,
//! attention row normalization, and mask/window sampling contracts.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use facade_recon::data::{sample_window, split_and_normalize, MaskScenario, PressureRecord, WindowSample};
use facade_recon::graph::{FacadeGraph, GraphConfig};
use facade_recon::infer::{overlap_add, OverlapPlan, WeightKind};
use facade_recon::num::kernels::{self, ConvGeom, Neighborhoods};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn overlap_add_equals_brute_force(
        t_full in 24usize..200,
        window_frac in 2usize..6,
        hop_div in 1usize..4,
        seed in 0u64..1000,
        uniform in proptest::bool::ANY,
    ) {
        let window = (t_full / window_frac).max(4);
        let hop = (window / (hop_div + 1)).max(1);
        let kind = if uniform { WeightKind::Uniform } else { WeightKind::Hann };
        let plan = OverlapPlan::new(t_full, window, hop, kind, 1e-8).unwrap();
        let n = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows: Vec<Vec<f64>> = (0..plan.starts.len())
            .map(|_| (0..n * window).map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0).collect())
            .collect();
        let fast = overlap_add(&windows, n, &plan).unwrap();
        for node in 0..n {
            for t in 0..t_full {
                let mut num = 0.0;
                let mut den = plan.eps;
                for (k, &s) in plan.starts.iter().enumerate() {
                    if t >= s && t < s + window {
                        num += plan.weights[t - s] * windows[k][node * window + t - s];
                        den += plan.weights[t - s];
                    }
                }
                prop_assert!((fast[node * t_full + t] - num / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overlap_add_invariant_to_weight_rescaling(
        t_full in 30usize..120,
        seed in 0u64..1000,
        scale in 0.25f64..4.0,
    ) {
        // normalization makes the output invariant to a global rescale of
        // the weight profile in the eps = 0 limit
        let window = 12usize;
        let hop = 5usize;
        let mut plan = OverlapPlan::new(t_full, window, hop, WeightKind::Hann, 0.0).unwrap();
        let n = 2usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows: Vec<Vec<f64>> = (0..plan.starts.len())
            .map(|_| (0..n * window).map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0).collect())
            .collect();
        let base = overlap_add(&windows, n, &plan).unwrap();
        for w in plan.weights.iter_mut() {
            *w *= scale;
        }
        let rescaled = overlap_add(&windows, n, &plan).unwrap();
        for (a, b) in base.iter().zip(&rescaled) {
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn conv_transpose_is_the_adjoint(
        ci in 1usize..4,
        co in 1usize..4,
        k in 1usize..5,
        stride in 1usize..3,
        blocks in 3usize..8,
        pad in 0usize..2,
        seed in 0u64..1000,
    ) {
        // choose t so the length map round-trips under the stride
        let span = k; // dilation 1
        let t = blocks * stride + span.saturating_sub(stride).max(1) + 2 * pad;
        let geom = ConvGeom { c_in: ci, c_out: co, k, stride, dilation: 1, padding: pad };
        let t_out = match geom.out_len(t) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        if geom.transpose_out_len(t_out) != t {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0).collect()
        };
        let x = draw(ci * t);
        let w = draw(co * ci * k);
        let y = draw(co * t_out);
        let cx = kernels::conv_fwd(&x, &w, None, 1, t, &geom).unwrap();
        let ty = kernels::convt_fwd(&y, &w, None, 1, t_out, co, ci, k, stride, pad).unwrap();
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
            "adjoint identity violated: {lhs} vs {rhs}");
    }

    #[test]
    fn attention_rows_are_probability_vectors(
        n_nodes in 2usize..8,
        extra_edges in 0usize..6,
        heads_pow in 0usize..2,
        seed in 0u64..1000,
    ) {
        let heads = 1 << heads_pow;
        let dh = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(usize, usize)> = (1..n_nodes).map(|i| (i - 1, i)).collect();
        for _ in 0..extra_edges {
            let a = rand::Rng::random_range(&mut rng, 0..n_nodes);
            let b = rand::Rng::random_range(&mut rng, 0..n_nodes);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let nbrs = Neighborhoods::from_edges(n_nodes, &edges, true).unwrap();
        let d = heads * dh;
        let slices = 2usize;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0).collect()
        };
        let q = draw(slices * n_nodes * d);
        let k = draw(slices * n_nodes * d);
        let v = draw(slices * n_nodes * d);
        let (_, alphas) = kernels::attention_fwd(&q, &k, &v, &nbrs, slices, heads, dh);
        for s in 0..slices {
            let abase = s * nbrs.total_degree() * heads;
            for i in 0..n_nodes {
                let deg = nbrs.neighbors(i).len();
                for h in 0..heads {
                    let a0 = abase + nbrs.offsets[i] * heads + h * deg;
                    let row = &alphas[a0..a0 + deg];
                    let sum: f64 = row.iter().sum();
                    prop_assert!(row.iter().all(|&a| a >= 0.0));
                    prop_assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
                }
            }
        }
    }

    #[test]
    fn emitted_windows_honor_the_fill_contract(
        seed in 0u64..500,
        masked in 0usize..2,
    ) {
        let graph = FacadeGraph::build(&GraphConfig { rows: 4, cols: 2, sensors: Some(vec![0, 3, 5]) }).unwrap();
        let n = 8;
        let t_full = 60;
        let values: Vec<f64> = (0..n * t_full).map(|i| ((i as f64) * 0.37).sin()).collect();
        let rec = PressureRecord::new(0.0, 10.0, n, t_full, values).unwrap();
        let pool = vec![split_and_normalize(&rec, 0.8).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = MaskScenario::new((0..masked).collect());
        let w: WindowSample<f64> = sample_window(&pool, &graph, &mut rng, 16, scenario).unwrap();
        for (x, p) in w.x.data().iter().zip(w.p.data()) {
            prop_assert!(x * (1.0 - p) == 0.0, "X (1-P) != 0");
        }
    }
}

#[test]
fn window_sampling_never_crosses_the_split_boundary() {
    // 10^4 draws stay inside the training segment
    let graph = FacadeGraph::build(&GraphConfig { rows: 4, cols: 2, sensors: Some(vec![0, 3, 5]) }).unwrap();
    let n = 8;
    let t_full = 125;
    let values: Vec<f64> = (0..n * t_full).map(|i| ((i as f64) * 0.31).cos()).collect();
    let rec = PressureRecord::new(0.0, 10.0, n, t_full, values).unwrap();
    let prep = split_and_normalize(&rec, 0.8).unwrap();
    let t_train = prep.t_train;
    let pool = vec![prep];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let t = 16;
    for _ in 0..10_000 {
        let w: WindowSample<f64> = sample_window(&pool, &graph, &mut rng, t, MaskScenario::default()).unwrap();
        assert!(w.start + t <= t_train, "window [{}, {}) crosses the boundary {t_train}", w.start, w.start + t);
    }
}

#[test]
fn forward_values_are_deterministic_at_fixed_seed() {
    // fixed seed + fixed thread count -> bit-identical forward values (f64)
    use facade_recon::model::{DecoderConfig, EncoderConfig, GraphModuleConfig, ModelConfig, ReconModel};
    let graph = Arc::new(FacadeGraph::build(&GraphConfig { rows: 3, cols: 2, sensors: Some(vec![0, 4]) }).unwrap());
    let cfg = ModelConfig {
        window: 16,
        encoder: EncoderConfig { blocks: 1, kernel: 3, dilations: vec![1], channels: 8, strided_layers: 2 },
        graph: GraphModuleConfig { layers: 1, hidden: 8, heads: 2 },
        decoder: DecoderConfig { upsample_layers: 2, residual_blocks: 1 },
        norm_eps: 1e-5,
        norm_groups: 8,
    };
    let build = || -> Vec<f64> {
        let model: ReconModel<f64> =
            ReconModel::new(cfg.clone(), Arc::clone(&graph), &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let y: Vec<f64> = (0..6 * 16).map(|i| ((i * 7) % 13) as f64 * 0.1 - 0.6).collect();
        let scenario = MaskScenario::default();
        let (x, p) = facade_recon::data::apply_outage::<f64>(&y, 6, 16, &scenario, &graph).unwrap();
        let sample = WindowSample {
            x,
            p,
            direction_deg: 30.0,
            y: facade_recon::num::tensor::Tensor::from_f64_slice(&[6, 16], &y).unwrap(),
            scenario,
            direction_index: 0,
            start: 0,
        };
        model.forward(&sample).unwrap().into_data()
    };
    assert_eq!(build(), build());
}
