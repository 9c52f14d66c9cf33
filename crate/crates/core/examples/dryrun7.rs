// Scratch dry run of the end-to-end synthetic gate at reduced epochs.

use std::sync::Arc;
use std::time::Instant;

use facade_recon::data::synth::{synth_generate, SynthConfig};
use facade_recon::data::{split_and_normalize, MaskScenario};
use facade_recon::graph::{FacadeGraph, GraphConfig};
use facade_recon::infer::metrics::metrics;
use facade_recon::infer::{neighbor_average_baseline, reconstruct_full, OverlapConfig};
use facade_recon::model::{ModelConfig, ReconModel};
use facade_recon::train::{train, CurriculumConfig, LossConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(20);
    let lr: f64 = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(1e-4);
    let gcfg = GraphConfig::default();
    let synth = SynthConfig {
        graph: gcfg.clone(),
        directions_deg: vec![0.0, 10.0, 20.0, 30.0, 40.0],
        t_full: 7600,
        sample_rate_hz: 1000.0,
        modes: 4,
        mode_freqs_hz: Some(vec![8.0, 13.0, 21.0, 34.0]),
        base_amplitude: 1.0,
        amplitude_decay: 0.8,
        noise_sigma: 0.09,
        noise_corr_length: 3.0,
        noise_rho_t: 0.8,
        seed: 2024,
    };
    let out = synth_generate(&synth, &mut ChaCha8Rng::seed_from_u64(synth.seed)).unwrap();
    let pool: Vec<_> = out.records.iter().map(|r| split_and_normalize(r, 0.8).unwrap()).collect();
    let graph = Arc::new(FacadeGraph::build(&gcfg).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    rng.set_stream(0);
    let mut model: ReconModel<f32> = ReconModel::new(ModelConfig::default(), Arc::clone(&graph), &mut rng).unwrap();
    let tcfg = TrainConfig {
        epochs,
        steps_per_epoch: 10,
        batch: 8,
        lr,
        seed: 7,
        curriculum: CurriculumConfig { stage1_masked: 1, stage2_masked: 2, switch_epoch: epochs / 3 },
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train(&pool, &mut model, &LossConfig::default(), &tcfg, |e, _| {
        if (e + 1) % 5 == 0 {
            eprintln!("epoch {} at {:.0}s", e + 1, t0.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .unwrap();
    eprintln!("train {:.0}s, first loss {:.3}, last loss {:.3}", t0.elapsed().as_secs_f64(), log[0].loss_total, log.last().unwrap().loss_total);

    // evaluation identical to the synthetic gate
    let scenario = MaskScenario::new(vec![3, 17]);
    let overlap = OverlapConfig::default();
    let mut rmse_model_masked = 0.0;
    let mut rmse_base_masked = 0.0;
    let mut pearson_unobs = 0.0;
    let mut rmse_unobs = 0.0;
    let mut rmse_obs = 0.0;
    let mut pearson_masked = 0.0;
    let masked_nodes = scenario.masked_nodes(&graph);
    let unobs = graph.unobserved_nodes();
    for rec in &pool {
        let range = (rec.t_train, rec.t_holdout());
        let res = reconstruct_full(rec, &model, &graph, &scenario, &overlap, Some(range)).unwrap();
        let base = neighbor_average_baseline(rec, &graph, &scenario, range).unwrap();
        let t_len = res.t_len;
        for &node in &masked_nodes {
            let truth = &rec.node_series(node)[range.0..range.0 + range.1];
            let m = metrics(&res.normalized[node * t_len..(node + 1) * t_len], truth).unwrap();
            let b = metrics(&base[node * t_len..(node + 1) * t_len], truth).unwrap();
            rmse_model_masked += m.rmse;
            rmse_base_masked += b.rmse;
            pearson_masked += m.pearson.unwrap_or(0.0);
        }
        for &node in scenario.observed_nodes(&graph).iter() {
            let truth = &rec.node_series(node)[range.0..range.0 + range.1];
            let m = metrics(&res.normalized[node * t_len..(node + 1) * t_len], truth).unwrap();
            rmse_obs += m.rmse;
        }
        for &node in &unobs {
            let truth = &rec.node_series(node)[range.0..range.0 + range.1];
            let m = metrics(&res.normalized[node * t_len..(node + 1) * t_len], truth).unwrap();
            pearson_unobs += m.pearson.unwrap_or(0.0);
            rmse_unobs += m.rmse;
        }
    }
    let nm = (masked_nodes.len() * pool.len()) as f64;
    let nu = (unobs.len() * pool.len()) as f64;
    println!(
        "masked rmse: model {:.4} baseline {:.4} ratio {:.3} (gate < 0.5)",
        rmse_model_masked / nm,
        rmse_base_masked / nm,
        rmse_model_masked / rmse_base_masked
    );
    println!("unobserved pearson: {:.4} (gate > 0.85), unobserved rmse {:.4}", pearson_unobs / nu, rmse_unobs / nu);
    println!("masked pearson {:.4}; observed rmse {:.4}", pearson_masked / nm, rmse_obs / (22.0 * pool.len() as f64));
}
