// Scratch timing probe for the full-size model (not part of the test suite).

use std::sync::Arc;
use std::time::Instant;

use facade_recon::data::synth::{synth_generate, SynthConfig};
use facade_recon::data::{split_and_normalize, MaskScenario};
use facade_recon::graph::{FacadeGraph, GraphConfig};
use facade_recon::model::{ModelConfig, ReconModel};
use facade_recon::train::{train, LossConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
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
    let t0 = Instant::now();
    let out = synth_generate(&synth, &mut ChaCha8Rng::seed_from_u64(synth.seed)).unwrap();
    println!("synth: {:.1}s", t0.elapsed().as_secs_f64());
    let pool: Vec<_> = out.records.iter().map(|r| split_and_normalize(r, 0.8).unwrap()).collect();
    let graph = Arc::new(FacadeGraph::build(&gcfg).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model: ReconModel<f32> = ReconModel::new(ModelConfig::default(), Arc::clone(&graph), &mut rng).unwrap();
    println!("params: {}", model.params.total_params());

    let tcfg = TrainConfig {
        epochs: 2,
        steps_per_epoch: 3,
        batch: 8,
        seed: 1,
        curriculum: facade_recon::train::CurriculumConfig { stage1_masked: 1, stage2_masked: 2, switch_epoch: 1 },
        ..TrainConfig::default()
    };
    let lcfg = LossConfig::default();
    let t0 = Instant::now();
    let log = train(&pool, &mut model, &lcfg, &tcfg, |e, _| {
        println!("epoch {e} done at {:.1}s", t0.elapsed().as_secs_f64());
        Ok(())
    })
    .unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("6 steps: {:.1}s ({:.2}s/step)", dt, dt / 6.0);
    for e in &log {
        println!("loss {:.4} amp {:.4} diff {:.4} spec {:.4} lat {:.5}", e.loss_total, e.loss_amp, e.loss_diff, e.loss_spec, e.loss_lat);
    }

    // phase timing: forward / loss / backward on one window
    {
        use facade_recon::num::tape::{DftTable, Tape};
        use facade_recon::train::{loss_rec, partition};
        let table = Arc::new(DftTable::<f32>::new(200));
        let mut srng = ChaCha8Rng::seed_from_u64(3);
        let sample = facade_recon::data::sample_window::<f32, _>(
            &pool,
            &graph,
            &mut srng,
            200,
            MaskScenario::new(vec![2, 9]),
        )
        .unwrap();
        for _ in 0..2 {
            let t_f = Instant::now();
            let mut tape = Tape::without_finite_checks();
            let pv = model.register(&mut tape);
            let fv = model.forward_on_tape(&mut tape, &pv, &sample).unwrap();
            let d_fwd = t_f.elapsed().as_secs_f64();
            let t_l = Instant::now();
            let parts = partition(&sample.scenario, &graph);
            let rec = loss_rec(&mut tape, fv.y_hat, &sample.y, &parts, &lcfg, &table).unwrap();
            let d_loss = t_l.elapsed().as_secs_f64();
            let t_b = Instant::now();
            let _grads = tape.backward(rec.total).unwrap();
            let d_bwd = t_b.elapsed().as_secs_f64();
            println!("window: fwd {d_fwd:.2}s loss {d_loss:.2}s bwd {d_bwd:.2}s");
        }
    }

    // one full-window inference for the recon cost
    let t0 = Instant::now();
    let scen = MaskScenario::new(vec![0, 1]);
    let res = facade_recon::infer::reconstruct_full(
        &pool[0],
        &model,
        &graph,
        &scen,
        &facade_recon::infer::OverlapConfig::default(),
        Some((pool[0].t_train, pool[0].t_holdout())),
    )
    .unwrap();
    println!("holdout recon ({} windows): {:.1}s", (pool[0].t_holdout() - 200) / 100 + 2, t0.elapsed().as_secs_f64());
    let _ = res;
}
