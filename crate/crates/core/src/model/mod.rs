//! Reconstruction network: shared-weight temporal encoder, graph-attention
//! propagator over node tokens, and temporal decoder.

pub mod checkpoint;
pub mod layers;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::graph::FacadeGraph;
use crate::num::kernels::Neighborhoods;
use crate::num::optim::ParamSet;
use crate::num::scalar::Scalar;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;
use layers::{Conv1dLayer, ConvT1dLayer, ConvUnit, GatLayer, GroupNormLayer, ParamVars, ResBlock};

pub const AUX_FEATURES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub channels: usize,
    pub strided_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { blocks: 4, kernel: 3, dilations: vec![1, 2, 4, 8], channels: 128, strided_layers: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphModuleConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl Default for GraphModuleConfig {
    fn default() -> Self {
        GraphModuleConfig { layers: 4, hidden: 128, heads: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    pub upsample_layers: usize,
    pub residual_blocks: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { upsample_layers: 2, residual_blocks: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Reconstruction window length T.
    pub window: usize,
    pub encoder: EncoderConfig,
    pub graph: GraphModuleConfig,
    pub decoder: DecoderConfig,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    /// Preferred GroupNorm group count (layers whose channel count it does
    /// not divide fall back to a single group).
    #[serde(default = "default_norm_groups")]
    pub norm_groups: usize,
}

fn default_norm_eps() -> f64 {
    1e-5
}
fn default_norm_groups() -> usize {
    8
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 200,
            encoder: EncoderConfig::default(),
            graph: GraphModuleConfig::default(),
            decoder: DecoderConfig::default(),
            norm_eps: default_norm_eps(),
            norm_groups: default_norm_groups(),
        }
    }
}

impl ModelConfig {
    /// Graph-module token width: latent channels plus the five auxiliary
    /// attributes.
    pub fn token_dim(&self) -> usize {
        self.encoder.channels + AUX_FEATURES
    }

    /// Latent temporal length L = T / 2^strided.
    pub fn latent_len(&self) -> usize {
        self.window >> self.encoder.strided_layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.dilations.len() != self.encoder.blocks {
            return Err(Error::config(
                "model.encoder.dilations",
                format!("{} dilations for {} blocks", self.encoder.dilations.len(), self.encoder.blocks),
            ));
        }
        if self.window % (1 << self.encoder.strided_layers) != 0 || self.latent_len() == 0 {
            return Err(Error::config(
                "model.window",
                format!("window {} not compressible by {} stride-2 layers", self.window, self.encoder.strided_layers),
            ));
        }
        if self.graph.hidden != self.encoder.channels {
            return Err(Error::config(
                "model.graph.hidden",
                format!("graph hidden {} must equal latent channels {}", self.graph.hidden, self.encoder.channels),
            ));
        }
        if self.graph.hidden % self.graph.heads != 0 {
            return Err(Error::config(
                "model.graph.heads",
                format!("{} heads do not divide hidden {}", self.graph.heads, self.graph.hidden),
            ));
        }
        if self.decoder.upsample_layers != self.encoder.strided_layers {
            return Err(Error::config(
                "model.decoder.upsample_layers",
                "upsampling must undo the encoder's temporal compression".to_string(),
            ));
        }
        if self.encoder.kernel % 2 != 1 {
            return Err(Error::config("model.encoder.kernel", "kernel must be odd for same-length blocks"));
        }
        Ok(())
    }
}

/// Tape handles of the intermediate stages of one forward pass.
pub struct ForwardVars {
    pub z: Var,
    pub z_tilde: Var,
    pub y_hat: Var,
}

/// The reconstruction network f = decode . propagate . encode.
pub struct ReconModel<S: Scalar> {
    pub cfg: ModelConfig,
    pub graph: Arc<FacadeGraph>,
    pub params: ParamSet<S>,
    pub nbrs: Arc<Neighborhoods>,
    enc_blocks: Vec<ResBlock>,
    enc_down: Vec<ConvUnit>,
    gat_layers: Vec<GatLayer>,
    dec_proj: Conv1dLayer,
    dec_up: Vec<ConvUnit>,
    dec_blocks: Vec<ResBlock>,
    dec_final: Conv1dLayer,
}

impl<S: Scalar> ReconModel<S> {
    pub fn new<R: Rng>(cfg: ModelConfig, graph: Arc<FacadeGraph>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        // attention neighborhoods include self-loops (the stored graph has none)
        let nbrs = Arc::new(Neighborhoods::from_edges(graph.n_nodes(), &graph.edges, true)?);
        let mut ps = ParamSet::new();
        let eps = cfg.norm_eps;
        let groups = cfg.norm_groups;

        // encoder: single-channel dilated residual blocks, then stride-2
        // compressions 1 -> channels and channels -> channels
        let mut enc_blocks = Vec::with_capacity(cfg.encoder.blocks);
        for (i, &dil) in cfg.encoder.dilations.iter().enumerate() {
            enc_blocks.push(ResBlock::new(&mut ps, &format!("encoder.block{i}"), 1, cfg.encoder.kernel, dil, groups, eps, rng)?);
        }
        let mut enc_down = Vec::with_capacity(cfg.encoder.strided_layers);
        for j in 0..cfg.encoder.strided_layers {
            let c_in = if j == 0 { 1 } else { cfg.encoder.channels };
            let conv = Conv1dLayer::new(
                &mut ps,
                &format!("encoder.down{j}.conv"),
                c_in,
                cfg.encoder.channels,
                cfg.encoder.kernel,
                2,
                1,
                (cfg.encoder.kernel - 1) / 2,
                rng,
            )?;
            let norm = GroupNormLayer::new(&mut ps, &format!("encoder.down{j}.norm"), cfg.encoder.channels, groups, eps)?;
            enc_down.push(ConvUnit::Down { conv, norm });
        }

        let mut gat_layers = Vec::with_capacity(cfg.graph.layers);
        for i in 0..cfg.graph.layers {
            let d_in = if i == 0 { cfg.token_dim() } else { cfg.graph.hidden };
            gat_layers.push(GatLayer::new(&mut ps, &format!("graph.layer{i}"), d_in, cfg.graph.hidden, cfg.graph.heads, eps, rng)?);
        }

        let c = cfg.encoder.channels;
        let dec_proj = Conv1dLayer::new(&mut ps, "decoder.proj", c, c, 1, 1, 1, 0, rng)?;
        let mut dec_up = Vec::with_capacity(cfg.decoder.upsample_layers);
        for j in 0..cfg.decoder.upsample_layers {
            // k=4, stride=2, padding=1 realizes exact x2 upsampling
            let conv = ConvT1dLayer::new(&mut ps, &format!("decoder.up{j}.conv"), c, c, 4, 2, 1, rng)?;
            let norm = GroupNormLayer::new(&mut ps, &format!("decoder.up{j}.norm"), c, groups, eps)?;
            dec_up.push(ConvUnit::Up { conv, norm });
        }
        let mut dec_blocks = Vec::with_capacity(cfg.decoder.residual_blocks);
        for i in 0..cfg.decoder.residual_blocks {
            dec_blocks.push(ResBlock::new(&mut ps, &format!("decoder.block{i}"), c, 3, 1, groups, eps, rng)?);
        }
        let dec_final = Conv1dLayer::new(&mut ps, "decoder.final", c, 1, 1, 1, 1, 0, rng)?;

        Ok(ReconModel {
            cfg,
            graph,
            params: ps,
            nbrs,
            enc_blocks,
            enc_down,
            gat_layers,
            dec_proj,
            dec_up,
            dec_blocks,
            dec_final,
        })
    }

    pub fn register(&self, tape: &mut Tape<S>) -> ParamVars {
        ParamVars::register(&self.params, tape)
    }

    /// Temporal encoder applied per node with shared weights:
    /// x [N, T] -> z [N, d, L].
    pub fn encode(&self, tape: &mut Tape<S>, pv: &ParamVars, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.window {
            return Err(Error::shape("encode", format!("expected [N, {}], got {shape:?}", self.cfg.window)));
        }
        let n = shape[0];
        let mut h = tape.reshape(x, vec![n, 1, self.cfg.window])?;
        for block in &self.enc_blocks {
            h = block.apply(tape, pv, h)?;
        }
        for unit in &self.enc_down {
            h = unit.apply(tape, pv, h)?;
        }
        Ok(h)
    }

    /// Graph propagation: per latent slice, tokens of latent features plus
    /// auxiliary attributes run through the attention layers (weights shared
    /// across slices). aux is the [N, 5] feature matrix.
    pub fn propagate(&self, tape: &mut Tape<S>, pv: &ParamVars, z: Var, aux: &Tensor<S>) -> Result<Var> {
        let zs = tape.value(z).shape().to_vec();
        if zs.len() != 3 || zs[0] != self.graph.n_nodes() {
            return Err(Error::shape(
                "propagate",
                format!("latent {zs:?} vs graph with {} nodes", self.graph.n_nodes()),
            ));
        }
        let (n, l) = (zs[0], zs[2]);
        let mut h = tape.build_tokens(z, aux)?;
        for layer in &self.gat_layers {
            h = layer.apply(tape, pv, h, &self.nbrs, l)?;
        }
        tape.untokenize(h, n, l)
    }

    /// Temporal decoder: z~ [N, d, L] -> y_hat [N, T].
    pub fn decode(&self, tape: &mut Tape<S>, pv: &ParamVars, z_tilde: Var) -> Result<Var> {
        let zs = tape.value(z_tilde).shape().to_vec();
        if zs.len() != 3 || zs[1] != self.cfg.encoder.channels {
            return Err(Error::shape("decode", format!("expected [N, {}, L], got {zs:?}", self.cfg.encoder.channels)));
        }
        let n = zs[0];
        let mut h = self.dec_proj.apply(tape, pv, z_tilde)?;
        for unit in &self.dec_up {
            h = unit.apply(tape, pv, h)?;
        }
        for block in &self.dec_blocks {
            h = block.apply(tape, pv, h)?;
        }
        let y = self.dec_final.apply(tape, pv, h)?;
        tape.reshape(y, vec![n, self.cfg.window])
    }

    /// Auxiliary node features for a scenario: mask flag 1 iff the node is an
    /// available (observed) sensor.
    pub fn aux_features(&self, direction_deg: f64, scenario: &crate::data::MaskScenario) -> Result<Tensor<S>> {
        let mut flags = vec![false; self.graph.n_nodes()];
        for node in scenario.observed_nodes(&self.graph) {
            flags[node] = true;
        }
        self.graph.node_features(direction_deg, &flags)
    }

    /// Full forward pass over a window sample. Enforces the pipeline fill
    /// contract X (1-P) = 0 before running.
    pub fn forward_on_tape(&self, tape: &mut Tape<S>, pv: &ParamVars, sample: &WindowSample<S>) -> Result<ForwardVars> {
        for (xv, pvv) in sample.x.data().iter().zip(sample.p.data()) {
            if *pvv == S::ZERO && *xv != S::ZERO {
                return Err(Error::Usage(
                    "window sample violates the fill contract: X has non-zero entries where P = 0".to_string(),
                ));
            }
        }
        let aux = self.aux_features(sample.direction_deg, &sample.scenario)?;
        let x = tape.leaf(sample.x.clone());
        let z = self.encode(tape, pv, x)?;
        let z_tilde = self.propagate(tape, pv, z, &aux)?;
        let y_hat = self.decode(tape, pv, z_tilde)?;
        Ok(ForwardVars { z, z_tilde, y_hat })
    }

    /// Inference-only forward returning the reconstructed window.
    pub fn forward(&self, sample: &WindowSample<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::without_finite_checks();
        let pv = self.register(&mut tape);
        let fv = self.forward_on_tape(&mut tape, &pv, sample)?;
        let out = tape.value(fv.y_hat).clone();
        if !out.is_all_finite() {
            return Err(Error::NonFinite { context: "model forward output".to_string() });
        }
        Ok(out)
    }

    /// Layer table: (parameter name, shape, element count).
    pub fn arch_summary(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.numel()))
            .collect()
    }
}
