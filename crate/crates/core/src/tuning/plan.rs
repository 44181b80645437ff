use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LayerNorm, ModelConfig, NormVars};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{Tape, Tensor, Var};

/// Tape block tag for exit head `i` is `EXIT_BLOCK_BASE + i`.
pub const EXIT_BLOCK_BASE: u32 = 3_000_000;

/// Layer norm plus an untied `d x V` projection. Always trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitHead {
    pub norm: LayerNorm,
    pub weight: Tensor,
}

impl ExitHead {
    pub fn new(d: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut norm = LayerNorm::new(d);
        norm.gain.set_requires_grad(true);
        norm.bias.set_requires_grad(true);
        ExitHead {
            norm,
            weight: Tensor::randn(&[d, vocab], 1.0 / (d as f64).sqrt(), rng).with_requires_grad(true),
        }
    }

    /// Logits for hidden state `h`; head tensors are leaves iff `track`.
    pub fn on_tape(&self, tape: &mut Tape, h: Var, track: bool, tag: u32) -> Result<Var> {
        let prev = tape.current_block();
        tape.set_block(Some(tag));
        let (norm, w) = if track {
            (NormVars::bind(tape, &self.norm, true), tape.leaf(self.weight.clone()))
        } else {
            (NormVars::bind(tape, &self.norm, false), tape.constant(self.weight.clone()))
        };
        let n = norm.apply(tape, h);
        let out = n.and_then(|n| tape.matmul(n, w));
        tape.set_block(prev);
        out
    }

    pub fn logits(&self, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let out = self.on_tape(&mut tape, hv, false, EXIT_BLOCK_BASE)?;
        Ok(tape.take_value(out))
    }

    /// `(name suffix, tensor)` in tape registration order.
    pub fn params_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [
            ("norm.gain", &mut self.norm.gain),
            ("norm.bias", &mut self.norm.bias),
            ("weight", &mut self.weight),
        ]
    }

    pub fn params(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("norm.gain", &self.norm.gain),
            ("norm.bias", &self.norm.bias),
            ("weight", &self.weight),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exit {
    pub index: usize,
    /// Zero-based layer whose output feeds this exit.
    pub backbone_layer: usize,
    pub head: ExitHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitPlan {
    pub num_layers: usize,
    /// Layers updated per step, `ceil(L / T)`.
    pub window: usize,
    pub exits: Vec<Exit>,
}

/// Exit attachment layers `ceil((i+1) L / T) - 1` and the window size `ceil(L / T)`.
pub fn exit_layers(num_layers: usize, num_exits: usize) -> Result<(Vec<usize>, usize)> {
    if num_exits < 2 || num_exits >= num_layers {
        return Err(Error::Config(format!(
            "number of exits must satisfy 2 <= T < L (T = {num_exits}, L = {num_layers})"
        )));
    }
    let layers = (0..num_exits)
        .map(|i| ((i + 1) * num_layers).div_ceil(num_exits) - 1)
        .collect();
    Ok((layers, num_layers.div_ceil(num_exits)))
}

/// Builds `num_exits` exits with freshly initialized heads.
pub fn build_exit_plan(cfg: &ModelConfig, num_exits: usize, seed: u64) -> Result<ExitPlan> {
    let (layers, window) = exit_layers(cfg.num_layers, num_exits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe417_4ead);
    let exits = layers
        .into_iter()
        .enumerate()
        .map(|(index, backbone_layer)| Exit {
            index,
            backbone_layer,
            head: ExitHead::new(cfg.embed_dim, cfg.vocab_size, &mut rng),
        })
        .collect();
    Ok(ExitPlan {
        num_layers: cfg.num_layers,
        window,
        exits,
    })
}

impl ExitPlan {
    pub fn num_exits(&self) -> usize {
        self.exits.len()
    }

    /// Layers whose adapters train when exit `i` is chosen.
    pub fn window_of(&self, i: usize) -> Range<usize> {
        let b = self.exits[i].backbone_layer;
        (b + 1).saturating_sub(self.window)..b + 1
    }

    /// Multiply-accumulates of one forward pass of `seq` tokens through exit `i`.
    pub fn forward_macs(&self, cfg: &ModelConfig, i: usize, seq: usize) -> u64 {
        let d = cfg.embed_dim as u64;
        let s = seq as u64;
        let layer = s * cfg.layer_linear_params() as u64 + 2 * s * s * d;
        (self.exits[i].backbone_layer as u64 + 1) * layer + s * d * cfg.vocab_size as u64
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        let meta = vec![self.num_layers as f64, self.exits.len() as f64];
        ck.push("meta.exits", Tensor::new(vec![2], meta).expect("two entries"));
        for e in &self.exits {
            for (name, t) in e.head.params() {
                ck.push(format!("exits.{}.{name}", e.index), t.clone().with_requires_grad(false));
            }
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &ModelConfig) -> Result<Self> {
        let meta = ck.require("meta.exits")?.data();
        if meta.len() != 2 || meta[0] as usize != cfg.num_layers {
            return Err(Error::Format("meta.exits does not match the model".into()));
        }
        let mut plan = build_exit_plan(cfg, meta[1] as usize, 0)?;
        for e in &mut plan.exits {
            for (name, t) in e.head.params_mut() {
                let key = format!("exits.{}.{name}", e.index);
                let src = ck.require(&key)?;
                if src.shape() != t.shape() {
                    return Err(Error::Format(format!("entry {key} has shape {:?}", src.shape())));
                }
                t.data_mut().copy_from_slice(src.data());
            }
        }
        Ok(plan)
    }
}
