//! Small pre-norm decoder-only transformer with optional low-rank adapters on
//! the attention projections.

pub mod config;
pub mod forward;
pub mod tokenizer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, TokenizerKind};
pub use forward::{LayerVars, LinearVars, NormVars};
pub use tokenizer::Tokenizer;

use crate::error::{Error, Result};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::Tensor;

/// Low-rank update `x -> (alpha / rank) * x @ down @ up` added to a frozen projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub down: Tensor,
    pub up: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl AdapterPair {
    /// `up` starts at zero so the adapter contributes nothing until trained.
    pub fn new(d_in: usize, d_out: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        AdapterPair {
            down: Tensor::randn(&[d_in, rank], 1.0 / (d_in as f64).sqrt(), rng).with_requires_grad(true),
            up: Tensor::zeros(&[rank, d_out]).with_requires_grad(true),
            rank,
            alpha,
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub adapter: Option<AdapterPair>,
}

impl Linear {
    fn init(d_in: usize, d_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Tensor::randn(&[d_in, d_out], std, rng),
            adapter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gain: Tensor::filled(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerLayer {
    /// The linear maps subject to compression, with their checkpoint names.
    pub fn linears(&self) -> [(&'static str, &Linear); 6] {
        [
            ("attn.q", &self.q),
            ("attn.k", &self.k),
            ("attn.v", &self.v),
            ("attn.o", &self.o),
            ("ffn.in", &self.ffn_in),
            ("ffn.out", &self.ffn_out),
        ]
    }

    pub fn linears_mut(&mut self) -> [(&'static str, &mut Linear); 6] {
        [
            ("attn.q", &mut self.q),
            ("attn.k", &mut self.k),
            ("attn.v", &mut self.v),
            ("attn.o", &mut self.o),
            ("ffn.in", &mut self.ffn_in),
            ("ffn.out", &mut self.ffn_out),
        ]
    }

    pub fn projections(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn projections_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

/// Whether a parameter belongs to the frozen backbone or to an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Backbone,
    Adapter { layer: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<TransformerLayer>,
    pub final_norm: LayerNorm,
    pub head: Tensor,
}

impl Model {
    /// Deterministic initialisation from `cfg.seed`. Backbone weights do not require grad.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim();
        let w_std = 1.0 / (d as f64).sqrt();
        let out_std = w_std / (2.0 * cfg.num_layers as f64).sqrt();
        let tok_emb = Tensor::randn(&[cfg.vocab_size, d], 0.1, &mut rng);
        let pos_emb = Tensor::randn(&[cfg.max_seq_len, d], 0.1, &mut rng);
        let layers = (0..cfg.num_layers)
            .map(|_| TransformerLayer {
                ln1: LayerNorm::new(d),
                q: Linear::init(d, d, w_std, &mut rng),
                k: Linear::init(d, d, w_std, &mut rng),
                v: Linear::init(d, d, w_std, &mut rng),
                o: Linear::init(d, d, out_std, &mut rng),
                ln2: LayerNorm::new(d),
                ffn_in: Linear::init(d, f, w_std, &mut rng),
                ffn_out: Linear::init(f, d, out_std / 2.0, &mut rng),
            })
            .collect();
        let head = Tensor::randn(&[d, cfg.vocab_size], w_std, &mut rng);
        Ok(Model {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            layers,
            final_norm: LayerNorm::new(d),
            head,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Attaches fresh adapters (zero `up`) to the Q, K, V and O projections of every layer.
    pub fn add_adapters(&mut self, rank: usize, alpha: f64, seed: u64) -> Result<()> {
        let d = self.cfg.embed_dim;
        if rank == 0 || rank > d {
            return Err(Error::Config(format!("adapter rank must be in 1..={d}, got {rank}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xada9_7e55);
        for layer in &mut self.layers {
            for lin in layer.projections_mut() {
                lin.adapter = Some(AdapterPair::new(d, d, rank, alpha, &mut rng));
            }
        }
        Ok(())
    }

    pub fn has_adapters(&self) -> bool {
        self.layers.iter().all(|l| l.q.adapter.is_some())
    }

    pub fn adapter_shape(&self) -> Option<(usize, f64)> {
        self.layers
            .first()
            .and_then(|l| l.q.adapter.as_ref())
            .map(|a| (a.rank, a.alpha))
    }

    /// Flags every backbone tensor as trainable or frozen. Adapters are untouched.
    pub fn set_backbone_trainable(&mut self, flag: bool) {
        for (_, kind, t) in self.named_params_mut() {
            if kind == ParamKind::Backbone {
                t.set_requires_grad(flag);
            }
        }
    }

    /// All parameters in a fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let bb = ParamKind::Backbone;
        let mut out = vec![
            ("tok_emb".to_string(), bb, &self.tok_emb),
            ("pos_emb".to_string(), bb, &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.ln1.gain"), bb, &layer.ln1.gain));
            out.push((format!("{p}.ln1.bias"), bb, &layer.ln1.bias));
            out.push((format!("{p}.ln2.gain"), bb, &layer.ln2.gain));
            out.push((format!("{p}.ln2.bias"), bb, &layer.ln2.bias));
            for (name, lin) in layer.linears() {
                out.push((format!("{p}.{name}.weight"), bb, &lin.weight));
                if let Some(a) = &lin.adapter {
                    let kind = ParamKind::Adapter { layer: i };
                    out.push((format!("{p}.{name}.adapter.down"), kind, &a.down));
                    out.push((format!("{p}.{name}.adapter.up"), kind, &a.up));
                }
            }
        }
        out.push(("final_norm.gain".into(), bb, &self.final_norm.gain));
        out.push(("final_norm.bias".into(), bb, &self.final_norm.bias));
        out.push(("head.weight".into(), bb, &self.head));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor)> {
        let bb = ParamKind::Backbone;
        let mut out = vec![
            ("tok_emb".to_string(), bb, &mut self.tok_emb),
            ("pos_emb".to_string(), bb, &mut self.pos_emb),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            let TransformerLayer { ln1, q, k, v, o, ln2, ffn_in, ffn_out } = layer;
            out.push((format!("{p}.ln1.gain"), bb, &mut ln1.gain));
            out.push((format!("{p}.ln1.bias"), bb, &mut ln1.bias));
            out.push((format!("{p}.ln2.gain"), bb, &mut ln2.gain));
            out.push((format!("{p}.ln2.bias"), bb, &mut ln2.bias));
            let linears = [
                ("attn.q", q),
                ("attn.k", k),
                ("attn.v", v),
                ("attn.o", o),
                ("ffn.in", ffn_in),
                ("ffn.out", ffn_out),
            ];
            for (name, lin) in linears {
                out.push((format!("{p}.{name}.weight"), bb, &mut lin.weight));
                if let Some(a) = &mut lin.adapter {
                    let kind = ParamKind::Adapter { layer: i };
                    out.push((format!("{p}.{name}.adapter.down"), kind, &mut a.down));
                    out.push((format!("{p}.{name}.adapter.up"), kind, &mut a.up));
                }
            }
        }
        out.push(("final_norm.gain".into(), bb, &mut self.final_norm.gain));
        out.push(("final_norm.bias".into(), bb, &mut self.final_norm.bias));
        out.push(("head.weight".into(), bb, &mut self.head));
        out
    }

    /// Parameter names in the order a full forward pass registers them on a tape
    /// (embedding, then each layer, then the output head).
    pub fn bind_order_names(&self) -> Vec<String> {
        let mut out = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push(format!("{p}.ln1.gain"));
            out.push(format!("{p}.ln1.bias"));
            for (name, lin) in layer.linears() {
                if name == "ffn.in" {
                    out.push(format!("{p}.ln2.gain"));
                    out.push(format!("{p}.ln2.bias"));
                }
                out.push(format!("{p}.{name}.weight"));
                if lin.adapter.is_some() {
                    out.push(format!("{p}.{name}.adapter.down"));
                    out.push(format!("{p}.{name}.adapter.up"));
                }
            }
        }
        out.extend(["final_norm.gain", "final_norm.bias", "head.weight"].map(String::from));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        let mut ck = Checkpoint::new();
        let tok = match c.tokenizer {
            TokenizerKind::Byte => 0.0,
            TokenizerKind::Word => 1.0,
        };
        let meta = vec![
            c.vocab_size as f64,
            c.embed_dim as f64,
            c.num_layers as f64,
            c.num_heads as f64,
            c.ffn_mult as f64,
            c.max_seq_len as f64,
            c.seed as f64,
            tok,
        ];
        ck.push("meta.model", Tensor::new(vec![meta.len()], meta).expect("meta shape"));
        if let Some((rank, alpha)) = self.adapter_shape() {
            ck.push("meta.adapter", Tensor::new(vec![2], vec![rank as f64, alpha]).expect("shape"));
        }
        for (name, _, t) in self.named_params() {
            ck.push(name, Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck.require("meta.model")?.data();
        if meta.len() != 8 || meta.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Format("malformed meta.model entry".into()));
        }
        let u = |i: usize| meta[i] as usize;
        let cfg = ModelConfig {
            vocab_size: u(0),
            embed_dim: u(1),
            num_layers: u(2),
            num_heads: u(3),
            ffn_mult: u(4),
            max_seq_len: u(5),
            seed: meta[6] as u64,
            tokenizer: if meta[7] == 0.0 { TokenizerKind::Byte } else { TokenizerKind::Word },
        };
        let mut model = Model::init(&cfg)?;
        if let Some(a) = ck.get("meta.adapter") {
            let (rank, alpha) = (a.data()[0] as usize, a.data()[1]);
            model.add_adapters(rank, alpha, cfg.seed)?;
        }
        for (name, _, t) in model.named_params_mut() {
            let src = ck.require(&name)?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "entry {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.cfg.max_seq_len {
            return Err(Error::Input(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.cfg.max_seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn check_layer(&self, j: usize) -> Result<()> {
        if j >= self.num_layers() {
            return Err(Error::Index(format!(
                "layer {j} out of range for a {}-layer model",
                self.num_layers()
            )));
        }
        Ok(())
    }
}

/// Mean squared difference of layer-`j` outputs of two models fed the same calibration tokens.
pub fn layer_output_mse(
    original: &Model,
    compressed: &Model,
    calib: &[Vec<usize>],
    j: usize,
) -> Result<f64> {
    if original.cfg != compressed.cfg {
        return Err(Error::Contract("models do not share a configuration".into()));
    }
    if calib.is_empty() {
        return Err(Error::Contract("calibration set is empty".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in calib {
        let a = original.forward_to_layer(seq, j)?;
        let b = compressed.forward_to_layer(seq, j)?;
        sum += sq_diff_sum(a.data(), b.data());
        count += a.numel();
    }
    Ok(sum / count as f64)
}

pub(crate) fn sq_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            num_layers: 3,
            num_heads: 2,
            max_seq_len: 8,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_frozen() {
        let a = Model::init(&small()).unwrap();
        let b = Model::init(&small()).unwrap();
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        assert!(a.named_params().iter().all(|(_, _, t)| !t.requires_grad()));
    }

    #[test]
    fn checkpoint_round_trip_with_adapters() {
        let mut m = Model::init(&small()).unwrap();
        m.add_adapters(2, 4.0, 9).unwrap();
        let ck = m.to_checkpoint();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes(), ck.to_bytes());
        assert_eq!(back.adapter_shape(), Some((2, 4.0)));
    }

    #[test]
    fn mse_identity_and_config_mismatch() {
        let m = Model::init(&small()).unwrap();
        let calib = vec![vec![1, 2, 3], vec![4, 5]];
        assert_eq!(layer_output_mse(&m, &m.clone(), &calib, 1).unwrap(), 0.0);
        let other = Model::init(&ModelConfig { seed: 5, ..small() }).unwrap();
        assert!(matches!(layer_output_mse(&m, &other, &calib, 1), Err(Error::Contract(_))));
        assert!(matches!(layer_output_mse(&m, &m, &[], 1), Err(Error::Contract(_))));
    }

    #[test]
    fn sq_diff_hand_case() {
        assert_eq!(sq_diff_sum(&[1.0], &[3.0]), 4.0);
    }
}
