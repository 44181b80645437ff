//! Forward passes. Everything runs on a [`Tape`]; eager helpers use a throwaway
//! tape whose leaves are all constants.

use super::{LayerNorm, Linear, Model, TransformerLayer};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Tape block tag for the embedding lookup.
pub const EMBED_BLOCK: u32 = 1_000_000;
/// Tape block tag for the model's own output head.
pub const HEAD_BLOCK: u32 = 2_000_000;

fn bind_tensor(tape: &mut Tape, t: &Tensor, track: bool) -> Var {
    if track {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

impl NormVars {
    pub fn bind(tape: &mut Tape, n: &LayerNorm, track: bool) -> Self {
        NormVars {
            gain: bind_tensor(tape, &n.gain, track),
            bias: bind_tensor(tape, &n.bias, track),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gain, self.bias)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    /// `(down, up, scale)`
    pub adapter: Option<(Var, Var, f64)>,
}

impl LinearVars {
    pub fn bind(tape: &mut Tape, lin: &Linear, track: bool) -> Self {
        LinearVars {
            weight: bind_tensor(tape, &lin.weight, track),
            adapter: lin.adapter.as_ref().map(|a| {
                (
                    bind_tensor(tape, &a.down, track),
                    bind_tensor(tape, &a.up, track),
                    a.scale(),
                )
            }),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let base = tape.matmul(x, self.weight)?;
        match self.adapter {
            None => Ok(base),
            Some((down, up, scale)) => {
                let low = tape.matmul(x, down)?;
                let delta = tape.matmul(low, up)?;
                let delta = tape.scale(delta, scale)?;
                tape.add(base, delta)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub ln1: NormVars,
    pub q: LinearVars,
    pub k: LinearVars,
    pub v: LinearVars,
    pub o: LinearVars,
    pub ln2: NormVars,
    pub ffn_in: LinearVars,
    pub ffn_out: LinearVars,
}

impl LayerVars {
    /// Registers the layer's tensors on `tape`. With `track = false` they are
    /// constants; otherwise each keeps its own `requires_grad` flag.
    pub fn bind(tape: &mut Tape, layer: &TransformerLayer, track: bool) -> Self {
        LayerVars {
            ln1: NormVars::bind(tape, &layer.ln1, track),
            q: LinearVars::bind(tape, &layer.q, track),
            k: LinearVars::bind(tape, &layer.k, track),
            v: LinearVars::bind(tape, &layer.v, track),
            o: LinearVars::bind(tape, &layer.o, track),
            ln2: NormVars::bind(tape, &layer.ln2, track),
            ffn_in: LinearVars::bind(tape, &layer.ffn_in, track),
            ffn_out: LinearVars::bind(tape, &layer.ffn_out, track),
        }
    }

    /// One pre-norm block on a `seq x d` hidden state with causal multi-head attention.
    pub fn forward(&self, tape: &mut Tape, x: Var, num_heads: usize) -> Result<Var> {
        let (_, d) = tape.value(x).dims2()?;
        let hd = d / num_heads;
        let h = self.ln1.apply(tape, x)?;
        let q = self.q.apply(tape, h)?;
        let k = self.k.apply(tape, h)?;
        let v = self.v.apply(tape, h)?;
        let inv = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(num_heads);
        for head in 0..num_heads {
            let qh = tape.slice_cols(q, head * hd, hd)?;
            let kh = tape.slice_cols(k, head * hd, hd)?;
            let vh = tape.slice_cols(v, head * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv)?;
            let probs = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let attn = tape.concat_cols(&heads)?;
        let attn = self.o.apply(tape, attn)?;
        let x = tape.add(x, attn)?;

        let h = self.ln2.apply(tape, x)?;
        let f = self.ffn_in.apply(tape, h)?;
        let f = tape.gelu(f)?;
        let f = self.ffn_out.apply(tape, f)?;
        tape.add(x, f)
    }
}

impl Model {
    /// Token plus learned positional embedding, `seq x d`.
    pub fn embed(&self, tape: &mut Tape, tokens: &[usize], track: bool) -> Result<Var> {
        self.check_tokens(tokens)?;
        let prev = tape_block(tape, EMBED_BLOCK);
        let tok = bind_tensor(tape, &self.tok_emb, track);
        let pos = bind_tensor(tape, &self.pos_emb, track);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let te = tape.gather_rows(tok, tokens)?;
        let pe = tape.gather_rows(pos, &positions)?;
        let out = tape.add(te, pe);
        tape.set_block(prev);
        out
    }

    /// Runs layer `j` on hidden state `x`, binding its weights on the fly.
    pub fn layer_on_tape(&self, tape: &mut Tape, j: usize, x: Var, track: bool) -> Result<Var> {
        self.check_layer(j)?;
        let prev = tape_block(tape, j as u32);
        let vars = LayerVars::bind(tape, &self.layers[j], track);
        let out = vars.forward(tape, x, self.cfg.num_heads);
        tape.set_block(prev);
        out
    }

    /// Final norm and the model's own output head.
    pub fn head_on_tape(&self, tape: &mut Tape, h: Var, track: bool) -> Result<Var> {
        let prev = tape_block(tape, HEAD_BLOCK);
        let norm = NormVars::bind(tape, &self.final_norm, track);
        let w = bind_tensor(tape, &self.head, track);
        let n = norm.apply(tape, h)?;
        let out = tape.matmul(n, w);
        tape.set_block(prev);
        out
    }

    /// Hidden state after layer `j` (zero-based), i.e. the output of block `j`.
    pub fn forward_to_layer(&self, tokens: &[usize], j: usize) -> Result<Tensor> {
        self.check_layer(j)?;
        let mut tape = Tape::new();
        let mut x = self.embed(&mut tape, tokens, false)?;
        for l in 0..=j {
            x = self.layer_on_tape(&mut tape, l, x, false)?;
        }
        Ok(tape.take_value(x))
    }

    /// Output of every layer, in order.
    pub fn layer_outputs(&self, tokens: &[usize]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let mut x = self.embed(&mut tape, tokens, false)?;
        let mut outs = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            x = self.layer_on_tape(&mut tape, l, x, false)?;
            outs.push(tape.value(x).clone());
        }
        Ok(outs)
    }

    pub fn embed_eager(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = self.embed(&mut tape, tokens, false)?;
        Ok(tape.take_value(x))
    }

    /// Applies only layer `j` to a given hidden state.
    pub fn apply_layer(&self, j: usize, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.layer_on_tape(&mut tape, j, xv, false)?;
        Ok(tape.take_value(out))
    }

    pub fn logits_from_hidden(&self, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let out = self.head_on_tape(&mut tape, hv, false)?;
        Ok(tape.take_value(out))
    }

    /// Next-token logits, `seq x vocab`.
    pub fn forward(&self, tokens: &[usize]) -> Result<Tensor> {
        let h = self.forward_to_layer(tokens, self.num_layers() - 1)?;
        self.logits_from_hidden(&h)
    }
}

fn tape_block(tape: &mut Tape, block: u32) -> Option<u32> {
    let prev = tape.current_block();
    tape.set_block(Some(block));
    prev
}

#[cfg(test)]
mod tests {
    use crate::model::{Model, ModelConfig};
    use crate::tensor::softmax;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 256,
            embed_dim: 32,
            num_layers: 8,
            num_heads: 4,
            max_seq_len: 16,
            ..Default::default()
        }
    }

    #[test]
    fn logits_shape_contract() {
        let m = Model::init(&cfg()).unwrap();
        let logits = m.forward(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(logits.shape(), &[5, 256]);
        assert_eq!(m.num_layers(), 8);
        let p = softmax(&logits).unwrap();
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_outputs_chain() {
        let m = Model::init(&cfg()).unwrap();
        let toks = [7, 8, 9, 10];
        let outs = m.layer_outputs(&toks).unwrap();
        for j in 0..7 {
            let next = m.apply_layer(j + 1, &outs[j]).unwrap();
            assert_eq!(next.data(), outs[j + 1].data());
            assert_eq!(m.forward_to_layer(&toks, j).unwrap().data(), outs[j].data());
        }
        // layer 0 output is not the embedding
        let emb = m.embed_eager(&toks).unwrap();
        assert_ne!(emb.data(), outs[0].data());
        assert_eq!(m.apply_layer(0, &emb).unwrap().data(), outs[0].data());
        let full = m.forward(&toks).unwrap();
        assert_eq!(full.data(), m.logits_from_hidden(&outs[7]).unwrap().data());
    }

    #[test]
    fn causal_masking() {
        let m = Model::init(&cfg()).unwrap();
        let a = m.forward(&[1, 2, 3, 4, 5, 6]).unwrap();
        let b = m.forward(&[1, 2, 3, 90, 91, 92]).unwrap();
        for t in 0..3 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn zero_init_adapters_do_not_change_outputs() {
        let m = Model::init(&cfg()).unwrap();
        let mut ma = m.clone();
        ma.add_adapters(4, 8.0, 1).unwrap();
        let toks = [3, 1, 4, 1, 5];
        let a = m.forward(&toks).unwrap();
        let b = ma.forward(&toks).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Model::init(&cfg()).unwrap();
        assert!(m.forward_to_layer(&[1], 8).is_err());
        assert!(m.forward(&[]).is_err());
        assert!(m.forward(&[300]).is_err());
        assert!(m.forward(&[1; 17]).is_err());
    }
}
