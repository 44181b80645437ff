use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer dimensions used to size the offload workload. These describe the
/// deployment-scale model being scheduled, not the desk-scale training model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadShape {
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    pub vocab: usize,
    pub tokens_per_batch: usize,
    pub num_batches: usize,
    /// Bytes per stored activation element.
    pub act_bytes: usize,
    /// Bytes per gradient element.
    pub grad_bytes: usize,
    pub adapter_rank: usize,
    /// Bit-width of uncompressed weights and of the output head.
    pub dense_bits: u32,
}

impl Default for WorkloadShape {
    fn default() -> Self {
        WorkloadShape {
            hidden: 4096,
            ffn: 16384,
            heads: 32,
            vocab: 32000,
            tokens_per_batch: 64,
            num_batches: 4,
            act_bytes: 2,
            grad_bytes: 4,
            adapter_rank: 4,
            dense_bits: 8,
        }
    }
}

/// Per-layer sizes of one (batch, layer) square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLoad {
    pub weight_bytes: f64,
    pub bits: u32,
    pub fwd_macs: f64,
    /// Activations a forward square keeps for its backward square.
    pub retained_bytes: f64,
    /// Hidden state passed between neighbouring squares of a row.
    pub hidden_bytes: f64,
    /// Adapter gradient bytes of the layer.
    pub grad_bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub num_batches: usize,
    pub tokens_per_batch: usize,
    pub layers: Vec<LayerLoad>,
    /// Forward runs through layers `0..=exit_layer`.
    pub exit_layer: usize,
    /// Layers whose adapters are trained (backward squares).
    pub update: Range<usize>,
    pub head_weight_bytes: f64,
    /// Output head MACs at 8-bit reference precision.
    pub head_macs: f64,
}

impl WorkloadShape {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("heads", self.heads),
            ("vocab", self.vocab),
            ("tokens_per_batch", self.tokens_per_batch),
            ("num_batches", self.num_batches),
            ("act_bytes", self.act_bytes),
            ("grad_bytes", self.grad_bytes),
            ("adapter_rank", self.adapter_rank),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("workload {name} must be positive")));
            }
        }
        if !(2..=16).contains(&self.dense_bits) {
            return Err(Error::Config("workload dense_bits must be in [2, 16]".into()));
        }
        Ok(())
    }

    pub fn layer_params(&self) -> f64 {
        let (h, f) = (self.hidden as f64, self.ffn as f64);
        4.0 * h * h + 2.0 * h * f
    }

    /// Sizes one layer stored at `bits` with a fraction `sparsity` of weights removed.
    pub fn layer_load(&self, bits: u32, sparsity: f64) -> LayerLoad {
        let (h, f, t) = (self.hidden as f64, self.ffn as f64, self.tokens_per_batch as f64);
        let heads = self.heads as f64;
        let r = self.adapter_rank as f64;
        let adapter_params = 4.0 * 2.0 * h * r;
        LayerLoad {
            weight_bytes: self.layer_params() * bits as f64 / 8.0 * (1.0 - sparsity),
            bits,
            fwd_macs: t * self.layer_params() + 2.0 * t * t * h + t * adapter_params,
            retained_bytes: t * (7.0 * h + 2.0 * f + heads * t) * self.act_bytes as f64,
            hidden_bytes: t * h * self.act_bytes as f64,
            grad_bytes: adapter_params * self.grad_bytes as f64,
        }
    }

    /// Workload with per-layer `(bits, sparsity)`, forward through `exit_layer`
    /// and backward over `update`.
    pub fn workload(
        &self,
        per_layer: &[(u32, f64)],
        exit_layer: usize,
        update: Range<usize>,
    ) -> Result<WorkloadSpec> {
        self.validate()?;
        let w = WorkloadSpec {
            num_batches: self.num_batches,
            tokens_per_batch: self.tokens_per_batch,
            layers: per_layer.iter().map(|&(b, p)| self.layer_load(b, p)).collect(),
            exit_layer,
            update,
            head_weight_bytes: (self.hidden * self.vocab) as f64 * self.dense_bits as f64 / 8.0,
            head_macs: (self.tokens_per_batch * self.hidden * self.vocab) as f64,
        };
        w.validate()?;
        Ok(w)
    }

    /// Every layer at `dense_bits`, unpruned.
    pub fn dense_layers(&self, num_layers: usize) -> Vec<(u32, f64)> {
        vec![(self.dense_bits, 0.0); num_layers]
    }
}

impl WorkloadSpec {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_batches == 0 || self.layers.is_empty() {
            return Err(Error::Config("workload needs at least one batch and one layer".into()));
        }
        if self.exit_layer >= self.layers.len() {
            return Err(Error::Config(format!(
                "exit layer {} out of range for {} layers",
                self.exit_layer,
                self.layers.len()
            )));
        }
        if self.update.start > self.update.end || self.update.end > self.exit_layer + 1 {
            return Err(Error::Config(format!(
                "update layers {:?} must lie within 0..={}",
                self.update, self.exit_layer
            )));
        }
        for (j, l) in self.layers.iter().enumerate() {
            let sizes = [l.weight_bytes, l.fwd_macs, l.retained_bytes, l.hidden_bytes, l.grad_bytes];
            if sizes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(1..=16).contains(&l.bits) {
                return Err(Error::Config(format!("layer {j} has invalid sizes")));
            }
        }
        Ok(())
    }
}
