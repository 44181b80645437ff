//! Per-layer bit-width and sparsity allocation from layer sensitivities, and the
//! policy text file.
//!
//! Bits: a layer gets `B + 1` when its quantization sensitivity is at or above
//! the layer mean, `B` otherwise.
//!
//! Sparsity: `p_j = P * L * s_j / sum_i s_i` over all `L` layers. Values above
//! [`P_MAX`] are clamped and the excess is handed to the unclamped layers in
//! proportion to their sensitivity, so the mean stays `P`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prune::check_sparsity;
use super::quant::{check_bits, MAX_BITS};
use crate::error::{Error, Result};

/// Upper clamp for per-layer sparsity.
pub const P_MAX: f64 = 0.95;

pub const POLICY_HEADER: &str = "# edge-llm-policy v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSensitivity {
    pub layer_index: usize,
    pub s_quant: f64,
    pub s_prune: f64,
}

/// How pruning sensitivity maps to sparsity share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityRule {
    /// Share proportional to `s_prune` (the default mapping).
    #[default]
    Proportional,
    /// Share proportional to `1 / s_prune`; ablation variant.
    Inverted,
}

/// Checks that `sens` has exactly one finite, non-negative record per layer and
/// returns them ordered by layer index.
pub fn ordered_sensitivities(sens: &[LayerSensitivity]) -> Result<Vec<LayerSensitivity>> {
    if sens.is_empty() {
        return Err(Error::Contract("no layer sensitivities".into()));
    }
    let mut out = sens.to_vec();
    out.sort_by_key(|s| s.layer_index);
    for (i, s) in out.iter().enumerate() {
        if s.layer_index != i {
            return Err(Error::Contract(format!(
                "sensitivities must cover layers 0..{} exactly once (problem at layer {i})",
                sens.len()
            )));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(s.s_quant) || !ok(s.s_prune) {
            return Err(Error::Contract(format!(
                "layer {i} has invalid sensitivity ({}, {})",
                s.s_quant, s.s_prune
            )));
        }
    }
    Ok(out)
}

/// Per-layer bit-widths, indexed by layer.
pub fn assign_bits(sens: &[LayerSensitivity], base_bits: u32) -> Result<Vec<u32>> {
    check_bits(base_bits)?;
    if base_bits >= MAX_BITS {
        return Err(Error::Config(format!("base bits must leave room for B+1 <= {MAX_BITS}")));
    }
    let sens = ordered_sensitivities(sens)?;
    let sum: f64 = sens.iter().map(|s| s.s_quant).sum();
    let mean = sum / sens.len() as f64;
    Ok(sens
        .iter()
        .map(|s| base_bits + u32::from(s.s_quant >= mean))
        .collect())
}

/// Per-layer sparsities, indexed by layer, with mean equal to `target`.
pub fn assign_sparsity(sens: &[LayerSensitivity], target: f64) -> Result<Vec<f64>> {
    assign_sparsity_with(sens, target, SparsityRule::Proportional)
}

pub fn assign_sparsity_with(
    sens: &[LayerSensitivity],
    target: f64,
    rule: SparsityRule,
) -> Result<Vec<f64>> {
    check_sparsity(target)?;
    if target > P_MAX {
        return Err(Error::Config(format!(
            "target sparsity {target} exceeds the per-layer cap {P_MAX}"
        )));
    }
    let sens = ordered_sensitivities(sens)?;
    let total: f64 = sens.iter().map(|s| s.s_prune).sum();
    if total <= 0.0 {
        return Err(Error::Config(
            "all pruning sensitivities are zero; use a uniform sparsity policy instead".into(),
        ));
    }
    let weights: Vec<f64> = match rule {
        SparsityRule::Proportional => sens.iter().map(|s| s.s_prune).collect(),
        SparsityRule::Inverted => {
            if let Some(s) = sens.iter().find(|s| s.s_prune == 0.0) {
                return Err(Error::Config(format!(
                    "inverted sparsity needs non-zero sensitivities (layer {} is zero)",
                    s.layer_index
                )));
            }
            sens.iter().map(|s| 1.0 / s.s_prune).collect()
        }
    };
    Ok(proportional_allocation(&weights, target))
}

/// Water-filling: share `target * L` in proportion to `weights`, capped at `P_MAX`.
fn proportional_allocation(weights: &[f64], target: f64) -> Vec<f64> {
    let n = weights.len();
    let mut clamped = vec![false; n];
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let budget = target * n as f64 - n_clamped as f64 * P_MAX;
        let free_sum: f64 = weights
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(w, _)| w)
            .sum();
        let n_free = n - n_clamped;
        let p: Vec<f64> = weights
            .iter()
            .zip(&clamped)
            .map(|(&w, &c)| {
                if c {
                    P_MAX
                } else if free_sum > 0.0 {
                    budget * w / free_sum
                } else {
                    // only zero-weight layers remain
                    budget / n_free as f64
                }
            })
            .collect();
        let mut changed = false;
        for j in 0..n {
            if !clamped[j] && p[j] > P_MAX {
                clamped[j] = true;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerPolicy {
    pub layer: usize,
    pub bits: u32,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionPolicy {
    pub base_bits: u32,
    pub target_sparsity: f64,
    /// Sorted by layer index.
    pub layers: Vec<LayerPolicy>,
}

/// Sparsities are stored rounded to the 9 decimal places the policy file keeps.
pub fn canonical_sparsity(p: f64) -> f64 {
    (p * 1e9).round() / 1e9
}

impl CompressionPolicy {
    pub fn new(base_bits: u32, target_sparsity: f64, mut layers: Vec<LayerPolicy>) -> Result<Self> {
        check_bits(base_bits)?;
        if base_bits >= MAX_BITS {
            return Err(Error::Policy(format!("base bits {base_bits} leave no room for B+1")));
        }
        check_sparsity(target_sparsity)?;
        layers.sort_by_key(|l| l.layer);
        for w in layers.windows(2) {
            if w[0].layer == w[1].layer {
                return Err(Error::Policy(format!("layer {} listed twice", w[0].layer)));
            }
        }
        for l in &mut layers {
            if l.bits != base_bits && l.bits != base_bits + 1 {
                return Err(Error::Policy(format!(
                    "layer {} has {} bits; only {base_bits} or {} are allowed",
                    l.layer,
                    l.bits,
                    base_bits + 1
                )));
            }
            check_sparsity(l.sparsity)
                .map_err(|_| Error::Policy(format!("layer {} has sparsity {}", l.layer, l.sparsity)))?;
            l.sparsity = canonical_sparsity(l.sparsity);
        }
        Ok(CompressionPolicy {
            base_bits,
            target_sparsity,
            layers,
        })
    }

    /// Sensitivity-driven policy.
    pub fn from_sensitivities(
        sens: &[LayerSensitivity],
        base_bits: u32,
        target_sparsity: f64,
        rule: SparsityRule,
    ) -> Result<Self> {
        let bits = assign_bits(sens, base_bits)?;
        let sparsity = assign_sparsity_with(sens, target_sparsity, rule)?;
        let layers = bits
            .into_iter()
            .zip(sparsity)
            .enumerate()
            .map(|(layer, (bits, sparsity))| LayerPolicy { layer, bits, sparsity })
            .collect();
        Self::new(base_bits, target_sparsity, layers)
    }

    /// Same bit-width and sparsity everywhere.
    pub fn uniform(num_layers: usize, base_bits: u32, target_sparsity: f64) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|layer| LayerPolicy {
                layer,
                bits: base_bits,
                sparsity: target_sparsity,
            })
            .collect();
        Self::new(base_bits, target_sparsity, layers)
    }

    /// Shuffles this policy's bit-widths and sparsities (independently) across layers.
    pub fn randomized(&self, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits: Vec<u32> = self.layers.iter().map(|l| l.bits).collect();
        let mut sparsity: Vec<f64> = self.layers.iter().map(|l| l.sparsity).collect();
        bits.shuffle(&mut rng);
        sparsity.shuffle(&mut rng);
        let layers = self
            .layers
            .iter()
            .zip(bits.into_iter().zip(sparsity))
            .map(|(l, (bits, sparsity))| LayerPolicy {
                layer: l.layer,
                bits,
                sparsity,
            })
            .collect();
        Self::new(self.base_bits, self.target_sparsity, layers)
    }

    pub fn get(&self, layer: usize) -> Option<&LayerPolicy> {
        self.layers.iter().find(|l| l.layer == layer)
    }

    pub fn average_bits(&self) -> f64 {
        self.layers.iter().map(|l| l.bits as f64).sum::<f64>() / self.layers.len() as f64
    }

    pub fn mean_sparsity(&self) -> f64 {
        self.layers.iter().map(|l| l.sparsity).sum::<f64>() / self.layers.len() as f64
    }

    /// Layers in `0..num_layers` the policy does not cover.
    pub fn missing_layers(&self, num_layers: usize) -> Vec<usize> {
        (0..num_layers).filter(|&j| self.get(j).is_none()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{POLICY_HEADER} B={} P={}\n",
            self.base_bits, self.target_sparsity
        );
        for l in &self.layers {
            let _ = writeln!(s, "{} {} {:.9}", l.layer, l.bits, l.sparsity);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty policy file".into()))?;
        let rest = header
            .strip_prefix(POLICY_HEADER)
            .ok_or_else(|| Error::Format(format!("bad policy header: {header:?}")))?;
        let mut base_bits = None;
        let mut target = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("B=") {
                base_bits = v.parse::<u32>().ok();
            } else if let Some(v) = field.strip_prefix("P=") {
                target = v.parse::<f64>().ok();
            }
        }
        let (Some(base_bits), Some(target)) = (base_bits, target) else {
            return Err(Error::Format(format!("policy header lacks B= or P=: {header:?}")));
        };
        let mut layers = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("policy line {}: {line:?}", n + 2));
            if parts.len() != 3 {
                return Err(bad());
            }
            layers.push(LayerPolicy {
                layer: parts[0].parse().map_err(|_| bad())?,
                bits: parts[1].parse().map_err(|_| bad())?,
                sparsity: parts[2].parse().map_err(|_| bad())?,
            });
        }
        Self::new(base_bits, target, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
