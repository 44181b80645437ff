use std::fmt::Write as _;

use super::graph::build_graph;
use super::hardware::HardwareSpec;
use super::search::{search_schedule, Schedule, SearchOptions};
use super::workload::WorkloadShape;
use crate::compression::CompressionPolicy;
use crate::error::{Error, Result};
use crate::tuning::exit_layers;

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// Full forward and backward through every layer, uncompressed weights.
    Dense,
    /// Random-exit tuning with uncompressed weights.
    Adaptive,
    /// Random-exit tuning with every layer pruned to the target sparsity.
    PruneAdaptive { sparsity: f64 },
    /// Random-exit tuning with per-layer bits and sparsity from a policy.
    PolicyAdaptive { label: String, policy: CompressionPolicy },
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Dense => "dense".into(),
            Variant::Adaptive => "adaptive".into(),
            Variant::PruneAdaptive { .. } => "prune+adaptive".into(),
            Variant::PolicyAdaptive { label, .. } => format!("{label}+adaptive"),
        }
    }

    fn per_layer(&self, shape: &WorkloadShape, num_layers: usize) -> Result<Vec<(u32, f64)>> {
        match self {
            Variant::Dense | Variant::Adaptive => Ok(shape.dense_layers(num_layers)),
            Variant::PruneAdaptive { sparsity } => Ok(vec![(shape.dense_bits, *sparsity); num_layers]),
            Variant::PolicyAdaptive { policy, .. } => {
                let missing = policy.missing_layers(num_layers);
                if !missing.is_empty() || policy.layers.len() != num_layers {
                    return Err(Error::Policy(format!(
                        "policy must cover exactly {num_layers} layers (missing {missing:?})"
                    )));
                }
                Ok(policy.layers.iter().map(|l| (l.bits, l.sparsity)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub variant: String,
    pub avg_bits: f64,
    pub avg_sparsity: f64,
    /// Expected latency of one tuning pass over all batches, seconds.
    pub latency: f64,
    pub speedup: f64,
    /// Best schedule of the deepest exit.
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupReport {
    pub rows: Vec<SpeedupRow>,
}

/// Best latency of each variant relative to the dense baseline. Random-exit
/// variants average the best latency of every exit, as each exit is drawn with
/// equal probability.
pub fn speedup_report(
    shape: &WorkloadShape,
    hw: &HardwareSpec,
    num_layers: usize,
    num_exits: usize,
    variants: &[Variant],
    opts: &SearchOptions,
) -> Result<SpeedupReport> {
    let (exits, window) = exit_layers(num_layers, num_exits)?;
    let mut rows = Vec::new();
    let mut all = vec![Variant::Dense];
    all.extend(variants.iter().filter(|v| **v != Variant::Dense).cloned());
    for v in &all {
        let per_layer = v.per_layer(shape, num_layers)?;
        let runs: Vec<(usize, std::ops::Range<usize>)> = match v {
            Variant::Dense => vec![(num_layers - 1, 0..num_layers)],
            _ => exits.iter().map(|&b| (b, (b + 1).saturating_sub(window)..b + 1)).collect(),
        };
        let mut total = 0.0;
        let mut last = None;
        for (exit, update) in &runs {
            let g = build_graph(&shape.workload(&per_layer, *exit, update.clone())?)?;
            let best = search_schedule(&g, hw, opts)?.best;
            total += best.latency;
            last = Some(best);
        }
        let latency = total / runs.len() as f64;
        let n = per_layer.len() as f64;
        rows.push(SpeedupRow {
            variant: v.name(),
            avg_bits: per_layer.iter().map(|p| p.0 as f64).sum::<f64>() / n,
            avg_sparsity: per_layer.iter().map(|p| p.1).sum::<f64>() / n,
            latency,
            speedup: 0.0,
            schedule: last.expect("at least one run"),
        });
    }
    let base = rows[0].latency;
    for r in &mut rows {
        r.speedup = base / r.latency;
    }
    Ok(SpeedupReport { rows })
}

impl SpeedupReport {
    pub fn row(&self, variant: &str) -> Option<&SpeedupRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tavg_bits\tavg_sparsity\tlatency_s\tspeedup\ttraversal\toverlapping\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.9e}\t{:.4}\t{}\t{}",
                r.variant,
                r.avg_bits,
                r.avg_sparsity,
                r.latency,
                r.speedup,
                r.schedule.traversal,
                r.schedule.overlapping
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>6.2} bits  {:>5.1}% sparse  {:>12.6} s  {:>6.2}x",
                r.variant,
                r.avg_bits,
                100.0 * r.avg_sparsity,
                r.latency,
                r.speedup
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_against_itself_is_one() {
        let shape = WorkloadShape {
            hidden: 64,
            ffn: 256,
            heads: 4,
            vocab: 256,
            tokens_per_batch: 8,
            num_batches: 2,
            ..Default::default()
        };
        let opts = SearchOptions {
            divisions: 2,
            keep_candidates: false,
        };
        let r = speedup_report(&shape, &HardwareSpec::default(), 4, 2, &[Variant::Dense], &opts).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].speedup, 1.0);
        assert!(r.to_tsv().starts_with("variant\t"));
    }
}
