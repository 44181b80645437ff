use super::hardware::HardwareSpec;
use super::placement::PlacementPolicy;
use crate::error::Result;

pub const CHANNELS: [&str; 4] = ["r_to_sram", "w_to_dram", "r_to_dram", "w_to_ssd"];

/// Bytes and work of one computed square.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Block {
    pub weight_bytes: f64,
    /// Stream the non-SRAM part of the weights on chip.
    pub load_weights_sram: bool,
    /// Stage the SSD part of the weights into DRAM first.
    pub load_weights_ssd: bool,
    /// Activations saved for backward (written) or consumed by it (read).
    pub act_write: f64,
    pub act_read: f64,
    /// Hidden-state handoffs parked off chip between non-adjacent steps.
    pub park_write: f64,
    pub park_read: f64,
    /// Gradient accumulator read-modify-write.
    pub grad_bytes: f64,
    pub macs: f64,
    pub bits: u32,
}

/// Seconds spent on each of [`CHANNELS`] and on compute.
pub fn channel_times(block: &Block, hw: &HardwareSpec, p: &PlacementPolicy) -> [f64; 5] {
    let w_sram = if block.load_weights_sram { (1.0 - p.w.sram) * block.weight_bytes } else { 0.0 };
    let w_ssd = if block.load_weights_ssd { p.w.ssd * block.weight_bytes } else { 0.0 };
    let reads = block.act_read + block.park_read;
    let writes = block.act_write + block.park_write;
    let g = block.grad_bytes;
    let bytes = [
        w_sram + (1.0 - p.a.sram) * reads + (1.0 - p.g.sram) * g,
        (1.0 - p.a.sram) * writes + (1.0 - p.g.sram) * g,
        w_ssd + p.a.ssd * reads + p.g.ssd * g,
        p.a.ssd * writes + p.g.ssd * g,
    ];
    let bw = hw.channel_bandwidths();
    [
        bytes[0] / bw[0],
        bytes[1] / bw[1],
        bytes[2] / bw[2],
        bytes[3] / bw[3],
        block.macs * (block.bits as f64 / 8.0) / hw.compute_throughput,
    ]
}

/// Overlapped channels cost the slowest term; serial ones cost their sum.
pub fn combine(terms: &[f64; 5], overlapping: bool) -> f64 {
    if overlapping {
        terms.iter().copied().fold(0.0, f64::max)
    } else {
        terms.iter().sum()
    }
}

pub fn block_latency(
    block: &Block,
    hw: &HardwareSpec,
    placement: &PlacementPolicy,
    overlapping: bool,
) -> Result<f64> {
    hw.validate()?;
    Ok(combine(&channel_times(block, hw, placement), overlapping))
}
