use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Capacities in bytes, bandwidths in bytes per second, compute in MAC/s at 8 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareSpec {
    pub sram_bytes: u64,
    pub dram_bytes: u64,
    pub ssd_bytes: u64,
    pub bw_dram_to_sram: f64,
    pub bw_sram_to_dram: f64,
    pub bw_ssd_to_dram: f64,
    pub bw_dram_to_ssd: f64,
    pub compute_throughput: f64,
    /// SRAM that must stay free to stream non-resident inputs of a block on chip.
    pub staging_bytes: u64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec {
            sram_bytes: MIB,
            dram_bytes: 8 * GIB,
            ssd_bytes: 128 * GIB,
            bw_dram_to_sram: 25.6e9,
            bw_sram_to_dram: 25.6e9,
            bw_ssd_to_dram: 2e9,
            bw_dram_to_ssd: 1e9,
            compute_throughput: 4e12,
            staging_bytes: 128 * KIB,
        }
    }
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("bw_dram_to_sram", self.bw_dram_to_sram),
            ("bw_sram_to_dram", self.bw_sram_to_dram),
            ("bw_ssd_to_dram", self.bw_ssd_to_dram),
            ("bw_dram_to_ssd", self.bw_dram_to_ssd),
            ("compute_throughput", self.compute_throughput),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sram_bytes == 0 || self.sram_bytes >= self.dram_bytes || self.dram_bytes >= self.ssd_bytes {
            return Err(Error::Config(format!(
                "capacities must satisfy 0 < sram < dram < ssd (got {}, {}, {})",
                self.sram_bytes, self.dram_bytes, self.ssd_bytes
            )));
        }
        if self.staging_bytes >= self.sram_bytes {
            return Err(Error::Config("staging_bytes must be smaller than sram_bytes".into()));
        }
        Ok(())
    }

    /// Channel bandwidths in the order of [`super::cost::CHANNELS`].
    pub fn channel_bandwidths(&self) -> [f64; 4] {
        [
            self.bw_dram_to_sram,
            self.bw_sram_to_dram,
            self.bw_ssd_to_dram,
            self.bw_dram_to_ssd,
        ]
    }
}
