use std::fmt;

use crate::error::{Error, Result};

/// Fractions of one tensor class held in SRAM, DRAM and SSD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub sram: f64,
    pub dram: f64,
    pub ssd: f64,
}

impl Split {
    pub const fn new(sram: f64, dram: f64, ssd: f64) -> Self {
        Split { sram, dram, ssd }
    }

    pub const DRAM: Split = Split::new(0.0, 1.0, 0.0);

    fn check(&self, what: &str) -> Result<()> {
        let ok = [self.sram, self.dram, self.ssd].iter().all(|f| (0.0..=1.0).contains(f));
        if !ok || (self.sram + self.dram + self.ssd - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{what} fractions must lie in [0, 1] and sum to 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.sram, self.dram, self.ssd)
    }
}

/// Where weights (`w`), activations (`a`) and gradients (`g`) live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementPolicy {
    pub w: Split,
    pub a: Split,
    pub g: Split,
}

impl PlacementPolicy {
    pub fn new(w: Split, a: Split, g: Split) -> Result<Self> {
        w.check("weight")?;
        a.check("activation")?;
        g.check("gradient")?;
        Ok(PlacementPolicy { w, a, g })
    }

    pub fn all_dram() -> Self {
        PlacementPolicy {
            w: Split::DRAM,
            a: Split::DRAM,
            g: Split::DRAM,
        }
    }
}

impl fmt::Display for PlacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w={} a={} g={}", self.w, self.a, self.g)
    }
}

/// Every split on a grid of `1/divisions`, ordered lexicographically by (sram, dram).
pub fn split_grid(divisions: u32) -> Vec<Split> {
    let d = divisions as f64;
    let mut out = Vec::new();
    for i in 0..=divisions {
        for j in 0..=divisions - i {
            let k = divisions - i - j;
            out.push(Split::new(i as f64 / d, j as f64 / d, k as f64 / d));
        }
    }
    out
}
