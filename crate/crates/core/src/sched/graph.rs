use std::fmt;
use std::ops::Range;

use super::workload::WorkloadSpec;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Forward,
    Backward,
}

/// One (batch, layer) computation in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Square {
    pub batch: usize,
    pub layer: usize,
    pub phase: Phase,
}

impl Square {
    pub const fn fwd(batch: usize, layer: usize) -> Self {
        Square { batch, layer, phase: Phase::Forward }
    }

    pub const fn bwd(batch: usize, layer: usize) -> Self {
        Square { batch, layer, phase: Phase::Backward }
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.phase {
            Phase::Forward => "fwd",
            Phase::Backward => "bwd",
        };
        write!(f, "{p}({}, {})", self.batch, self.layer)
    }
}

/// Sizes of one layer column; squares in a column share its weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub weight_bytes: f64,
    pub bits: u32,
    pub fwd_macs: f64,
    pub bwd_macs: f64,
    pub retained_bytes: f64,
    pub hidden_bytes: f64,
    pub grad_bytes: f64,
}

/// Batches x layers grid of squares. Forward rows span columns
/// `0..=exit_layer`; backward rows span `update`, right to left.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeGraph {
    pub num_batches: usize,
    pub columns: Vec<Column>,
    pub exit_layer: usize,
    pub update: Range<usize>,
}

/// Backward costs twice the forward MACs (input and adapter gradients).
pub const BACKWARD_MAC_FACTOR: f64 = 2.0;

pub fn build_graph(w: &WorkloadSpec) -> Result<ComputeGraph> {
    w.validate()?;
    let columns = w.layers[..=w.exit_layer]
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let mut weight_bytes = l.weight_bytes;
            let mut fwd_macs = l.fwd_macs;
            if j == w.exit_layer {
                // the output head runs at 8-bit reference precision
                weight_bytes += w.head_weight_bytes;
                fwd_macs += w.head_macs * 8.0 / l.bits as f64;
            }
            Column {
                weight_bytes,
                bits: l.bits,
                fwd_macs,
                bwd_macs: BACKWARD_MAC_FACTOR * fwd_macs,
                retained_bytes: l.retained_bytes,
                hidden_bytes: l.hidden_bytes,
                grad_bytes: if w.update.contains(&j) { l.grad_bytes } else { 0.0 },
            }
        })
        .collect();
    Ok(ComputeGraph {
        num_batches: w.num_batches,
        columns,
        exit_layer: w.exit_layer,
        update: w.update.clone(),
    })
}

impl ComputeGraph {
    /// Squares in the forward rows.
    pub fn forward_squares(&self) -> usize {
        self.num_batches * self.columns.len()
    }

    pub fn num_squares(&self) -> usize {
        self.num_batches * (self.columns.len() + self.update.len())
    }

    /// Distinct weight groups, one per column.
    pub fn weight_groups(&self) -> usize {
        self.columns.len()
    }

    pub fn contains(&self, s: &Square) -> bool {
        s.batch < self.num_batches
            && match s.phase {
                Phase::Forward => s.layer <= self.exit_layer,
                Phase::Backward => self.update.contains(&s.layer),
            }
    }

    /// Squares whose completion `s` needs.
    pub fn dependencies(&self, s: &Square) -> Vec<Square> {
        match s.phase {
            Phase::Forward if s.layer > 0 => vec![Square::fwd(s.batch, s.layer - 1)],
            Phase::Forward => vec![],
            Phase::Backward if s.layer + 1 < self.update.end => {
                vec![Square::bwd(s.batch, s.layer + 1), Square::fwd(s.batch, self.exit_layer)]
            }
            Phase::Backward => vec![Square::fwd(s.batch, self.exit_layer)],
        }
    }

    /// The square that consumes the hidden state (or input gradient) `s` produces.
    pub fn consumer(&self, s: &Square) -> Option<Square> {
        match s.phase {
            Phase::Forward if s.layer < self.exit_layer => Some(Square::fwd(s.batch, s.layer + 1)),
            Phase::Forward if self.update.end == self.exit_layer + 1 && !self.update.is_empty() => {
                Some(Square::bwd(s.batch, self.exit_layer))
            }
            Phase::Forward => None,
            Phase::Backward if s.layer > self.update.start => Some(Square::bwd(s.batch, s.layer - 1)),
            Phase::Backward => None,
        }
    }

    pub fn total_weight_bytes(&self) -> f64 {
        self.columns.iter().map(|c| c.weight_bytes).sum()
    }

    pub fn total_grad_bytes(&self) -> f64 {
        self.columns.iter().map(|c| c.grad_bytes).sum()
    }

    fn forward_row(&self) -> Range<usize> {
        0..self.exit_layer + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Traversal {
    /// Each batch runs its whole row before the next batch starts.
    RowByRow,
    /// Blocks of `block` batches advance column by column, sharing each
    /// column's weights across the block.
    MixedColumnRow { block: usize },
}

impl fmt::Display for Traversal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Traversal::RowByRow => write!(f, "row_by_row"),
            Traversal::MixedColumnRow { block } => write!(f, "mixed_column_row({block})"),
        }
    }
}

impl Traversal {
    pub fn block(&self) -> usize {
        match self {
            Traversal::RowByRow => 1,
            Traversal::MixedColumnRow { block } => *block,
        }
    }

    /// Visit order over every square of `g`.
    pub fn order(&self, g: &ComputeGraph) -> Vec<Square> {
        let c = self.block().max(1);
        let mut out = Vec::with_capacity(g.num_squares());
        for start in (0..g.num_batches).step_by(c) {
            let batches = start..(start + c).min(g.num_batches);
            for l in g.forward_row() {
                out.extend(batches.clone().map(|b| Square::fwd(b, l)));
            }
            for l in g.update.clone().rev() {
                out.extend(batches.clone().map(|b| Square::bwd(b, l)));
            }
        }
        out
    }

    /// Row-by-row plus mixed blocks of 2, 4, 8, ... and `num_batches` itself.
    pub fn candidates(num_batches: usize) -> Vec<Traversal> {
        let mut out = vec![Traversal::RowByRow];
        let mut c = 2;
        while c < num_batches {
            out.push(Traversal::MixedColumnRow { block: c });
            c *= 2;
        }
        if num_batches > 1 {
            out.push(Traversal::MixedColumnRow { block: num_batches });
        }
        out
    }
}
