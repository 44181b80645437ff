use std::collections::{HashMap, HashSet};
use std::fmt;

use super::cost::{channel_times, combine, Block};
use super::graph::{ComputeGraph, Phase, Square, Traversal};
use super::hardware::HardwareSpec;
use super::placement::PlacementPolicy;

/// Which rule a schedule breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// (1) a square ran before the squares it depends on.
    Dependency,
    /// (2) too little free SRAM to bring a square's inputs on chip.
    OnChipInputs,
    /// (3) resident bytes exceed a tier's capacity.
    Capacity,
    Duplicate,
    UnknownSquare,
    Incomplete,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::Dependency => "dependency order",
            Constraint::OnChipInputs => "inputs on chip",
            Constraint::Capacity => "memory capacity",
            Constraint::Duplicate => "square computed twice",
            Constraint::UnknownSquare => "square not in graph",
            Constraint::Incomplete => "squares left uncomputed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    /// Index of the offending step in the visit order.
    pub step: usize,
    pub square: Option<Square>,
    pub detail: String,
    /// Bytes over the limit, for capacity-type violations.
    pub excess: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated at step {}", self.constraint, self.step)?;
        if let Some(s) = self.square {
            write!(f, " ({s})")?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Placement-independent facts about one step of a visit order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub square: Square,
    /// Same weight column as the previous step.
    pub continuation: bool,
    pub weight_bytes: f64,
    pub bits: u32,
    pub macs: f64,
    pub act_write: f64,
    pub act_read: f64,
    pub park_write: f64,
    pub park_read: f64,
    pub grad_bytes: f64,
    /// Off-layer activation bytes alive during the step (saved or parked).
    pub live_bytes: f64,
}

/// Steps of `order` up to the first ordering problem, plus that problem.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub steps: Vec<Step>,
    pub order_error: Option<Violation>,
    pub total_weight_bytes: f64,
    pub total_grad_bytes: f64,
}

pub fn compile(graph: &ComputeGraph, order: &[Square], require_complete: bool) -> Compiled {
    let mut done: HashSet<Square> = HashSet::with_capacity(order.len());
    let mut parked: HashMap<Square, f64> = HashMap::new();
    let mut live = 0.0;
    let mut steps = Vec::with_capacity(order.len());
    let mut order_error = None;
    let mut prev_layer = None;
    for (t, sq) in order.iter().enumerate() {
        let fail = |c, detail: String| Violation {
            constraint: c,
            step: t,
            square: Some(*sq),
            detail,
            excess: 0.0,
        };
        if !graph.contains(sq) {
            order_error = Some(fail(Constraint::UnknownSquare, "outside the graph".into()));
            break;
        }
        if done.contains(sq) {
            order_error = Some(fail(Constraint::Duplicate, "already computed".into()));
            break;
        }
        if let Some(missing) = graph.dependencies(sq).into_iter().find(|d| !done.contains(d)) {
            order_error = Some(fail(Constraint::Dependency, format!("{missing} not yet computed")));
            break;
        }
        let col = &graph.columns[sq.layer];
        let trains = graph.update.contains(&sq.layer);
        let (act_write, act_read, macs, grad) = match sq.phase {
            Phase::Forward => (if trains { col.retained_bytes } else { 0.0 }, 0.0, col.fwd_macs, 0.0),
            Phase::Backward => (0.0, col.retained_bytes, col.bwd_macs, col.grad_bytes),
        };
        let park_read = parked.remove(sq).unwrap_or(0.0);
        let park_write = match graph.consumer(sq) {
            Some(c) if order.get(t + 1) != Some(&c) => {
                parked.insert(c, col.hidden_bytes);
                col.hidden_bytes
            }
            _ => 0.0,
        };
        live += act_write + park_write;
        steps.push(Step {
            square: *sq,
            continuation: prev_layer == Some(sq.layer),
            weight_bytes: col.weight_bytes,
            bits: col.bits,
            macs,
            act_write,
            act_read,
            park_write,
            park_read,
            grad_bytes: grad,
            live_bytes: live,
        });
        live -= act_read + park_read;
        done.insert(*sq);
        prev_layer = Some(sq.layer);
    }
    if order_error.is_none() && require_complete && done.len() < graph.num_squares() {
        order_error = Some(Violation {
            constraint: Constraint::Incomplete,
            step: order.len(),
            square: None,
            detail: format!("{} of {} squares computed", done.len(), graph.num_squares()),
            excess: 0.0,
        });
    }
    Compiled {
        steps,
        order_error,
        total_weight_bytes: graph.total_weight_bytes(),
        total_grad_bytes: graph.total_grad_bytes(),
    }
}

/// Resident bytes per tier at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residency {
    pub sram: f64,
    pub dram: f64,
    pub ssd: f64,
}

impl Compiled {
    pub fn residency(&self, step: &Step, p: &PlacementPolicy) -> Residency {
        let (w, g, a) = (self.total_weight_bytes, self.total_grad_bytes, step.live_bytes);
        Residency {
            sram: p.w.sram * w + p.g.sram * g + p.a.sram * a,
            // SSD-resident weights of the active column are staged in DRAM
            dram: p.w.dram * w + p.g.dram * g + p.a.dram * a + p.w.ssd * step.weight_bytes,
            ssd: p.w.ssd * w + p.g.ssd * g + p.a.ssd * a,
        }
    }

    /// First capacity or on-chip violation at or before the ordering error, if any.
    pub fn check(&self, p: &PlacementPolicy, hw: &HardwareSpec) -> Result<Vec<Residency>, Violation> {
        let mut trace = Vec::with_capacity(self.steps.len());
        for (t, step) in self.steps.iter().enumerate() {
            let r = self.residency(step, p);
            let tiers = [
                ("SRAM", r.sram, hw.sram_bytes as f64),
                ("DRAM", r.dram, hw.dram_bytes as f64),
                ("SSD", r.ssd, hw.ssd_bytes as f64),
            ];
            for (name, used, cap) in tiers {
                if used > cap {
                    return Err(Violation {
                        constraint: Constraint::Capacity,
                        step: t,
                        square: Some(step.square),
                        detail: format!("{name} holds {used:.0} of {cap:.0} bytes"),
                        excess: (used - cap) / cap,
                    });
                }
            }
            let free = hw.sram_bytes as f64 - r.sram;
            if free < hw.staging_bytes as f64 {
                return Err(Violation {
                    constraint: Constraint::OnChipInputs,
                    step: t,
                    square: Some(step.square),
                    detail: format!(
                        "{free:.0} bytes of SRAM free, {} needed to stage inputs",
                        hw.staging_bytes
                    ),
                    excess: (hw.staging_bytes as f64 - free) / hw.sram_bytes as f64,
                });
            }
            trace.push(r);
        }
        match &self.order_error {
            Some(v) => Err(v.clone()),
            None => Ok(trace),
        }
    }

    /// The block a step prices as under placement `p`.
    pub fn block(&self, t: usize, p: &PlacementPolicy, hw: &HardwareSpec) -> Block {
        let s = &self.steps[t];
        let streamed = (1.0 - p.w.sram) * s.weight_bytes;
        let room = hw.sram_bytes as f64 - hw.staging_bytes as f64 - self.residency(s, p).sram;
        Block {
            weight_bytes: s.weight_bytes,
            // a column reused by the next step stays on chip when it fits beside the pinned data
            load_weights_sram: !(s.continuation && streamed <= room),
            load_weights_ssd: !s.continuation,
            act_write: s.act_write,
            act_read: s.act_read,
            park_write: s.park_write,
            park_read: s.park_read,
            grad_bytes: s.grad_bytes,
            macs: s.macs,
            bits: s.bits,
        }
    }

    /// Sum of block latencies, and each block's channel terms when `breakdown` is given.
    pub fn price(
        &self,
        p: &PlacementPolicy,
        hw: &HardwareSpec,
        overlapping: bool,
        mut breakdown: Option<&mut Vec<BlockCost>>,
    ) -> f64 {
        let mut total = 0.0;
        for t in 0..self.steps.len() {
            let terms = channel_times(&self.block(t, p, hw), hw, p);
            let t_dec = combine(&terms, overlapping);
            total += t_dec;
            if let Some(b) = breakdown.as_deref_mut() {
                b.push(BlockCost {
                    square: self.steps[t].square,
                    terms,
                    t_dec,
                });
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCost {
    pub square: Square,
    /// Seconds on r_to_sram, w_to_dram, r_to_dram, w_to_ssd, compute.
    pub terms: [f64; 5],
    pub t_dec: f64,
}

/// Full validation of a visit order under a placement.
pub fn validate_order(
    graph: &ComputeGraph,
    order: &[Square],
    p: &PlacementPolicy,
    hw: &HardwareSpec,
) -> Result<Vec<Residency>, Violation> {
    compile(graph, order, true).check(p, hw)
}

/// Like [`validate_order`] but a partial order is acceptable.
pub fn validate_prefix(
    graph: &ComputeGraph,
    order: &[Square],
    p: &PlacementPolicy,
    hw: &HardwareSpec,
) -> Result<Vec<Residency>, Violation> {
    compile(graph, order, false).check(p, hw)
}

pub fn validate_traversal(
    graph: &ComputeGraph,
    traversal: Traversal,
    p: &PlacementPolicy,
    hw: &HardwareSpec,
) -> Result<Vec<Residency>, Violation> {
    validate_order(graph, &traversal.order(graph), p, hw)
}
