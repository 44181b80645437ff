use std::fmt::Write as _;

use super::graph::{ComputeGraph, Traversal};
use super::hardware::HardwareSpec;
use super::placement::{split_grid, PlacementPolicy};
use super::sim::{compile, BlockCost, Violation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub traversal: Traversal,
    pub overlapping: bool,
    pub placement: PlacementPolicy,
    pub blocks: Vec<BlockCost>,
    /// Sum of the blocks' `t_dec`, seconds.
    pub latency: f64,
}

/// One priced grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub traversal: Traversal,
    pub overlapping: bool,
    pub placement: PlacementPolicy,
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Placement fractions are multiples of `1 / divisions`.
    pub divisions: u32,
    /// Keep every priced candidate in the result.
    pub keep_candidates: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            divisions: 10,
            keep_candidates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Schedule,
    pub candidates: Vec<Candidate>,
    pub priced: usize,
    pub rejected: usize,
}

/// Exhaustive search over traversals x placements x overlapping.
///
/// Candidates are visited row-by-row first, then by growing block size, then
/// in lexicographic placement order with overlapping before serial; only a
/// strictly lower latency replaces the incumbent.
pub fn search_schedule(graph: &ComputeGraph, hw: &HardwareSpec, opts: &SearchOptions) -> Result<SearchResult> {
    hw.validate()?;
    if opts.divisions == 0 {
        return Err(Error::Config("placement grid needs at least one division".into()));
    }
    let grid = split_grid(opts.divisions);
    let mut best: Option<(Candidate, usize)> = None;
    let mut candidates = Vec::new();
    let mut tightest: Option<Violation> = None;
    let (mut priced, mut rejected) = (0usize, 0usize);
    let traversals = Traversal::candidates(graph.num_batches);
    let compiled: Vec<_> = traversals
        .iter()
        .map(|t| compile(graph, &t.order(graph), true))
        .collect();

    for (ti, (traversal, prog)) in traversals.iter().zip(&compiled).enumerate() {
        for w in &grid {
            for a in &grid {
                for g in &grid {
                    let placement = PlacementPolicy { w: *w, a: *a, g: *g };
                    if let Err(v) = prog.check(&placement, hw) {
                        rejected += 2;
                        if tightest.as_ref().is_none_or(|t| v.excess < t.excess) {
                            tightest = Some(v);
                        }
                        continue;
                    }
                    for overlapping in [true, false] {
                        let latency = prog.price(&placement, hw, overlapping, None);
                        priced += 1;
                        let c = Candidate {
                            traversal: *traversal,
                            overlapping,
                            placement,
                            latency,
                        };
                        if opts.keep_candidates {
                            candidates.push(c);
                        }
                        if best.as_ref().is_none_or(|(b, _)| latency < b.latency) {
                            best = Some((c, ti));
                        }
                    }
                }
            }
        }
    }

    let Some((c, ti)) = best else {
        let detail = tightest.map_or_else(|| "no candidates".to_string(), |v| v.to_string());
        return Err(Error::Infeasible(format!(
            "no schedule fits the hardware; tightest constraint: {detail}"
        )));
    };
    let mut blocks = Vec::new();
    let latency = compiled[ti].price(&c.placement, hw, c.overlapping, Some(&mut blocks));
    Ok(SearchResult {
        best: Schedule {
            traversal: c.traversal,
            overlapping: c.overlapping,
            placement: c.placement,
            blocks,
            latency,
        },
        candidates,
        priced,
        rejected,
    })
}

/// Prices one fixed schedule choice; `Err` carries the violation.
pub fn price_schedule(
    graph: &ComputeGraph,
    hw: &HardwareSpec,
    traversal: Traversal,
    placement: &PlacementPolicy,
    overlapping: bool,
) -> Result<Schedule> {
    hw.validate()?;
    let prog = compile(graph, &traversal.order(graph), true);
    prog.check(placement, hw)
        .map_err(|v| Error::Infeasible(v.to_string()))?;
    let mut blocks = Vec::new();
    let latency = prog.price(placement, hw, overlapping, Some(&mut blocks));
    Ok(Schedule {
        traversal,
        overlapping,
        placement: *placement,
        blocks,
        latency,
    })
}

pub const CANDIDATE_HEADER: &str =
    "traversal\tblock\toverlapping\tw_sram\tw_dram\tw_ssd\ta_sram\ta_dram\ta_ssd\tg_sram\tg_dram\tg_ssd\tlatency_s";

pub fn candidate_line(c: &Candidate) -> String {
    let kind = match c.traversal {
        Traversal::RowByRow => "row_by_row",
        Traversal::MixedColumnRow { .. } => "mixed_column_row",
    };
    let p = &c.placement;
    format!(
        "{kind}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        c.traversal.block(),
        c.overlapping,
        p.w.sram,
        p.w.dram,
        p.w.ssd,
        p.a.sram,
        p.a.dram,
        p.a.ssd,
        p.g.sram,
        p.g.dram,
        p.g.ssd,
        c.latency
    )
}

/// Tab-separated dump of every priced candidate, header first.
pub fn candidates_tsv(cands: &[Candidate]) -> String {
    let mut s = String::from(CANDIDATE_HEADER);
    s.push('\n');
    for c in cands {
        s.push_str(&candidate_line(c));
        s.push('\n');
    }
    s
}

/// Per-block table of a schedule.
pub fn schedule_tsv(s: &Schedule) -> String {
    let mut out = String::from("step\tsquare\tr_to_sram_s\tw_to_dram_s\tr_to_dram_s\tw_to_ssd_s\tcompute_s\tt_dec_s\n");
    for (i, b) in s.blocks.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            b.square, b.terms[0], b.terms[1], b.terms[2], b.terms[3], b.terms[4], b.t_dec
        );
    }
    out
}

pub fn schedule_summary(s: &Schedule) -> String {
    format!(
        "traversal {}, {} channels, placement {}, {} blocks, latency {:.6e} s",
        s.traversal,
        if s.overlapping { "overlapped" } else { "serial" },
        s.placement,
        s.blocks.len(),
        s.latency
    )
}
