//! Analytical offload scheduler for tuning on an SRAM/DRAM/SSD hierarchy.
//!
//! A workload becomes a grid of (batch, layer) squares. A schedule fixes the
//! visit order, where each tensor class lives, and whether the four transfer
//! channels overlap with compute. Every grid candidate is validated by
//! simulation and priced block by block.

pub mod cost;
pub mod graph;
pub mod hardware;
pub mod placement;
pub mod report;
pub mod search;
pub mod sim;
pub mod workload;

pub use cost::{block_latency, channel_times, Block};
pub use graph::{build_graph, ComputeGraph, Phase, Square, Traversal};
pub use hardware::HardwareSpec;
pub use placement::{PlacementPolicy, Split};
pub use report::{speedup_report, SpeedupReport, SpeedupRow, Variant};
pub use search::{search_schedule, Candidate, Schedule, SearchOptions, SearchResult};
pub use sim::{validate_order, validate_prefix, validate_traversal, Constraint, Violation};
pub use workload::{LayerLoad, WorkloadShape, WorkloadSpec};
