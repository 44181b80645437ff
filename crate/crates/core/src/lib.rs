//! Desk-scale toolkit for adapting small decoder-only language models under
//! edge-device constraints: sensitivity-driven per-layer compression,
//! early-exit tuning with a bounded backpropagation window, exit voting, and
//! an analytical offload scheduler for an SRAM/DRAM/SSD memory hierarchy.

pub mod compression;
pub mod error;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod sched;
pub mod tensor;
pub mod tuning;

pub use error::{Error, Result};
