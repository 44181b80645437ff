//! End-to-end workflow used by the command-line tool: corpus handling, base
//! model pretraining, and the profile, tune, eval and schedule stages with
//! their on-disk artifacts.

pub mod config;
pub mod data;
pub mod stages;
pub mod train;

pub use config::{PolicyVariant, RunConfig};
pub use data::Dataset;
pub use stages::{
    build_policy, exit_code, run_eval, run_pretrain, run_profile, run_schedule, run_tune, StageReport,
};
pub use train::{full_step, pretrain};
