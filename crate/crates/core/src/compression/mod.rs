//! Fake quantization, magnitude pruning, per-layer sensitivity profiling and
//! the sensitivity-driven compression policy.

pub mod apply;
pub mod policy;
pub mod prune;
pub mod quant;
pub mod sensitivity;

pub use apply::{apply_policy, compress_layer};
pub use policy::{
    assign_bits, assign_sparsity, assign_sparsity_with, CompressionPolicy, LayerPolicy,
    LayerSensitivity, SparsityRule, P_MAX,
};
pub use prune::{magnitude_prune, prune_tensor};
pub use quant::{fake_quantize, quantize_tensor};
pub use sensitivity::profile_sensitivity;
