//! Early-exit adapter tuning: exits spread over the backbone, one randomly
//! chosen exit per step with backpropagation confined to the layers just below
//! it, and greedy decoding by cross-exit voting.

pub mod infer;
pub mod plan;
pub mod step;
pub mod vote;

pub use infer::{evaluate_exits, exit_logits, generate, model_nll, DecodeMode, ExitEval};
pub use plan::{build_exit_plan, exit_layers, Exit, ExitHead, ExitPlan, EXIT_BLOCK_BASE};
pub use step::{
    full_backprop_retained, step_gradients, step_params_mut, step_loss, tune_step, tune_step_at, StepGradients, TrainStepRecord,
};
pub use vote::{vote, vote_position, ProbMatrix};
