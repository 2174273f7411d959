//! Attention-based sequencing policy and its REINFORCE training loop.

pub mod infer;
pub mod model;
pub mod train;

pub use model::{
    decode, decode_step, decoder_cache, encode, featurize, relu_margin, step_probabilities, Bound, Decode, Features, ModelDims,
    PolicyParams, LOGIT_CLIP,
};
pub use infer::greedy_decode;
pub use train::{
    greedy_costs, greedy_rollout, order_log_prob, reinforce_train, sample_rollout, sample_rollout_traced, train_batch,
    EpochRecord, Rollout, TrainHyper, TrainOutcome,
};

/// Double-precision policy.
pub type Policy64 = PolicyParams<f64>;
/// Single-precision policy.
pub type Policy32 = PolicyParams<f32>;
