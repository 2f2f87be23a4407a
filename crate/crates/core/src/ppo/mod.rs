//! Rollout collection, advantage estimation, the combined objective, and the
//! training loop.

pub mod gae;
pub mod loss;
pub mod rollout;
pub mod train;

pub use gae::compute_gae;
pub use loss::{
    combined_loss, entropy_node, invariance_loss, ppo_loss, sensitivity_loss, value_loss,
    LossConfig, LossStats, Minibatch,
};
pub use rollout::{collect_rollouts, EnvWorker, RolloutBatch, TrainError, ViewSetup};
pub use train::{
    metrics_without_wall, train, MetricsRecord, NoopHook, TrainConfig, TrainHook, TrainOutput,
};
