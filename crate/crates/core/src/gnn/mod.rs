//! Spatial graph neural network: dense algebra, GCN/GAT layers with manual
//! reverse-mode gradients, training, and classification metrics.

pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod train;

pub use layers::{gat_forward, gcn_forward, GatHead};
pub use matrix::Matrix;
pub use metrics::{evaluate, Metrics};
pub use model::{loss_and_grads, model_forward, param_count, ModelConfig, ModelOutput, Params};
pub use train::{train, Checkpoint, EpochRecord, Optimizer, TrainConfig, TrainOutcome};
