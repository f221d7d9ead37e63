//! Learned differentiable latency loss.
//!
//! Each layer's column of the architecture matrix is embedded by its own
//! linear map `W_l` (`E x K`), the `L` embeddings are concatenated and a
//! three-layer ReLU MLP regresses the latency. Because the embedding is
//! linear per layer, relaxed matrices interpolate between the embeddings of
//! the one-hot architectures the model was trained on.

mod eval;
mod model;
mod train;

pub use eval::{evaluate, evaluate_predictor, EvalReport, LatencyPredictor};
pub(crate) use model::value_and_grad;
pub use model::{embed, grad_arch, grad_arch_check, predict, HwLossModel, Scaler, MODEL_FORMAT};
pub use train::{train, train_with_history, EpochStats, TrainConfig};
