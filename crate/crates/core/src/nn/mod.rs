//! Training and evaluation.

mod data;
mod eval;
pub(crate) mod net;
mod train;

pub use data::{randomized_count, Dataset, MnistSplit};
pub use eval::{evaluate_01, evaluate_stochastic, ErrorEstimate, Evaluator};
pub use train::{train, train_from, BatchSampler, GradientEngine, Sgd, TrainConfig};
pub(crate) use train::{apply_masks, zero_masked};
