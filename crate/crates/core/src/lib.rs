//! Compression-based generalization certificates for neural networks.
//!
//! A trained network is pruned and quantized into a `(S, C, Q)` triplet
//! (support, codebook, assignments), the triplet is encoded losslessly and
//! its measured size, together with the robustness of the network to
//! Gaussian weight noise, is turned into a PAC-Bayes bound on test error.
//!
//! Layout:
//!
//! * [`model`] weight tensors, architectures, triplets and the `MDL1` format
//! * [`nn`] deterministic SGD training and 0-1 / stochastic evaluation
//! * [`codec`] pruning, codebook quantization, arithmetic coding, `CMP1`
//! * [`bound`] Catoni bound, code-length and Gaussian-mixture KL terms
//! * [`entropy`] the entropy lower bound for overfitting estimators
//! * [`pipeline`] end-to-end certify runs, label-randomization sweeps, reports

pub mod bound;
pub mod codec;
pub mod entropy;
mod error;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
mod wire;

pub use error::{Error, Result};

pub use bound::{BoundReport, CatoniParams, LengthPrior, PriorSpec};
pub use codec::{CodedSizes, PruneConfig, QuantizeConfig};
pub use entropy::OverfitStats;
pub use model::{
    ArchSpec, CompressedTriplet, LayerTensor, LayerTriplet, Model, Stage, StochasticPosterior,
};
pub use nn::{Dataset, ErrorEstimate, TrainConfig};
