//! Weight tensors, architectures, compressed triplets and the `MDL1` format.

mod arch;
pub mod mdl1;
mod posterior;
mod tensor;
mod triplet;

pub use arch::{ActShape, ArchSpec, ParamRole, ParamSpec, Stage};
pub use mdl1::{load_model, save_model};
pub use posterior::{NoiseSpec, StochasticPosterior};
pub use tensor::{weight_range, Granularity, LayerTensor, Model};
pub use triplet::{decode_into, decode_weights, CompressedTriplet, LayerTriplet};

pub(crate) use triplet::ceil_log2;
