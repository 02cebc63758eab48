//! Lossy compression (pruning, codebook quantization) and the lossless
//! `CMP1` encoding whose measured size enters the bound.

pub mod arith;
mod cmp1;
mod prune;
mod quantize;
pub mod varint;

pub use cmp1::{
    coded_sizes, decode_triplet, encode_triplet, load_triplet, save_triplet, support_delta_bytes, CodedSizes,
    LayerSizes,
};
pub use prune::{magnitude_mask, prune, zeros_for, PruneConfig, RampPoint};
pub use quantize::{fine_tune_codebooks, kmeans, kmeans_pp_init, lloyd, quantize, quantize_layer, KMeans, QuantizeConfig};
