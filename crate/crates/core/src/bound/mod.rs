//! Certified-bound arithmetic.

mod catoni;
mod kl;
mod mc;
pub mod quadrature;
mod report;

pub use catoni::{catoni_bound, phi_inverse, CatoniParams, LambdaSearch};
pub use kl::{
    choose_taus, gaussian_mixture_kl, layer_mixture_kl, occam_kl, quantized_kl, union_penalty, KlBreakdown, LayerKl,
    LengthPrior, MixtureQuadrature, PriorSpec, TauGrid,
};
pub use mc::{kl_bernoulli, mc_loss_bound};
pub use report::{certify, BoundReport, REPORT_SCHEMA};
