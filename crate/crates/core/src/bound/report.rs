use serde::{Deserialize, Serialize};

use super::catoni::{catoni_bound, CatoniParams};
use super::kl::{choose_taus, quantized_kl, KlBreakdown, PriorSpec};
use super::mc::mc_loss_bound;
use crate::codec::CodedSizes;
use crate::model::CompressedTriplet;
use crate::nn::ErrorEstimate;
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "occam-bound-report/1";

/// A certified test-error bound with every input echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema: String,
    pub n: u64,
    pub epsilon_pb: f64,
    pub epsilon_mc: f64,
    pub confidence: f64,
    pub alpha: f64,
    pub draws: usize,
    pub draw_seed: Option<u64>,
    pub per_draw_errors: Vec<f64>,
    pub mean_train_error: f64,
    pub train_loss_upper: f64,
    pub sizes: CodedSizes,
    pub kl: KlBreakdown,
    pub effective_kib: f64,
    pub lambda_star: f64,
    pub bound: f64,
    /// Departures from the reference procedure that affect the certificate's inputs.
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("bound report: {e}")))
    }
}

/// `τ` per tensor is chosen from the declared grid when `taus` is `None`.
pub fn certify(
    t: &CompressedTriplet,
    sizes: &CodedSizes,
    sigmas: &[f64],
    taus: Option<&[f64]>,
    prior: &PriorSpec,
    errors: &ErrorEstimate,
    n: u64,
) -> Result<BoundReport> {
    let draws = if errors.per_draw_errors.is_empty() {
        vec![errors.point_estimate]
    } else {
        errors.per_draw_errors.clone()
    };
    let train_loss_upper = mc_loss_bound(&draws, prior.epsilon_mc)?;
    let taus = match taus {
        Some(t) => t.to_vec(),
        None => choose_taus(t, sigmas, prior)?,
    };
    let kl = quantized_kl(t, sizes, sigmas, &taus, prior)?;
    let params = CatoniParams::new(n, prior.epsilon_pb, prior.alpha);
    let (bound, lambda_star) = catoni_bound(train_loss_upper, kl.kl_nats.max(0.0), &params)?;
    Ok(BoundReport {
        schema: REPORT_SCHEMA.to_string(),
        n,
        epsilon_pb: prior.epsilon_pb,
        epsilon_mc: prior.epsilon_mc,
        confidence: 1.0 - prior.epsilon_pb - prior.epsilon_mc,
        alpha: prior.alpha,
        draws: draws.len(),
        draw_seed: errors.seed,
        mean_train_error: draws.iter().sum::<f64>() / draws.len() as f64,
        per_draw_errors: draws,
        train_loss_upper,
        sizes: sizes.clone(),
        effective_kib: kl.effective_bits / 8192.0,
        kl,
        lambda_star,
        bound,
        notes: Vec::new(),
    })
}
