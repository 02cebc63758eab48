use serde::{Deserialize, Serialize};

use super::quadrature;
use crate::model::{CompressedTriplet, LayerTriplet};
use crate::codec::CodedSizes;
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Prior over code lengths: uniform over `2^max_bits_log2` lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPrior {
    pub max_bits_log2: u32,
}

impl Default for LengthPrior {
    fn default() -> Self {
        LengthPrior { max_bits_log2: 72 }
    }
}

impl LengthPrior {
    /// `−log2 m(bits)`.
    pub fn neg_log2(&self, bits: u64) -> Result<f64> {
        let fits = self.max_bits_log2 >= 64 || bits <= 1u64 << self.max_bits_log2;
        if bits == 0 || !fits {
            return Err(Error::LengthPrior {
                bits,
                max_bits_log2: self.max_bits_log2,
            });
        }
        Ok(self.max_bits_log2 as f64)
    }
}

/// `|h|_c log 2 − log m(|h|_c)`.
pub fn occam_kl(code_bits: u64, prior: &LengthPrior) -> Result<f64> {
    Ok(code_bits as f64 * LN2 + prior.neg_log2(code_bits)? * LN2)
}

/// `log |Ξ|` for a product of independent discrete choices.
pub fn union_penalty(choices: &[usize]) -> Result<f64> {
    if choices.contains(&0) {
        return Err(Error::InvalidInput("every unioned choice needs at least one option".into()));
    }
    Ok(choices.iter().map(|&c| (c as f64).ln()).sum())
}

/// Quadrature rule for the mixture KL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MixtureQuadrature {
    GaussHermite { order: usize },
    Adaptive { tolerance: f64 },
}

impl Default for MixtureQuadrature {
    fn default() -> Self {
        MixtureQuadrature::Adaptive { tolerance: 1e-13 }
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `KL(N(c_q, σ²) ‖ Σ_j N(c_j, τ²))` against the unnormalised mixture, in nats.
///
/// With `x = c_q + σz` the integrand reduces to
/// `ln(τ/σ) − z²/2 − LSE_j(−(c_q − c_j + σz)² / 2τ²)`, whose `z²` part
/// integrates to exactly `−1/2`; only the log-sum-exp term is integrated
/// numerically. A single component has the closed form
/// `ln(τ/σ) + (σ² + (c_q − c_1)²) / 2τ² − 1/2`.
pub fn gaussian_mixture_kl(c_q: f64, sigma: f64, centers: &[f64], tau: f64, quad: MixtureQuadrature) -> Result<f64> {
    if centers.is_empty() || sigma.is_nan() || sigma <= 0.0 || tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput("mixture KL needs r ≥ 1, σ > 0 and τ > 0".into()));
    }
    if let [c] = centers {
        let d = c_q - c;
        return Ok((tau / sigma).ln() + (sigma * sigma + d * d) / (2.0 * tau * tau) - 0.5);
    }
    let inv = 1.0 / (2.0 * tau * tau);
    let lse = |z: f64| {
        let x = c_q + sigma * z;
        log_sum_exp(centers.iter().map(move |&c| -(x - c) * (x - c) * inv))
    };
    let e_lse = match quad {
        MixtureQuadrature::GaussHermite { order } => quadrature::hermite_expectation(&lse, order),
        MixtureQuadrature::Adaptive { tolerance } => {
            let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mut sorted = centers.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut breaks = vec![0.0];
            breaks.extend(sorted.windows(2).map(|w| (0.5 * (w[0] + w[1]) - c_q) / sigma));
            for c in &sorted {
                breaks.push((c - c_q) / sigma);
            }
            quadrature::adaptive(&|z| pdf(z) * lse(z), -12.0, 12.0, &breaks, tolerance)
        }
    };
    let kl = (tau / sigma).ln() - 0.5 - e_lse;
    if !kl.is_finite() {
        return Err(Error::Precision(format!(
            "mixture KL is not finite for σ = {sigma}, τ = {tau}; try a higher quadrature order"
        )));
    }
    Ok(kl)
}

/// Candidate prior standard deviations for one tensor. `0` stands for the
/// point-mass prior used when the tensor carries no posterior noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TauGrid {
    /// `points` log-spaced values over `[lo, hi] × scale_ℓ`, plus the point mass.
    LogSpaced { points: usize, lo: f64, hi: f64, scales: Vec<f64> },
    /// Explicit values per tensor.
    Explicit { values: Vec<Vec<f64>> },
}

impl TauGrid {
    pub fn values(&self, layer: usize) -> Result<Vec<f64>> {
        match self {
            TauGrid::LogSpaced { points, lo, hi, scales } => {
                let scale = *scales
                    .get(layer)
                    .ok_or_else(|| Error::InvalidInput(format!("no τ scale for tensor {layer}")))?;
                let mut v = vec![0.0];
                let (a, b) = (lo.ln(), hi.ln());
                let n = (*points).max(1);
                for i in 0..n {
                    let t = if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 };
                    v.push(scale * t.exp());
                }
                Ok(v)
            }
            TauGrid::Explicit { values } => values
                .get(layer)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("no τ grid for tensor {layer}"))),
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            TauGrid::LogSpaced { scales, .. } => scales.len(),
            TauGrid::Explicit { values } => values.len(),
        }
    }
}

/// Everything fixed before the data is seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tau_grid: TauGrid,
    pub alpha: f64,
    pub epsilon_pb: f64,
    pub epsilon_mc: f64,
    pub length_prior: LengthPrior,
    pub quadrature: MixtureQuadrature,
}

/// KL decomposition. Bits are primary; `effective_bits` is the left-to-right
/// sum `code + length prior + union + gain-back` and `kl_nats = effective_bits · ln 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBreakdown {
    pub code_bits: u64,
    pub length_prior_bits: f64,
    pub union_bits: f64,
    pub gain_back_bits: f64,
    pub effective_bits: f64,
    pub code_nats: f64,
    pub length_prior_nats: f64,
    pub union_nats: f64,
    pub gain_back_nats: f64,
    pub kl_nats: f64,
    pub layers: Vec<LayerKl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKl {
    pub name: String,
    pub sigma: f64,
    pub tau: f64,
    pub grid_size: usize,
    pub gain_back_nats: f64,
}

impl KlBreakdown {
    pub fn new(code_bits: u64, length_prior_bits: f64, union_nats: f64, gain_back_nats: f64, layers: Vec<LayerKl>) -> Self {
        let union_bits = union_nats / LN2;
        let gain_back_bits = gain_back_nats / LN2;
        let effective_bits = code_bits as f64 + length_prior_bits + union_bits + gain_back_bits;
        KlBreakdown {
            code_bits,
            length_prior_bits,
            union_bits,
            gain_back_bits,
            effective_bits,
            code_nats: code_bits as f64 * LN2,
            length_prior_nats: length_prior_bits * LN2,
            union_nats,
            gain_back_nats,
            kl_nats: effective_bits * LN2,
            layers,
        }
    }
}

/// `Σ_clusters count · KL(N(c_q, σ²) ‖ Σ_j N(c_j, τ²))` for one tensor.
/// `σ = 0` requires the point-mass prior `τ = 0` and contributes nothing.
pub fn layer_mixture_kl(layer: &LayerTriplet, sigma: f64, tau: f64, quad: MixtureQuadrature) -> Result<f64> {
    if sigma == 0.0 || layer.k() == 0 {
        return if tau == 0.0 || layer.k() == 0 {
            Ok(0.0)
        } else {
            Err(Error::PriorViolation(format!(
                "{}: a noiseless posterior needs the point-mass prior",
                layer.name
            )))
        };
    }
    if tau == 0.0 {
        return Ok(f64::INFINITY);
    }
    let centers: Vec<f64> = layer.codebook.iter().map(|&c| f64::from(c)).collect();
    let mut total = 0.0;
    for (q, &count) in layer.cluster_counts().iter().enumerate() {
        if count > 0 {
            total += count as f64 * gaussian_mixture_kl(centers[q], sigma, &centers, tau, quad)?;
        }
    }
    Ok(total)
}

/// Picks, per tensor, the grid value of `τ` minimising the mixture term.
pub fn choose_taus(t: &CompressedTriplet, sigmas: &[f64], prior: &PriorSpec) -> Result<Vec<f64>> {
    check_lengths(t, sigmas, prior)?;
    t.layers
        .iter()
        .zip(sigmas)
        .enumerate()
        .map(|(i, (layer, &sigma))| {
            let mut best = (f64::INFINITY, f64::NAN);
            for tau in prior.tau_grid.values(i)? {
                if sigma == 0.0 && tau != 0.0 && layer.k() > 0 {
                    continue;
                }
                let v = layer_mixture_kl(layer, sigma, tau, prior.quadrature)?;
                if v < best.0 {
                    best = (v, tau);
                }
            }
            if best.1.is_nan() {
                return Err(Error::PriorViolation(format!("{}: no admissible τ in the grid", layer.name)));
            }
            Ok(best.1)
        })
        .collect()
}

fn check_lengths(t: &CompressedTriplet, sigmas: &[f64], prior: &PriorSpec) -> Result<()> {
    if sigmas.len() != t.layers.len() || prior.tau_grid.layers() != t.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tensors, {} noise scales, {} τ grids",
            t.layers.len(),
            sigmas.len(),
            prior.tau_grid.layers()
        )));
    }
    Ok(())
}

/// Code length plus length prior plus union over the τ grids plus the
/// Gaussian-mixture gain-back, for the given `τ` per tensor.
pub fn quantized_kl(t: &CompressedTriplet, sizes: &CodedSizes, sigmas: &[f64], taus: &[f64], prior: &PriorSpec) -> Result<KlBreakdown> {
    check_lengths(t, sigmas, prior)?;
    if taus.len() != t.layers.len() {
        return Err(Error::ShapeMismatch("one τ per tensor is required".into()));
    }
    let mut grid_sizes = Vec::with_capacity(t.layers.len());
    let mut layers = Vec::with_capacity(t.layers.len());
    let mut gain = 0.0;
    for (i, ((layer, &sigma), &tau)) in t.layers.iter().zip(sigmas).zip(taus).enumerate() {
        let grid = prior.tau_grid.values(i)?;
        if !grid.contains(&tau) {
            return Err(Error::PriorViolation(format!("{}: τ = {tau} is not in the declared grid", layer.name)));
        }
        grid_sizes.push(grid.len());
        let g = layer_mixture_kl(layer, sigma, tau, prior.quadrature)?;
        if !g.is_finite() {
            return Err(Error::PriorViolation(format!("{}: τ = {tau} gives an infinite KL", layer.name)));
        }
        gain += g;
        layers.push(LayerKl {
            name: layer.name.clone(),
            sigma,
            tau,
            grid_size: grid.len(),
            gain_back_nats: g,
        });
    }
    let union = union_penalty(&grid_sizes)?;
    let length = prior.length_prior.neg_log2(sizes.raw_compressed_bits)?;
    Ok(KlBreakdown::new(sizes.raw_compressed_bits, length, union, gain, layers))
}
