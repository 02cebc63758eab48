//! Entropy lower bound for a training-set-dependent classifier.
//!
//! Given expected training error `a` and test error `b` of a learned
//! classifier, `p_n = (1 + b/a)⁻¹`, `q_n = (1 + (1−b)/(1−a))⁻¹`,
//! `l_n = (a + b)/2`, and the entropy of the learned hypothesis is at least
//! `n·g` with `g = ln 2 − l_n h_b(p_n) − (1 − l_n) h_b(q_n)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `−p ln p − (1−p) ln(1−p)` in nats, with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let t = |x: f64| if x == 0.0 { 0.0 } else { -x * x.ln() };
    Ok((t(p) + t(1.0 - p)).min(std::f64::consts::LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitStats {
    pub train_err: f64,
    pub test_err: f64,
    pub p_n: f64,
    pub q_n: f64,
    pub l_n: f64,
    pub n: u64,
    /// A `0/0` or `x/0` boundary rule was used for `p_n` or `q_n`.
    pub boundary_convention: bool,
}

/// `(1 + num/den)⁻¹` with `x/0 → ∞` for `x > 0` and `0/0 → 1`.
fn ratio_form(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        if num == 0.0 {
            (0.5, true)
        } else {
            (0.0, true)
        }
    } else {
        (1.0 / (1.0 + num / den), false)
    }
}

pub fn overfit_stats(train_err: f64, test_err: f64, n: u64) -> Result<OverfitStats> {
    for (what, v) in [("training", train_err), ("test", test_err)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{what} error {v} outside [0, 1]")));
        }
    }
    let (p_n, cp) = ratio_form(test_err, train_err);
    let (q_n, cq) = ratio_form(1.0 - test_err, 1.0 - train_err);
    Ok(OverfitStats {
        train_err,
        test_err,
        p_n,
        q_n,
        l_n: 0.5 * (train_err + test_err),
        n,
        boundary_convention: cp || cq,
    })
}

impl OverfitStats {
    /// `g(p_n, q_n, l_n)` in nats per example, summed as
    /// `l_n (ln 2 − h_b(p_n)) + (1 − l_n)(ln 2 − h_b(q_n))`.
    pub fn g(&self) -> f64 {
        let gap = |p: f64| std::f64::consts::LN_2 - binary_entropy(p).expect("probability in [0, 1]");
        self.l_n * gap(self.p_n) + (1.0 - self.l_n) * gap(self.q_n)
    }
}

/// Lower bound on the entropy of the hypothesis, `n·g`, in nats and bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBound {
    pub stats: OverfitStats,
    pub g_nats: f64,
    pub bound_nats: f64,
    pub bound_bits: f64,
}

pub fn entropy_lower_bound(stats: &OverfitStats) -> EntropyBound {
    let g = stats.g();
    let bound = stats.n as f64 * g;
    EntropyBound {
        stats: *stats,
        g_nats: g,
        bound_nats: bound,
        bound_bits: bound / std::f64::consts::LN_2,
    }
}
