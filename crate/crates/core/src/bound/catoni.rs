use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `Φ⁻¹_γ(x) = (1 − e^{−γx}) / (1 − e^{−γ})`, via `expm1` so small `γ` keeps
/// full precision.
pub fn phi_inverse(gamma: f64, x: f64) -> f64 {
    (-gamma * x).exp_m1() / (-gamma).exp_m1()
}

/// How `λ` is optimised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaSearch {
    /// Coarse log-spaced scan followed by golden-section refinement on `ln λ`.
    Golden { tolerance: f64 },
    /// Minimum over a log-spaced grid (for verification).
    DenseGrid { points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatoniParams {
    pub n: u64,
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda_lo: f64,
    /// Upper end of the search; `None` means `10 n`.
    pub lambda_hi: Option<f64>,
    pub search: LambdaSearch,
}

impl CatoniParams {
    pub fn new(n: u64, epsilon: f64, alpha: f64) -> Self {
        CatoniParams {
            n,
            epsilon,
            alpha,
            lambda_lo: 1.0,
            lambda_hi: None,
            search: LambdaSearch::Golden { tolerance: 1e-12 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("sample size must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("confidence {} outside (0, 1)", self.epsilon)));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha {} must exceed 1", self.alpha)));
        }
        if self.lambda_lo.is_nan() || self.lambda_lo < 1.0 || self.hi() <= self.lambda_lo {
            return Err(Error::InvalidInput("λ range must satisfy 1 ≤ lo < hi".into()));
        }
        Ok(())
    }

    fn hi(&self) -> f64 {
        self.lambda_hi.unwrap_or(10.0 * self.n as f64)
    }

    /// The bound at a fixed `λ`, before clamping.
    pub fn objective(&self, lambda: f64, train_loss: f64, kl_nats: f64) -> f64 {
        let a = self.alpha;
        let penalty = kl_nats - self.epsilon.ln() + 2.0 * ((a * a * lambda).ln() / a.ln()).ln();
        phi_inverse(lambda / self.n as f64, train_loss + a / lambda * penalty)
    }
}

/// `inf_{λ>1} Φ⁻¹_{λ/n}(L̂ + (α/λ)[KL − ln ε + 2 ln(ln(α²λ)/ln α)])`, clamped to
/// `[0, 1]`. Returns the bound and the minimising `λ`.
pub fn catoni_bound(train_loss_upper: f64, kl_nats: f64, p: &CatoniParams) -> Result<(f64, f64)> {
    p.validate()?;
    if !(0.0..=1.0).contains(&train_loss_upper) {
        return Err(Error::InvalidInput(format!("training loss {train_loss_upper} outside [0, 1]")));
    }
    if !kl_nats.is_finite() {
        return Err(Error::InvalidInput("KL term is not finite".into()));
    }
    let f = |t: f64| p.objective(t.exp(), train_loss_upper, kl_nats);
    let (lo, hi) = (p.lambda_lo.ln(), p.hi().ln());
    let points = match p.search {
        LambdaSearch::Golden { .. } => 4096,
        LambdaSearch::DenseGrid { points } => points.max(2),
    };
    // The open end at λ = 1 is excluded.
    let grid = |i: usize| lo + (hi - lo) * (i as f64 + 1.0) / points as f64;
    let mut best = (f64::INFINITY, f64::NAN, 0usize);
    for i in 0..points {
        let t = grid(i);
        let v = f(t);
        if v.is_finite() && v < best.0 {
            best = (v, t, i);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::InvalidInput("Catoni objective is not finite anywhere in the λ range".into()));
    }
    if let LambdaSearch::Golden { tolerance } = p.search {
        let a = if best.2 == 0 { lo } else { grid(best.2 - 1) };
        let b = grid((best.2 + 1).min(points - 1));
        let (t, v) = golden_section(&f, a, b, tolerance.max(1e-15));
        if v < best.0 {
            best = (v, t, best.2);
        }
    }
    Ok((best.0.clamp(0.0, 1.0), best.1.exp()))
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn phi_inverse_endpoints() {
        for g in [1e-6, 0.01, 1.0, 10.0] {
            assert_eq!(phi_inverse(g, 0.0), 0.0);
            assert!((phi_inverse(g, 1.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_loss_gives_one() {
        let p = CatoniParams::new(60_000, 0.025, 1.05);
        assert_eq!(catoni_bound(1.0, 0.0, &p).unwrap().0, 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(catoni_bound(0.1, 10.0, &CatoniParams::new(0, 0.05, 1.05)).is_err());
        assert!(catoni_bound(0.1, 10.0, &CatoniParams::new(10, 0.05, 1.0)).is_err());
        assert!(catoni_bound(0.1, f64::NAN, &CatoniParams::new(10, 0.05, 1.05)).is_err());
    }

    proptest! {
        #[test]
        fn phi_inverse_increasing(g in 1e-6f64..10.0, x in 0.0f64..0.999) {
            let y = x + 1e-3;
            prop_assert!(phi_inverse(g, x) < phi_inverse(g, y));
            prop_assert!((0.0..=1.0 + 1e-15).contains(&phi_inverse(g, x)));
        }

        #[test]
        fn monotone_in_loss_kl_and_n(l in 0.0f64..0.5, kl in 0.0f64..50_000.0, n in 1_000u64..1_000_000,
                                     dl in 0.0f64..0.2, dkl in 0.0f64..5_000.0, dn in 1u64..1_000_000) {
            let p = CatoniParams::new(n, 0.04, 1.05);
            let (b, _) = catoni_bound(l, kl, &p).unwrap();
            let (bl, _) = catoni_bound(l + dl, kl, &p).unwrap();
            let (bk, _) = catoni_bound(l, kl + dkl, &p).unwrap();
            let (bn, _) = catoni_bound(l, kl, &CatoniParams::new(n + dn, 0.04, 1.05)).unwrap();
            prop_assert!(bl >= b - 1e-12);
            prop_assert!(bk >= b - 1e-12);
            prop_assert!(bn <= b + 1e-12);
        }
    }
}
