use crate::{Error, Result};

/// Binary relative entropy `kl(q ‖ p)` in nats, with `0 ln 0 = 0`.
pub fn kl_bernoulli(q: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// Largest `p ∈ [ē, 1]` with `M · kl(ē ‖ p) ≤ ln(1/ε)`, where `ē` is the mean
/// of `M` i.i.d. `[0, 1]`-valued draws. Found by bisection; the returned value
/// is the upper end of the final bracket.
pub fn mc_loss_bound(per_draw_errors: &[f64], epsilon: f64) -> Result<f64> {
    if per_draw_errors.is_empty() {
        return Err(Error::InvalidInput("Monte-Carlo bound needs at least one draw".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("confidence {epsilon} outside (0, 1)")));
    }
    if let Some(e) = per_draw_errors.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::InvalidInput(format!("per-draw error {e} outside [0, 1]")));
    }
    let m = per_draw_errors.len() as f64;
    let mean = (per_draw_errors.iter().sum::<f64>() / m).clamp(0.0, 1.0);
    let budget = (1.0 / epsilon).ln() / m;
    if mean >= 1.0 || kl_bernoulli(mean, 1.0) <= budget {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (mean, 1.0);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(mean, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_and_empty() {
        assert_eq!(mc_loss_bound(&[1.0, 1.0], 0.01).unwrap(), 1.0);
        assert!(mc_loss_bound(&[], 0.01).is_err());
        assert!(mc_loss_bound(&[1.5], 0.01).is_err());
    }

    #[test]
    fn zero_mean_closed_form() {
        let draws = vec![0.0; 1000];
        let expect = 1.0 - 0.01f64.powf(1.0 / 1000.0);
        let got = mc_loss_bound(&draws, 0.01).unwrap();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        assert!((got - 0.004595).abs() < 1e-6);
    }

    #[test]
    fn approaches_the_mean() {
        let mut prev = f64::INFINITY;
        for m in [100usize, 10_000, 1_000_000] {
            let draws: Vec<f64> = (0..m).map(|i| if i % 5 == 0 { 0.3 } else { 0.1 }).collect();
            let mean = draws.iter().sum::<f64>() / m as f64;
            let b = mc_loss_bound(&draws, 0.01).unwrap();
            assert!(b >= mean);
            assert!(b - mean < prev);
            // Pinsker: kl(q ‖ p) ≥ 2(p − q)².
            assert!(b - mean <= ((1.0f64 / 0.01).ln() / (2.0 * m as f64)).sqrt());
            prev = b - mean;
        }
    }
}
