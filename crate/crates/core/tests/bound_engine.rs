use occam_core::bound::{
    catoni_bound, certify, gaussian_mixture_kl, mc_loss_bound, occam_kl, quantized_kl, union_penalty, CatoniParams,
    LengthPrior, MixtureQuadrature, PriorSpec, TauGrid,
};
use occam_core::codec::coded_sizes;
use occam_core::model::{CompressedTriplet, LayerTriplet};
use occam_core::nn::ErrorEstimate;

fn grid_oracle(l: f64, kl: f64, n: f64, eps: f64, alpha: f64) -> f64 {
    let hi = (10.0 * n).ln();
    (1..=1_000_000)
        .map(|i| {
            let lambda = (hi * i as f64 / 1e6).exp();
            let x = l + alpha / lambda * (kl - eps.ln() + 2.0 * ((alpha * alpha * lambda).ln() / alpha.ln()).ln());
            let g = lambda / n;
            (1.0 - (-g * x).exp()) / (1.0 - (-g).exp())
        })
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0)
}

fn prior(values: Vec<Vec<f64>>) -> PriorSpec {
    PriorSpec {
        tau_grid: TauGrid::Explicit { values },
        alpha: 1.05,
        epsilon_pb: 0.04,
        epsilon_mc: 0.01,
        length_prior: LengthPrior::default(),
        quadrature: MixtureQuadrature::default(),
    }
}

fn layer(name: &str, len: u64, support: Vec<u64>, codebook: Vec<f32>, assignments: Vec<u32>) -> LayerTriplet {
    LayerTriplet {
        name: name.into(),
        len,
        support,
        codebook,
        assignments,
        zero_cluster: None,
    }
}

#[test]
fn catoni_with_nothing_to_pay_is_small_but_positive() {
    let (b, _) = catoni_bound(0.0, 0.0, &CatoniParams::new(60_000, 0.025, 1.05)).unwrap();
    let want = grid_oracle(0.0, 0.0, 60_000.0, 0.025, 1.05);
    assert!(b > 0.0 && b < 0.01);
    assert!((b - want).abs() <= 1e-9, "{b} vs {want}");
}

#[test]
fn catoni_in_the_mnist_regime() {
    let (b, lambda) = catoni_bound(0.02, 35_000.0, &CatoniParams::new(60_000, 0.025, 1.05)).unwrap();
    let want = grid_oracle(0.02, 35_000.0, 60_000.0, 0.025, 1.05);
    assert!((b - want).abs() <= 1e-6, "{b} vs {want}");
    assert!(b > 0.3 && b < 0.6);
    assert!(lambda > 1.0);
}

#[test]
fn occam_kl_of_a_known_size() {
    let kl = occam_kl(51_036, &LengthPrior::default()).unwrap();
    assert!((kl - 35_425.37).abs() < 0.01, "{kl}");
}

#[test]
fn union_over_alpha_and_tau_grids() {
    assert_eq!(union_penalty(&[1]).unwrap(), 0.0);
    assert!((union_penalty(&[32; 4]).unwrap() - 13.86).abs() < 0.005);
    assert!((union_penalty(&[2, 32, 32, 32, 32]).unwrap() - 14.56).abs() < 0.005);
}

#[test]
fn empty_supports_reduce_to_occam_plus_union() {
    let t = CompressedTriplet {
        layers: vec![layer("a", 50, vec![], vec![0.1, 0.2], vec![]), layer("b", 9, vec![], vec![0.3], vec![])],
    };
    let sizes = coded_sizes(&t).unwrap();
    let p = prior(vec![vec![0.01, 0.02, 0.03], vec![0.5, 1.0]]);
    let kl = quantized_kl(&t, &sizes, &[0.02, 0.5], &[0.02, 1.0], &p).unwrap();
    let expected = occam_kl(sizes.support_bits + sizes.codebook_bits, &p.length_prior).unwrap() + 6f64.ln();
    assert_eq!(sizes.assignment_bits, 0);
    assert!((kl.kl_nats - expected).abs() < 1e-9);
}

#[test]
fn mixture_term_scales_with_occupancy() {
    let one = CompressedTriplet {
        layers: vec![layer("w", 10, vec![4], vec![-0.2, 0.5], vec![1])],
    };
    let three = CompressedTriplet {
        layers: vec![layer("w", 10, vec![1, 4, 8], vec![-0.2, 0.5], vec![1, 1, 1])],
    };
    let p = prior(vec![vec![0.3]]);
    let g1 = quantized_kl(&one, &coded_sizes(&one).unwrap(), &[0.2], &[0.3], &p).unwrap().gain_back_nats;
    let g3 = quantized_kl(&three, &coded_sizes(&three).unwrap(), &[0.2], &[0.3], &p).unwrap().gain_back_nats;
    assert!((g3 - 3.0 * g1).abs() < 1e-12);
}

#[test]
fn toy_triplet_matches_coordinate_by_coordinate_sum() {
    let t = CompressedTriplet {
        layers: vec![
            layer("a", 20, vec![0, 3, 7, 11, 19], vec![-0.5, -0.1, 0.2, 0.6], vec![0, 2, 2, 3, 1]),
            layer("b", 12, vec![1, 2, 5, 6, 10], vec![-1.0, 0.0, 0.4, 1.5], vec![3, 3, 0, 2, 1]),
        ],
    };
    let sizes = coded_sizes(&t).unwrap();
    let sigmas = [0.15, 0.4];
    let p = prior(vec![vec![0.15, 0.3], vec![0.2, 0.4]]);
    let kl = quantized_kl(&t, &sizes, &sigmas, &sigmas, &p).unwrap();
    let mut brute = 0.0;
    for (l, &s) in t.layers.iter().zip(&sigmas) {
        let centers: Vec<f64> = l.codebook.iter().map(|&c| f64::from(c)).collect();
        for &q in &l.assignments {
            brute += gaussian_mixture_kl(centers[q as usize], s, &centers, s, MixtureQuadrature::default()).unwrap();
        }
    }
    assert!((kl.gain_back_nats - brute).abs() < 1e-9);
    let total = occam_kl(sizes.raw_compressed_bits, &p.length_prior).unwrap() + 4f64.ln() + brute;
    assert!((kl.kl_nats - total).abs() < 1e-9);
}

#[test]
fn gauss_hermite_agrees_with_adaptive_near_matched_widths() {
    let centers = [-0.3, 0.0, 0.25, 0.7];
    for sigma in [0.1, 0.2, 0.3] {
        let a = gaussian_mixture_kl(0.25, sigma, &centers, 0.2, MixtureQuadrature::default()).unwrap();
        let g = gaussian_mixture_kl(0.25, sigma, &centers, 0.2, MixtureQuadrature::GaussHermite { order: 64 }).unwrap();
        assert!((a - g).abs() <= 1e-6 * a.abs().max(1.0), "σ {sigma}: {a} vs {g}");
    }
}

/// Bisection on `M·kl(ē‖p) = ln(1/ε)` written independently, run to the
/// limit of double precision.
fn kl_inverse_oracle(mean: f64, m: f64, eps: f64) -> f64 {
    let kl = |p: f64| mean * (mean / p).ln() + (1.0 - mean) * ((1.0 - mean) / (1.0 - p)).ln();
    let target = (1.0 / eps).ln() / m;
    let (mut lo, mut hi) = (mean, 1.0 - 1e-300);
    for _ in 0..2000 {
        let mid = lo + (hi - lo) / 2.0;
        if mid == lo || mid == hi {
            break;
        }
        if kl(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn mc_bound_matches_kl_inversion() {
    let draws: Vec<f64> = (0..500).map(|i| if i % 10 == 0 { 1.0 } else { 0.0 }).collect();
    let got = mc_loss_bound(&draws, 0.01).unwrap();
    let want = kl_inverse_oracle(0.1, 500.0, 0.01);
    assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    assert!((mc_loss_bound(&vec![0.0; 1000], 0.01).unwrap() - 0.004595).abs() < 5e-7);
    assert_eq!(mc_loss_bound(&[1.0, 1.0], 0.01).unwrap(), 1.0);
}

#[test]
fn certify_is_total_on_degenerate_input() {
    let t = CompressedTriplet {
        layers: vec![layer("w", 4, vec![], vec![0.0], vec![])],
    };
    let sizes = coded_sizes(&t).unwrap();
    let errors = ErrorEstimate {
        point_estimate: 0.0,
        per_draw_errors: vec![],
        draws: 0,
        seed: None,
        n: 100,
    };
    let r = certify(&t, &sizes, &[0.0], None, &prior(vec![vec![0.0]]), &errors, 100).unwrap();
    assert!(r.bound.is_finite() && (0.0..=1.0).contains(&r.bound));
}

#[test]
fn noiseless_posterior_gets_no_gain_back() {
    let t = CompressedTriplet {
        layers: vec![layer("w", 30, (0..30).step_by(2).collect(), vec![-0.4, 0.4], (0..15).map(|i| i % 2).collect())],
    };
    let sizes = coded_sizes(&t).unwrap();
    let errors = ErrorEstimate {
        point_estimate: 0.1,
        per_draw_errors: vec![0.1; 50],
        draws: 50,
        seed: Some(3),
        n: 1000,
    };
    let r = certify(&t, &sizes, &[0.0], None, &prior(vec![vec![0.0, 0.1]]), &errors, 1000).unwrap();
    assert_eq!(r.kl.gain_back_nats, 0.0);
    assert!(r.kl.effective_bits >= sizes.raw_compressed_bits as f64);
}
