//! Integration rules for expectations under a standard normal.

use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod estimate and the embedded 7-point Gauss estimate.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, g * h)
}

/// Adaptive Gauss–Kronrod over `[a, b]` split at `breaks`. Each panel is
/// bisected until the Kronrod/Gauss difference is below `tol` times the larger
/// of the panel's share of the interval and the magnitude of its estimate.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let width = b - a;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let mut stack = vec![(w[0], w[1], 0u32)];
        while let Some((lo, hi, depth)) = stack.pop() {
            let (k, g) = gk15(f, lo, hi);
            let allowed = tol * ((hi - lo) / width).max(k.abs());
            if (k - g).abs() <= allowed || depth >= 30 {
                total += k;
            } else {
                let mid = 0.5 * (lo + hi);
                stack.push((mid, hi, depth + 1));
                stack.push((lo, mid, depth + 1));
            }
        }
    }
    total
}

/// Gauss–Hermite nodes and weights for `∫ e^{−x²} f(x) dx`, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.855_75 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(Z)]`, `Z ~ N(0, 1)`, with an `order`-point Gauss–Hermite rule.
pub fn hermite_expectation(f: &impl Fn(f64) -> f64, order: usize) -> f64 {
    let (x, w) = gauss_hermite(order);
    let s: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * f(std::f64::consts::SQRT_2 * xi)).sum();
    s / PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for order in [8, 32, 64] {
            let (_, w) = gauss_hermite(order);
            assert!((w.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12);
            assert!((hermite_expectation(&|z| z * z, order) - 1.0).abs() < 1e-12);
            assert!((hermite_expectation(&|z| z.powi(4), order) - 3.0).abs() < 1e-11);
        }
    }

    #[test]
    fn adaptive_integrates_gaussian_moments() {
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let m2 = adaptive(&|z| z * z * pdf(z), -12.0, 12.0, &[0.0], 1e-14);
        assert!((m2 - 1.0).abs() < 1e-13);
        let abs = adaptive(&|z: f64| z.abs() * pdf(z), -12.0, 12.0, &[0.0], 1e-14);
        assert!((abs - (2.0 / PI).sqrt()).abs() < 1e-13);
    }
}
