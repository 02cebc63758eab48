use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{decode_weights, CompressedTriplet, LayerTriplet, Model};
use crate::nn::{BatchSampler, Dataset, GradientEngine, TrainConfig};
use crate::seed::{self, Stage};
use crate::{Error, Result};

/// Codebook quantization of the retained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeConfig {
    /// Default bits per assignment `b`; the codebook has `r = 2^b` entries,
    /// one of them reserved for zero when the tensor is pruned.
    pub bits: u32,
    /// Optional per-tensor override of `bits`, in model order.
    pub layer_bits: Vec<u32>,
    pub kmeans_iters: usize,
    /// Independent k-means++ initialisations; the lowest distortion wins.
    pub restarts: usize,
    /// Center fine-tuning with assignments frozen; `steps = 0` disables it.
    pub fine_tune: TrainConfig,
    pub seed: u64,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig {
            bits: 4,
            layer_bits: Vec::new(),
            kmeans_iters: 100,
            restarts: 4,
            fine_tune: TrainConfig {
                steps: 0,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

impl QuantizeConfig {
    pub fn validate(&self, tensors: usize) -> Result<()> {
        if !self.layer_bits.is_empty() && self.layer_bits.len() != tensors {
            return Err(Error::Config(format!(
                "{} per-layer bit widths for {tensors} parameter tensors",
                self.layer_bits.len()
            )));
        }
        let all = std::iter::once(&self.bits).chain(&self.layer_bits);
        if let Some(b) = all.into_iter().find(|b| !(1..=16).contains(*b)) {
            return Err(Error::Config(format!("codebook bits {b} outside 1..=16")));
        }
        if self.restarts == 0 {
            return Err(Error::Config("k-means needs at least one restart".into()));
        }
        self.fine_tune.validate()
    }

    pub fn bits_for(&self, layer: usize) -> u32 {
        self.layer_bits.get(layer).copied().unwrap_or(self.bits)
    }
}

/// Result of a 1-D k-means run. Centers are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<f64>,
    pub assignments: Vec<u32>,
    pub distortion: f64,
    /// Distortion after each Lloyd iteration.
    pub trace: Vec<f64>,
}

/// Nearest center; ties go to the smaller index.
fn nearest(x: f64, centers: &[f64]) -> u32 {
    let mut best = 0;
    let mut dist = (x - centers[0]).abs();
    for (j, &c) in centers.iter().enumerate().skip(1) {
        let d = (x - c).abs();
        if d < dist {
            best = j;
            dist = d;
        }
    }
    best as u32
}

fn distortion(values: &[f64], centers: &[f64], assignments: &[u32]) -> f64 {
    values
        .iter()
        .zip(assignments)
        .map(|(&x, &q)| (x - centers[q as usize]).powi(2))
        .sum()
}

/// Lloyd iterations from `centers` until the assignment is a fixpoint or
/// `iters` updates have been made. Empty clusters keep their center.
pub fn lloyd(values: &[f64], mut centers: Vec<f64>, iters: usize) -> KMeans {
    centers.sort_by(f64::total_cmp);
    let mut assignments: Vec<u32> = values.iter().map(|&x| nearest(x, &centers)).collect();
    let mut trace = vec![distortion(values, &centers, &assignments)];
    for _ in 0..iters {
        let mut sums = vec![0.0; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&x, &q) in values.iter().zip(&assignments) {
            sums[q as usize] += x;
            counts[q as usize] += 1;
        }
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                *c = s / n as f64;
            }
        }
        centers.sort_by(f64::total_cmp);
        let next: Vec<u32> = values.iter().map(|&x| nearest(x, &centers)).collect();
        let changed = next != assignments;
        assignments = next;
        trace.push(distortion(values, &centers, &assignments));
        if !changed {
            break;
        }
    }
    let distortion = *trace.last().expect("non-empty");
    KMeans {
        centers,
        assignments,
        distortion,
        trace,
    }
}

/// k-means++ seeding.
pub fn kmeans_pp_init(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = values.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
        }
        let c = values[pick];
        centers.push(c);
        for (d, &x) in d2.iter_mut().zip(values) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers
}

/// Best of `restarts` seeded k-means++ / Lloyd runs.
pub fn kmeans(values: &[f64], k: usize, iters: usize, restarts: usize, seed: u64) -> KMeans {
    let mut best: Option<KMeans> = None;
    for run in 0..restarts.max(1) {
        let mut rng = seed::rng(seed::sub_seed(seed, run as u64));
        let init = kmeans_pp_init(values, k, &mut rng);
        let res = lloyd(values, init, iters);
        if best.as_ref().is_none_or(|b| res.distortion < b.distortion) {
            best = Some(res);
        }
    }
    best.expect("at least one run")
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a == b);
    v.len()
}

/// Quantizes one tensor given its keep-mask.
pub fn quantize_layer(name: &str, values: &[f32], mask: &[bool], bits: u32, cfg: &QuantizeConfig, seed: u64) -> Result<LayerTriplet> {
    if values.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{name}: mask length differs from tensor")));
    }
    let support: Vec<u64> = (0..values.len() as u64).filter(|&i| mask[i as usize]).collect();
    let pruned = support.len() < values.len();
    let xs: Vec<f64> = support.iter().map(|&i| f64::from(values[i as usize])).collect();
    if xs.is_empty() {
        return Ok(LayerTriplet {
            name: name.to_string(),
            len: values.len() as u64,
            support,
            codebook: vec![0.0],
            assignments: Vec::new(),
            zero_cluster: Some(0),
        });
    }
    let r = 1usize << bits;
    let wanted = if pruned { r - 1 } else { r };
    let k = wanted.min(distinct_count(&xs));
    let km = kmeans(&xs, k, cfg.kmeans_iters, cfg.restarts, seed);
    let offset = u32::from(pruned);
    let mut codebook: Vec<f32> = Vec::with_capacity(km.centers.len() + 1);
    if pruned {
        codebook.push(0.0);
    }
    codebook.extend(km.centers.iter().map(|&c| c as f32));
    let t = LayerTriplet {
        name: name.to_string(),
        len: values.len() as u64,
        support,
        codebook,
        assignments: km.assignments.iter().map(|&q| q + offset).collect(),
        zero_cluster: pruned.then_some(0),
    };
    t.validate()?;
    Ok(t)
}

/// Builds the `(S, C, Q)` triplet of every parameter tensor, then optionally
/// fine-tunes the codebooks with assignments frozen.
pub fn quantize(model: &Model, masks: &[Vec<bool>], cfg: &QuantizeConfig, data: &Dataset) -> Result<CompressedTriplet> {
    model.validate()?;
    cfg.validate(model.layers.len())?;
    if masks.len() != model.layers.len() {
        return Err(Error::ShapeMismatch("one mask per parameter tensor is required".into()));
    }
    let base = seed::stage_seed(cfg.seed, Stage::Quantize);
    let layers = model
        .layers
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (l, m))| quantize_layer(&l.name, &l.values, m, cfg.bits_for(i), cfg, seed::sub_seed(base, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut t = CompressedTriplet { layers };
    if cfg.fine_tune.steps > 0 {
        fine_tune_codebooks(&mut t, model, &cfg.fine_tune, data)?;
    }
    Ok(t)
}

/// Momentum SGD on the shared values: each center moves with the summed
/// gradient of the weights assigned to it. The zero entry is fixed.
pub fn fine_tune_codebooks(t: &mut CompressedTriplet, model: &Model, cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    cfg.validate()?;
    let arch = &model.arch;
    let mut engine = GradientEngine::new(arch)?;
    let mut sampler = BatchSampler::new(data, cfg.seed);
    let mut velocity: Vec<Vec<f64>> = t.layers.iter().map(|l| vec![0.0; l.r()]).collect();
    let mut grads = Vec::new();
    for step in 0..cfg.steps {
        let decoded = decode_weights(t, arch)?;
        let batch = sampler.next_batch(cfg.batch_size).to_vec();
        let loss = engine.loss_and_grad(&decoded, data, &batch, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        let lr = cfg.learning_rate_at(step);
        for ((layer, g), v) in t.layers.iter_mut().zip(&grads).zip(&mut velocity) {
            let mut cg = vec![0.0f64; layer.r()];
            for (&s, &q) in layer.support.iter().zip(&layer.assignments) {
                cg[q as usize] += f64::from(g[s as usize]);
            }
            for (j, (c, v)) in layer.codebook.iter_mut().zip(v.iter_mut()).enumerate() {
                if layer.zero_cluster == Some(j as u32) {
                    continue;
                }
                *v = cfg.momentum * *v - lr * (cg[j] + cfg.l2 * f64::from(*c));
                *c = (f64::from(*c) + *v) as f32;
            }
        }
    }
    t.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Optimal k-interval partition of sorted points by exhaustive search.
    fn brute_force(sorted: &[f64], k: usize) -> f64 {
        fn sse(xs: &[f64]) -> f64 {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum()
        }
        let n = sorted.len();
        let mut best = f64::INFINITY;
        assert_eq!(k, 3);
        for a in 1..n {
            for b in a + 1..n {
                let d = sse(&sorted[..a]) + sse(&sorted[a..b]) + sse(&sorted[b..]);
                best = best.min(d);
            }
        }
        best
    }

    #[test]
    fn two_bit_codebook_matches_exhaustive_optimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let values: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        // Mask out one extra coordinate so the tensor counts as pruned (r - 1 = 3 free centers).
        let mut full = values.clone();
        full.push(0.0);
        let mut mask = vec![true; 12];
        mask.push(false);
        let t = quantize_layer("w", &full, &mask, 2, &QuantizeConfig::default(), 7).unwrap();
        assert_eq!(t.r(), 4);
        assert_eq!(t.codebook[0], 0.0);
        let decoded = t.decode().unwrap();
        let got: f64 = values
            .iter()
            .zip(&decoded)
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum();
        let mut sorted: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        sorted.sort_by(f64::total_cmp);
        let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let km = kmeans(&xs, 3, 100, 4, 0);
        let oracle = brute_force(&sorted, 3);
        assert!((km.distortion - oracle).abs() <= 1e-9, "{} vs {oracle}", km.distortion);
        // f32 rounding of the stored centers only.
        assert!((got - oracle).abs() <= 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn exact_values_are_reproduced() {
        let values = [0.5f32, -0.25, 0.5, 0.0, 1.5, -0.25, 0.0];
        let mask = [true, true, true, false, true, true, false];
        let t = quantize_layer("w", &values, &mask, 2, &QuantizeConfig::default(), 1).unwrap();
        assert_eq!(t.codebook, vec![0.0, -0.25, 0.5, 1.5]);
        assert_eq!(t.decode().unwrap(), values.to_vec());
    }

    #[test]
    fn fewer_distinct_values_shrink_the_codebook() {
        let values = [1.0f32, 1.0, 2.0, 0.0];
        let mask = [true, true, true, false];
        let t = quantize_layer("w", &values, &mask, 4, &QuantizeConfig::default(), 1).unwrap();
        assert_eq!(t.r(), 3);
        assert_eq!(t.bits_per_assignment(), 2);
    }

    #[test]
    fn fully_pruned_layer() {
        let t = quantize_layer("w", &[0.0; 5], &[false; 5], 4, &QuantizeConfig::default(), 1).unwrap();
        assert_eq!((t.k(), t.codebook.clone(), t.zero_cluster), (0, vec![0.0], Some(0)));
    }

    #[test]
    fn dense_layer_has_no_zero_cluster() {
        let values = [0.1f32, 0.2, 0.3, 0.9];
        let t = quantize_layer("w", &values, &[true; 4], 1, &QuantizeConfig::default(), 1).unwrap();
        assert_eq!(t.zero_cluster, None);
        assert_eq!(t.r(), 2);
    }

    #[test]
    fn lloyd_never_increases_distortion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>().powi(3) * 4.0 - 1.0).collect();
            let init = kmeans_pp_init(&xs, 7, &mut rng);
            let km = lloyd(&xs, init, 100);
            for w in km.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", km.trace);
            }
        }
    }
}
