use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::{weight_range, Granularity, Model};
use super::arch::ArchSpec;
use super::triplet::{decode_weights, CompressedTriplet};
use crate::{seed, Error, Result};

/// Noise level as a fraction of the weight range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub granularity: Granularity,
    pub fraction_of_range: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            granularity: Granularity::PerFilter,
            fraction_of_range: 0.05,
        }
    }
}

impl NoiseSpec {
    /// One σ per parameter tensor.
    ///
    /// With per-filter granularity a convolution gets `fraction` times the
    /// mean of its per-filter ranges; dense layers have no filters and use
    /// their whole-layer range.
    pub fn sigmas(&self, model: &Model) -> Result<Vec<f64>> {
        if !(self.fraction_of_range >= 0.0 && self.fraction_of_range.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise fraction must be a finite non-negative number, got {}",
                self.fraction_of_range
            )));
        }
        model
            .layers
            .iter()
            .map(|layer| {
                let g = match self.granularity {
                    Granularity::PerFilter if layer.shape.len() == 4 => Granularity::PerFilter,
                    _ => Granularity::PerLayer,
                };
                let ranges = weight_range(layer, g)?;
                let mean = ranges
                    .iter()
                    .map(|&(lo, hi)| f64::from(hi) - f64::from(lo))
                    .sum::<f64>()
                    / ranges.len() as f64;
                Ok(self.fraction_of_range * mean)
            })
            .collect()
    }
}

/// The stochastic classifier `N(w, σ² J)`: decoded weights plus independent
/// Gaussian noise on the support of each parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPosterior {
    pub base: Model,
    /// σ per parameter tensor, absolute units.
    pub noise_scale: Vec<f64>,
    /// Diagonal of `J` per parameter tensor.
    pub support_mask: Vec<Vec<bool>>,
}

impl StochasticPosterior {
    pub fn new(base: Model, noise_scale: Vec<f64>, support_mask: Vec<Vec<bool>>) -> Result<Self> {
        let n = base.layers.len();
        if noise_scale.len() != n || support_mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter tensors, {} noise scales, {} masks",
                n,
                noise_scale.len(),
                support_mask.len()
            )));
        }
        for (layer, mask) in base.layers.iter().zip(&support_mask) {
            if mask.len() != layer.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: mask of {} for {} values",
                    layer.name,
                    mask.len(),
                    layer.len()
                )));
            }
        }
        if let Some(s) = noise_scale.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("noise scale {s} must be finite and >= 0")));
        }
        Ok(StochasticPosterior {
            base,
            noise_scale,
            support_mask,
        })
    }

    /// Decodes `t` and attaches noise.
    pub fn from_triplet(t: &CompressedTriplet, arch: &ArchSpec, noise_scale: Vec<f64>) -> Result<Self> {
        let base = decode_weights(t, arch)?;
        let masks = t.layers.iter().map(|l| l.support_mask()).collect();
        Self::new(base, noise_scale, masks)
    }

    /// The `draw`-th sample `w + σ ε`. Each draw has its own random stream,
    /// so draws are reproducible individually.
    pub fn sample(&self, seed: u64, draw: u64) -> Model {
        let mut rng = seed::rng(seed::sub_seed(seed, draw));
        let mut model = self.base.clone();
        for ((layer, mask), &sigma) in model.layers.iter_mut().zip(&self.support_mask).zip(&self.noise_scale) {
            if sigma == 0.0 {
                continue;
            }
            let values = &mut layer.values;
            for (v, &on) in values.iter_mut().zip(mask) {
                if on {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (f64::from(*v) + sigma * z) as f32;
                }
            }
        }
        model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchSpec;

    #[test]
    fn noise_only_on_support() {
        let arch = ArchSpec::mlp(3, &[], 2);
        let mut base = Model::init(arch, 1).unwrap();
        base.layers[0].values = vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0];
        let mask = vec![true, false, true, false, false, true];
        let p = StochasticPosterior::new(base.clone(), vec![0.1, 0.0], vec![mask.clone(), vec![true; 2]]).unwrap();
        let s = p.sample(5, 0);
        for (i, &on) in mask.iter().enumerate() {
            if on {
                assert_ne!(s.layers[0].values[i], base.layers[0].values[i]);
            } else {
                assert_eq!(s.layers[0].values[i], 0.0);
            }
        }
        assert_eq!(s.layers[1], base.layers[1]);
        assert_eq!(p.sample(5, 0), s);
        assert_ne!(p.sample(5, 1), s);
    }

    #[test]
    fn zero_sigma_is_the_base_model() {
        let base = Model::init(ArchSpec::mlp(3, &[4], 2), 2).unwrap();
        let masks = base.layers.iter().map(|l| vec![true; l.len()]).collect();
        let p = StochasticPosterior::new(base.clone(), vec![0.0; 4], masks).unwrap();
        assert_eq!(p.sample(9, 3), base);
    }

    #[test]
    fn sigma_from_ranges() {
        let arch = ArchSpec {
            input: vec![1, 2, 2],
            stages: vec![
                crate::model::Stage::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel_h: 1,
                    kernel_w: 2,
                    stride: 1,
                    padding: 0,
                },
                crate::model::Stage::Flatten,
                crate::model::Stage::Dense { inputs: 4, outputs: 2 },
            ],
            classes: 2,
        };
        let mut m = Model::init(arch, 0).unwrap();
        m.layers[0].values = vec![1.0, 2.0, -1.0, 5.0];
        m.layers[2].values = vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0];
        let filt = NoiseSpec {
            granularity: Granularity::PerFilter,
            fraction_of_range: 0.05,
        };
        let s = filt.sigmas(&m).unwrap();
        assert!((s[0] - 0.05 * 3.5).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - 0.05 * 4.0).abs() < 1e-15);
        let layer = NoiseSpec {
            granularity: Granularity::PerLayer,
            fraction_of_range: 0.05,
        };
        assert!((layer.sigmas(&m).unwrap()[0] - 0.05 * 6.0).abs() < 1e-15);
    }
}
