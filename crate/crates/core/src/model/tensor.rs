use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, ParamRole, ParamSpec};
use crate::{seed, Error, Result};

/// A named dense tensor, row-major, 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl LayerTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let t = LayerTensor {
            name: name.into(),
            shape,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        LayerTensor {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if expected != self.values.len() {
            return Err(Error::InvalidTensor(format!(
                "{}: shape {:?} holds {expected} values, found {}",
                self.name,
                self.shape,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "{}: non-finite value at flat index {i}",
                self.name
            )));
        }
        Ok(())
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// How weight extrema are grouped when sizing the posterior noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerLayer,
    /// One range per output channel of a convolution (first tensor axis).
    PerFilter,
}

/// Exact `(min, max)` of the layer, or of each filter of a convolution.
pub fn weight_range(layer: &LayerTensor, granularity: Granularity) -> Result<Vec<(f32, f32)>> {
    if layer.values.is_empty() {
        return Err(Error::InvalidTensor(format!("{}: empty layer", layer.name)));
    }
    let extrema = |vals: &[f32]| {
        vals.iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    match granularity {
        Granularity::PerLayer => Ok(vec![extrema(&layer.values)]),
        Granularity::PerFilter => {
            if layer.shape.len() != 4 {
                return Err(Error::Granularity(format!(
                    "{}: per-filter ranges need a convolution tensor, got shape {:?}",
                    layer.name, layer.shape
                )));
            }
            let filter = layer.values.len() / layer.shape[0];
            Ok(layer.values.chunks(filter).map(extrema).collect())
        }
    }
}

/// A hypothesis: an architecture plus its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub layers: Vec<LayerTensor>,
}

impl Model {
    pub fn new(arch: ArchSpec, layers: Vec<LayerTensor>) -> Result<Self> {
        let m = Model { arch, layers };
        m.validate()?;
        Ok(m)
    }

    /// Checks every tensor against the shapes implied by the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let specs = self.arch.params();
        if specs.len() != self.layers.len() {
            return Err(Error::ArchMismatch(format!(
                "architecture has {} parameter tensors, model has {}",
                specs.len(),
                self.layers.len()
            )));
        }
        for (spec, layer) in specs.iter().zip(&self.layers) {
            if spec.shape != layer.shape {
                return Err(Error::ArchMismatch(format!(
                    "{}: expected shape {:?}, found {} with shape {:?}",
                    spec.name, spec.shape, layer.name, layer.shape
                )));
            }
            layer.validate()?;
        }
        Ok(())
    }

    /// He-normal weights, zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed);
        let layers = arch
            .params()
            .into_iter()
            .map(|spec| {
                let values = match spec.role {
                    ParamRole::Weight => {
                        let std = spec.init_std() as f32;
                        (0..spec.len())
                            .map(|_| std * rng.sample::<f32, _>(StandardNormal))
                            .collect()
                    }
                    ParamRole::Bias => vec![0.0; spec.len()],
                };
                LayerTensor {
                    name: spec.name,
                    shape: spec.shape,
                    values,
                }
            })
            .collect();
        Ok(Model { arch, layers })
    }

    /// Indices into `layers` of the weight tensors, in order.
    pub fn weight_indices(&self) -> Vec<usize> {
        param_indices(&self.arch.params(), ParamRole::Weight)
    }

    pub fn weights(&self) -> impl Iterator<Item = &LayerTensor> {
        self.weight_indices().into_iter().map(move |i| &self.layers[i])
    }

    pub fn weight_count(&self) -> usize {
        self.weights().map(LayerTensor::len).sum()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights().map(LayerTensor::count_nonzero).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerTensor> {
        self.layers.iter().find(|l| l.name == name)
    }
}

pub(crate) fn param_indices(specs: &[ParamSpec], role: ParamRole) -> Vec<usize> {
    specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.role == role)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_layer_range() {
        let t = LayerTensor::new("w", vec![3], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(weight_range(&t, Granularity::PerLayer).unwrap(), vec![(-2.0, 3.0)]);
    }

    #[test]
    fn constant_layer_has_zero_range() {
        let t = LayerTensor::new("w", vec![4], vec![0.75; 4]).unwrap();
        let r = weight_range(&t, Granularity::PerLayer).unwrap();
        assert_eq!(r, vec![(0.75, 0.75)]);
        assert_eq!(r[0].1 - r[0].0, 0.0);
    }

    #[test]
    fn per_filter_range() {
        let t = LayerTensor::new("c", vec![2, 1, 1, 2], vec![1.0, 2.0, -1.0, 5.0]).unwrap();
        assert_eq!(
            weight_range(&t, Granularity::PerFilter).unwrap(),
            vec![(1.0, 2.0), (-1.0, 5.0)]
        );
    }

    #[test]
    fn per_filter_on_dense_is_an_error() {
        let t = LayerTensor::new("fc", vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(matches!(
            weight_range(&t, Granularity::PerFilter),
            Err(Error::Granularity(_))
        ));
    }

    #[test]
    fn tensor_invariants() {
        assert!(LayerTensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(LayerTensor::new("x", vec![2], vec![0.0, f32::NAN]).is_err());
        assert!(LayerTensor::new("x", vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn init_matches_arch_and_is_seeded() {
        let arch = ArchSpec::mlp(4, &[8], 3);
        let a = Model::init(arch.clone(), 11).unwrap();
        let b = Model::init(arch, 11).unwrap();
        a.validate().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weight_indices(), vec![0, 2]);
        assert!(a.layers[1].values.iter().all(|v| *v == 0.0));
    }
}
