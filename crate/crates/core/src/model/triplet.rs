use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::tensor::{LayerTensor, Model};
use crate::{Error, Result};

/// Compressed form of one parameter tensor.
///
/// Indices are 0-based here and on the wire: `support[j]` is the flat
/// (row-major) position of the `j`-th retained weight and `assignments[j]`
/// its codebook entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTriplet {
    pub name: String,
    /// Number of values in the dense tensor.
    pub len: u64,
    /// Strictly increasing flat indices of the retained weights (`S`).
    pub support: Vec<u64>,
    /// Shared weight values (`C`), `r = codebook.len()`.
    pub codebook: Vec<f32>,
    /// Codebook index for each support entry (`Q`).
    pub assignments: Vec<u32>,
    /// Codebook slot reserved for exact zero, if any.
    pub zero_cluster: Option<u32>,
}

impl LayerTriplet {
    pub fn k(&self) -> usize {
        self.support.len()
    }

    pub fn r(&self) -> usize {
        self.codebook.len()
    }

    /// `⌈log2 r⌉`: bits per packed assignment.
    pub fn bits_per_assignment(&self) -> u32 {
        ceil_log2(self.r() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedTriplet(format!("{}: {msg}", self.name)));
        if self.codebook.is_empty() {
            return bad("empty codebook".into());
        }
        if self.support.len() != self.assignments.len() {
            return bad(format!(
                "{} support entries but {} assignments",
                self.support.len(),
                self.assignments.len()
            ));
        }
        if let Some(w) = self.support.windows(2).position(|w| w[0] >= w[1]) {
            return bad(format!("support not strictly increasing at position {}", w + 1));
        }
        if let Some(&last) = self.support.last() {
            if last >= self.len {
                return bad(format!("support index {last} out of range for {} weights", self.len));
            }
        }
        let r = self.codebook.len() as u32;
        if let Some(q) = self.assignments.iter().find(|&&q| q >= r) {
            return bad(format!("assignment {q} out of range for {r} codebook entries"));
        }
        if let Some(c) = self.codebook.iter().find(|c| !c.is_finite()) {
            return bad(format!("non-finite codebook value {c}"));
        }
        if let Some(z) = self.zero_cluster {
            match self.codebook.get(z as usize) {
                Some(v) if *v == 0.0 => {}
                Some(v) => return bad(format!("reserved zero entry {z} holds {v}")),
                None => return bad(format!("zero cluster {z} out of range")),
            }
        }
        Ok(())
    }

    /// Occupancy of each codebook entry among the support.
    pub fn cluster_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.codebook.len()];
        for &q in &self.assignments {
            counts[q as usize] += 1;
        }
        counts
    }

    /// The dense weight vector: `w[s_j] = c[q_j]`, zero elsewhere.
    pub fn decode(&self) -> Result<Vec<f32>> {
        self.validate()?;
        let mut w = vec![0.0f32; self.len as usize];
        for (&s, &q) in self.support.iter().zip(&self.assignments) {
            w[s as usize] = self.codebook[q as usize];
        }
        Ok(w)
    }

    pub fn support_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len as usize];
        for &s in &self.support {
            mask[s as usize] = true;
        }
        mask
    }
}

/// Per-layer `(S, C, Q)` for every parameter tensor of a model, in model order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompressedTriplet {
    pub layers: Vec<LayerTriplet>,
}

impl CompressedTriplet {
    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(LayerTriplet::validate)
    }

    pub fn k(&self) -> usize {
        self.layers.iter().map(LayerTriplet::k).sum()
    }

    pub fn check_arch(&self, arch: &ArchSpec) -> Result<()> {
        let params = arch.params();
        if params.len() != self.layers.len() {
            return Err(Error::ArchMismatch(format!(
                "architecture has {} parameter tensors, triplet has {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        for (spec, layer) in params.iter().zip(&self.layers) {
            if spec.len() as u64 != layer.len {
                return Err(Error::ArchMismatch(format!(
                    "{}: architecture expects {} values, triplet layer {} has {}",
                    spec.name,
                    spec.len(),
                    layer.name,
                    layer.len
                )));
            }
        }
        Ok(())
    }
}

/// Decodes the triplet into a model for `arch`.
pub fn decode_weights(t: &CompressedTriplet, arch: &ArchSpec) -> Result<Model> {
    arch.validate()?;
    let layers = arch
        .params()
        .into_iter()
        .map(|spec| LayerTensor::zeros(spec.name, spec.shape))
        .collect();
    let template = Model {
        arch: arch.clone(),
        layers,
    };
    decode_into(t, &template)
}

/// Replaces every parameter tensor of `template` with the decoded triplet.
pub fn decode_into(t: &CompressedTriplet, template: &Model) -> Result<Model> {
    t.validate()?;
    t.check_arch(&template.arch)?;
    let mut model = template.clone();
    for (tensor, layer) in model.layers.iter_mut().zip(&t.layers) {
        tensor.values = layer.decode()?;
    }
    Ok(model)
}

pub(crate) fn ceil_log2(r: u64) -> u32 {
    if r <= 1 {
        0
    } else {
        64 - (r - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(len: u64, support: Vec<u64>, codebook: Vec<f32>, q: Vec<u32>) -> LayerTriplet {
        LayerTriplet {
            name: "w".into(),
            len,
            support,
            codebook,
            assignments: q,
            zero_cluster: None,
        }
    }

    #[test]
    fn decodes_by_definition() {
        // 1-based S = {2, 5}, C = {0.5, -1.25}, Q = (2, 1)
        let t = layer(5, vec![1, 4], vec![0.5, -1.25], vec![1, 0]);
        assert_eq!(t.decode().unwrap(), vec![0.0, -1.25, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn empty_support_is_all_zero() {
        let t = layer(6, vec![], vec![0.0], vec![]);
        assert_eq!(t.decode().unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn dense_single_cluster() {
        let c = 0.3125f32;
        let t = layer(4, vec![0, 1, 2, 3], vec![c], vec![0; 4]);
        assert_eq!(t.decode().unwrap(), vec![c; 4]);
        assert_eq!(t.bits_per_assignment(), 0);
    }

    #[test]
    fn malformed_triplets_are_rejected() {
        let cases = [
            layer(5, vec![1, 1], vec![1.0], vec![0, 0]),
            layer(5, vec![3, 1], vec![1.0], vec![0, 0]),
            layer(5, vec![5], vec![1.0], vec![0]),
            layer(5, vec![1], vec![1.0], vec![1]),
            layer(5, vec![1, 2], vec![1.0], vec![0]),
        ];
        for t in cases {
            assert!(matches!(t.decode(), Err(Error::MalformedTriplet(_))), "{t:?}");
        }
        let mut z = layer(5, vec![], vec![0.5], vec![]);
        z.zero_cluster = Some(0);
        assert!(z.validate().is_err());
    }

    #[test]
    fn arch_mismatch() {
        let arch = ArchSpec::mlp(2, &[], 2);
        let t = CompressedTriplet {
            layers: vec![layer(5, vec![], vec![0.0], vec![])],
        };
        assert!(matches!(decode_weights(&t, &arch), Err(Error::ArchMismatch(_))));
        let ok = CompressedTriplet {
            layers: vec![
                layer(4, vec![0, 3], vec![1.0, 2.0], vec![1, 0]),
                layer(2, vec![1], vec![0.25], vec![0]),
            ],
        };
        let m = decode_weights(&ok, &arch).unwrap();
        assert_eq!(m.layers[0].values, vec![2.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.layers[1].values, vec![0.0, 0.25]);
    }

    #[test]
    fn ceil_log2_values() {
        let expect = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (16, 4), (17, 5)];
        for (r, b) in expect {
            assert_eq!(ceil_log2(r), b, "r={r}");
        }
    }
}
