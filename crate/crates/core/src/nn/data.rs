use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed::{self, Stage};
use crate::wire::Reader;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled sample. Features are stored back to back, one example of
/// `shape.iter().product()` values after another.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-example shape: `[c, h, w]` or `[d]`.
    pub shape: Vec<usize>,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

/// Which half of the standard MNIST distribution to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl Dataset {
    pub fn new(shape: Vec<usize>, features: Vec<f32>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        let d = Dataset {
            shape,
            features,
            labels,
            classes,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.example_len();
        if dim == 0 || self.classes == 0 || self.classes > 256 {
            return Err(Error::InvalidInput(format!(
                "dataset shape {:?} with {} classes",
                self.shape, self.classes
            )));
        }
        if self.features.len() != dim * self.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} examples of length {dim}",
                self.features.len(),
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y as usize >= self.classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {} classes", self.classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let d = self.example_len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.example_len());
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        Dataset {
            shape: self.shape.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// A seeded uniform subset of `n` examples, kept in original order.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let n = n.min(self.len());
        let mut rng = seed::rng(seed::stage_seed(seed, Stage::Subset));
        let mut idx = index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y as usize] += 1;
        }
        h
    }

    /// Example indices sorted by a content hash, giving an order that does
    /// not depend on how the examples were arranged on input.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut keyed: Vec<(u64, usize)> = (0..self.len())
            .map(|i| (content_hash(self.example(i), self.labels[i]), i))
            .collect();
        keyed.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| {
                let (x, y) = (self.example(a.1), self.example(b.1));
                x.iter()
                    .map(|v| v.to_bits())
                    .cmp(y.iter().map(|v| v.to_bits()))
                    .then(self.labels[a.1].cmp(&self.labels[b.1]))
            })
        });
        keyed.into_iter().map(|(_, i)| i).collect()
    }

    /// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`.
    pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
        let img = std::fs::read(images.as_ref())?;
        let lab = std::fs::read(labels.as_ref())?;
        let (shape, pixels) = parse_idx_images(&img)?;
        let labels = parse_idx_labels(&lab)?;
        if labels.len() * shape.iter().product::<usize>() != pixels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} images",
                labels.len(),
                pixels.len() / shape.iter().product::<usize>().max(1)
            )));
        }
        let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1).max(10);
        Dataset::new(shape, pixels, labels, classes)
    }

    /// Loads MNIST from a directory holding the four standard IDX files.
    pub fn load_mnist(dir: impl AsRef<Path>, split: MnistSplit) -> Result<Dataset> {
        let dir = dir.as_ref();
        let prefix = match split {
            MnistSplit::Train => "train",
            MnistSplit::Test => "t10k",
        };
        Dataset::load_idx(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    /// Isotropic Gaussian blobs around class centers drawn from `N(0, I)`.
    pub fn synthetic_blobs(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
        if dim == 0 || classes == 0 || classes > 256 {
            return Err(Error::InvalidInput("synthetic data needs dim ≥ 1 and 1..=256 classes".into()));
        }
        let mut rng = seed::rng(seed::stage_seed(seed, Stage::Synthetic));
        let centers: Vec<f64> = (0..classes * dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            labels.push(y as u8);
            for j in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                features.push((centers[y * dim + j] + spread * z) as f32);
            }
        }
        Dataset::new(vec![dim], features, labels, classes)
    }

    /// Resamples the labels of exactly `⌊fraction·n⌋` examples, chosen
    /// uniformly without replacement, from all classes.
    pub fn randomize_labels(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!("fraction {fraction} outside [0, 1]")));
        }
        let count = (fraction * self.len() as f64).floor() as usize;
        let mut rng = seed::rng(seed::stage_seed(seed, Stage::Labels));
        let mut out = self.clone();
        let chosen = index::sample(&mut rng, self.len(), count);
        for i in chosen.iter() {
            out.labels[i] = rng.random_range(0..self.classes) as u8;
        }
        Ok(out)
    }
}

/// Number of examples whose labels [`Dataset::randomize_labels`] touches.
pub fn randomized_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).floor() as usize
}

fn content_hash(x: &[f32], y: u8) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in x.iter().flat_map(|v| v.to_bits().to_le_bytes()).chain([y]) {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn read_be_u32(r: &mut Reader<'_>, what: &str) -> Result<u32> {
    let b = r.bytes(4, what)?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut r = Reader::new(bytes);
    let magic = read_be_u32(&mut r, "IDX magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("IDX image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = read_be_u32(&mut r, "image count")? as usize;
    let h = read_be_u32(&mut r, "image rows")? as usize;
    let w = read_be_u32(&mut r, "image columns")? as usize;
    let pixels = r.bytes(n * h * w, "pixel data")?;
    Ok((vec![1, h, w], pixels.iter().map(|&p| p as f32 / 255.0).collect()))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader::new(bytes);
    let magic = read_be_u32(&mut r, "IDX magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("IDX label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = read_be_u32(&mut r, "label count")? as usize;
    Ok(r.bytes(n, "label data")?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, h: u32, w: u32, px: &[u8]) -> Vec<u8> {
        let mut v = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, h, w] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(px);
        v
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let img = idx_images(2, 2, 1, &[0, 255, 51, 102]);
        let mut lab = LABELS_MAGIC.to_be_bytes().to_vec();
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[3, 7]);
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lab).unwrap();
        let d = Dataset::load_idx(dir.path().join("i"), dir.path().join("l")).unwrap();
        assert_eq!(d.shape, vec![1, 2, 1]);
        assert_eq!(d.features, vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels, vec![3, 7]);
        assert_eq!(d.classes, 10);
    }

    #[test]
    fn idx_rejects_wrong_magic_and_truncation() {
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format { offset: 0, .. })));
        let short = idx_images(2, 2, 2, &[0; 5]);
        let err = parse_idx_images(&short).unwrap_err().to_string();
        assert!(err.contains("pixel data"), "{err}");
    }

    #[test]
    fn randomize_counts() {
        let d = Dataset::synthetic_blobs(10, 2, 2, 0.1, 1).unwrap();
        assert_eq!(d.randomize_labels(0.0, 3).unwrap(), d);
        assert_eq!(randomized_count(10, 0.5), 5);
        assert!(d.randomize_labels(1.5, 3).is_err());
    }

    #[test]
    fn full_randomization_is_uniform() {
        // Chi-square goodness of fit with 9 degrees of freedom; the 0.999
        // quantile is 27.88.
        let n = 10_000;
        let d = Dataset::new(vec![1], vec![0.0; n], vec![0; n], 10).unwrap();
        let r = d.randomize_labels(1.0, 11).unwrap();
        let expected = n as f64 / 10.0;
        let chi2: f64 = r
            .label_histogram()
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.88, "chi-square {chi2}");
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let d = Dataset::synthetic_blobs(50, 3, 5, 1.0, 9).unwrap();
        let rev: Vec<usize> = (0..50).rev().collect();
        let r = d.subset(&rev);
        let a = d.subset(&d.canonical_order());
        let b = r.subset(&r.canonical_order());
        assert_eq!(a, b);
    }
}
