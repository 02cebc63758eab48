use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::net::{softmax_xent, Network, Workspace};
use crate::model::{ArchSpec, LayerTensor, Model, ParamRole};
use crate::seed::{self, Stage};
use crate::{Error, Result};

/// Momentum SGD with L2 on weights and inverse-time learning-rate decay:
/// `lr(t) = learning_rate / (1 + decay_rate · t / decay_interval)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_interval: u64,
    pub momentum: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 64,
            learning_rate: 0.05,
            decay_rate: 1e-4,
            decay_interval: 1,
            momentum: 0.9,
            l2: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.decay_rate, self.momentum, self.l2];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("training rates must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.decay_interval == 0 {
            return Err(Error::Config("decay interval must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate / (1.0 + self.decay_rate * step as f64 / self.decay_interval as f64)
    }

    /// Steps needed for `epochs` passes over `n` examples.
    pub fn steps_for_epochs(&self, epochs: f64, n: usize) -> u64 {
        (epochs * n as f64 / self.batch_size as f64).ceil() as u64
    }
}

/// Mini-batch gradients of the mean cross-entropy.
#[derive(Debug)]
pub struct GradientEngine {
    net: Network,
    ws: Workspace<f32>,
    x: Vec<f32>,
    y: Vec<u8>,
    dlogits: Vec<f32>,
}

impl GradientEngine {
    pub fn new(arch: &ArchSpec) -> Result<Self> {
        Ok(GradientEngine {
            net: Network::new(arch)?,
            ws: Workspace::default(),
            x: Vec::new(),
            y: Vec::new(),
            dlogits: Vec::new(),
        })
    }

    /// Zeroes `grads`, fills them with the batch gradient and returns the loss.
    pub fn loss_and_grad(
        &mut self,
        model: &Model,
        data: &Dataset,
        batch: &[usize],
        grads: &mut Vec<Vec<f32>>,
    ) -> Result<f64> {
        if data.example_len() != self.net.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "examples have {} values, network expects {}",
                data.example_len(),
                self.net.input_len()
            )));
        }
        grads.resize_with(model.layers.len(), Vec::new);
        for (g, l) in grads.iter_mut().zip(&model.layers) {
            g.clear();
            g.resize(l.len(), 0.0);
        }
        self.x.clear();
        self.y.clear();
        for &i in batch {
            self.x.extend_from_slice(data.example(i));
            self.y.push(data.labels[i]);
        }
        let params: Vec<&[f32]> = model.layers.iter().map(|l| l.values.as_slice()).collect();
        let logits = self.net.forward(&params, &self.x, batch.len(), &mut self.ws)?;
        let loss = softmax_xent(logits, &self.y, self.net.classes(), &mut self.dlogits);
        self.net.backward(&params, &self.dlogits, &mut self.ws, grads)?;
        Ok(loss)
    }
}

/// Seeded epoch-wise shuffling over the dataset's canonical order.
#[derive(Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    perm: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(data: &Dataset, seed: u64) -> Self {
        BatchSampler {
            order: data.canonical_order(),
            perm: Vec::new(),
            pos: usize::MAX,
            rng: seed::rng(seed::stage_seed(seed, Stage::Shuffle)),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> &[usize] {
        let size = size.min(self.order.len());
        if self.pos.saturating_add(size) > self.order.len() {
            self.perm.clone_from(&self.order);
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = &self.perm[self.pos..self.pos + size];
        self.pos += size;
        b
    }
}

/// Momentum SGD state.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<Vec<f32>>,
    momentum: f32,
    l2: f32,
    is_weight: Vec<bool>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64, l2: f64) -> Self {
        Sgd {
            velocity: model.layers.iter().map(|l| vec![0.0; l.len()]).collect(),
            momentum: momentum as f32,
            l2: l2 as f32,
            is_weight: model.arch.params().iter().map(|p| p.role == ParamRole::Weight).collect(),
        }
    }

    /// `v ← μv − lr(g + λw)`, `w ← w + v`.
    pub fn apply(&mut self, layers: &mut [LayerTensor], grads: &[Vec<f32>], lr: f64) {
        let lr = lr as f32;
        for (i, ((layer, g), v)) in layers.iter_mut().zip(grads).zip(&mut self.velocity).enumerate() {
            let l2 = if self.is_weight[i] { self.l2 } else { 0.0 };
            for ((w, &g), v) in layer.values.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v - lr * (g + l2 * *w);
                *w += *v;
            }
        }
    }
}

/// Trains a freshly initialised network.
pub fn train(arch: &ArchSpec, data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let model = Model::init(arch.clone(), seed::stage_seed(cfg.seed, Stage::Init))?;
    train_from(model, data, cfg, None)
}

/// Continues training `model`. With `masks` (one per parameter tensor, `None`
/// for unconstrained tensors) masked-out coordinates stay exactly zero.
pub fn train_from(mut model: Model, data: &Dataset, cfg: &TrainConfig, masks: Option<&[Option<Vec<bool>>]>) -> Result<Model> {
    cfg.validate()?;
    model.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if cfg.steps == 0 {
        return Ok(model);
    }
    if let Some(masks) = masks {
        if masks.len() != model.layers.len() {
            return Err(Error::ShapeMismatch("one mask entry per parameter tensor is required".into()));
        }
        for (m, l) in masks.iter().zip(model.layers.iter_mut()) {
            if let Some(m) = m {
                if m.len() != l.len() {
                    return Err(Error::ShapeMismatch(format!("mask for {} has wrong length", l.name)));
                }
                for (w, &keep) in l.values.iter_mut().zip(m) {
                    if !keep {
                        *w = 0.0;
                    }
                }
            }
        }
    }
    let mut engine = GradientEngine::new(&model.arch)?;
    let mut sampler = BatchSampler::new(data, cfg.seed);
    let mut sgd = Sgd::new(&model, cfg.momentum, cfg.l2);
    let mut grads = Vec::new();
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(cfg.batch_size).to_vec();
        let loss = engine.loss_and_grad(&model, data, &batch, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        if let Some(masks) = masks {
            zero_masked(&mut grads, masks);
        }
        sgd.apply(&mut model.layers, &grads, cfg.learning_rate_at(step));
        if let Some(masks) = masks {
            apply_masks(&mut model.layers, masks);
        }
        if step % 500 == 0 {
            log::debug!("step {step}: loss {loss:.4}");
        }
    }
    if model.layers.iter().any(|l| l.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::TrainingDiverged {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(model)
}

pub(crate) fn zero_masked(grads: &mut [Vec<f32>], masks: &[Option<Vec<bool>>]) {
    for (g, m) in grads.iter_mut().zip(masks) {
        if let Some(m) = m {
            for (g, &keep) in g.iter_mut().zip(m) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
    }
}

pub(crate) fn apply_masks(layers: &mut [LayerTensor], masks: &[Option<Vec<bool>>]) {
    for (l, m) in layers.iter_mut().zip(masks) {
        if let Some(m) = m {
            for (w, &keep) in l.values.iter_mut().zip(m) {
                if !keep {
                    *w = 0.0;
                }
            }
        }
    }
}
