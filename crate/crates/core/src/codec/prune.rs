use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::nn::{apply_masks, zero_masked, BatchSampler, Dataset, GradientEngine, Sgd, TrainConfig};
use crate::{Error, Result};

/// A point of the pruning ramp: from `step` on, each tensor is held at
/// `fraction` of its target sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampPoint {
    pub step: u64,
    pub fraction: f64,
}

/// Magnitude pruning with masked fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// Target fraction of zeros per parameter tensor, in model order.
    pub target_sparsity: Vec<f64>,
    /// Nondecreasing ramp ending at fraction 1. Empty means one-shot pruning at step 0.
    #[serde(default)]
    pub schedule: Vec<RampPoint>,
    /// Let pruned weights whose dense shadow value grows back re-enter the
    /// support at ramp points.
    #[serde(default)]
    pub splicing: bool,
    #[serde(default = "no_fine_tune")]
    pub fine_tune: TrainConfig,
}

fn no_fine_tune() -> TrainConfig {
    TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    }
}

impl PruneConfig {
    pub fn uniform(sparsity: f64, tensors: usize) -> Self {
        PruneConfig {
            target_sparsity: vec![sparsity; tensors],
            schedule: Vec::new(),
            splicing: false,
            fine_tune: no_fine_tune(),
        }
    }

    /// `points` evenly spaced ramp points over the first `ramp_steps` steps.
    pub fn linear_ramp(ramp_steps: u64, points: u64) -> Vec<RampPoint> {
        let points = points.max(1);
        (1..=points)
            .map(|i| RampPoint {
                step: ramp_steps * (i - 1) / points,
                fraction: i as f64 / points as f64,
            })
            .collect()
    }

    pub fn validate(&self, tensors: usize) -> Result<()> {
        if self.target_sparsity.len() != tensors {
            return Err(Error::Config(format!(
                "{} sparsity targets for {tensors} parameter tensors",
                self.target_sparsity.len()
            )));
        }
        if let Some(s) = self.target_sparsity.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::Config(format!("target sparsity {s} outside [0, 1)")));
        }
        for w in self.schedule.windows(2) {
            if w[1].fraction < w[0].fraction || w[1].step < w[0].step {
                return Err(Error::Config("pruning schedule must be nondecreasing".into()));
            }
        }
        if let Some(last) = self.schedule.last() {
            if last.fraction != 1.0 {
                return Err(Error::Config("pruning schedule must end at the target sparsity".into()));
            }
            if self.schedule.iter().any(|p| !(0.0..=1.0).contains(&p.fraction)) {
                return Err(Error::Config("ramp fractions must lie in [0, 1]".into()));
            }
            if last.step > self.fine_tune.steps && self.fine_tune.steps > 0 {
                return Err(Error::Config("ramp extends past the fine-tuning budget".into()));
            }
        }
        self.fine_tune.validate()
    }

    fn ramp(&self) -> Vec<RampPoint> {
        if self.schedule.is_empty() {
            vec![RampPoint { step: 0, fraction: 1.0 }]
        } else {
            self.schedule.clone()
        }
    }
}

/// Number of zeros for `sparsity` over `p` values: `⌈sparsity·p⌉`.
pub fn zeros_for(sparsity: f64, p: usize) -> usize {
    ((sparsity * p as f64).ceil() as usize).min(p)
}

/// Keep-mask zeroing the `⌈sparsity·p⌉` smallest magnitudes; among equal
/// magnitudes the lower flat index is pruned first. With `current`, already
/// pruned entries are pruned first regardless of value.
pub fn magnitude_mask(values: &[f32], sparsity: f64, current: Option<&[bool]>) -> Vec<bool> {
    let z = zeros_for(sparsity, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| (current.is_some_and(|c| c[i]), values[i].abs());
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    let mut mask = vec![true; values.len()];
    for &i in &order[..z] {
        mask[i] = false;
    }
    mask
}

/// Prunes every parameter tensor to its target sparsity while fine-tuning the
/// survivors. Returns the pruned model and the keep-mask of every tensor.
pub fn prune(model: &Model, data: &Dataset, cfg: &PruneConfig) -> Result<(Model, Vec<Vec<bool>>)> {
    model.validate()?;
    cfg.validate(model.layers.len())?;
    let ramp = cfg.ramp();
    let total_steps = cfg.fine_tune.steps.max(ramp.last().map_or(0, |p| p.step));
    let mut shadow = model.clone();
    let mut masks: Vec<Vec<bool>> = model.layers.iter().map(|l| vec![true; l.len()]).collect();

    let mut engine = GradientEngine::new(&model.arch)?;
    let mut sampler = BatchSampler::new(data, cfg.fine_tune.seed);
    let mut sgd = Sgd::new(model, cfg.fine_tune.momentum, cfg.fine_tune.l2);
    let mut grads = Vec::new();
    let mut next_point = 0;
    let mut step = 0u64;
    loop {
        while next_point < ramp.len() && ramp[next_point].step <= step {
            let frac = ramp[next_point].fraction;
            for ((mask, layer), &target) in masks.iter_mut().zip(&shadow.layers).zip(&cfg.target_sparsity) {
                let current = (!cfg.splicing).then_some(mask.as_slice());
                *mask = magnitude_mask(&layer.values, frac * target, current);
            }
            next_point += 1;
        }
        if step >= total_steps || cfg.fine_tune.steps == 0 {
            break;
        }
        let mut masked = shadow.clone();
        let opt: Vec<Option<Vec<bool>>> = masks.iter().cloned().map(Some).collect();
        apply_masks(&mut masked.layers, &opt);
        let batch = sampler.next_batch(cfg.fine_tune.batch_size).to_vec();
        let loss = engine.loss_and_grad(&masked, data, &batch, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        if cfg.splicing {
            // Straight-through: masked forward, dense update.
            sgd.apply(&mut shadow.layers, &grads, cfg.fine_tune.learning_rate_at(step));
        } else {
            zero_masked(&mut grads, &opt);
            sgd.apply(&mut shadow.layers, &grads, cfg.fine_tune.learning_rate_at(step));
            apply_masks(&mut shadow.layers, &opt);
        }
        if step.is_multiple_of(500) {
            log::debug!("prune step {step}: loss {loss:.4}");
        }
        step += 1;
    }

    let opt: Vec<Option<Vec<bool>>> = masks.iter().cloned().map(Some).collect();
    apply_masks(&mut shadow.layers, &opt);
    let arch_params = model.arch.params();
    for (mask, spec) in masks.iter().zip(&arch_params) {
        if mask.iter().all(|&k| !k) && spec.role == crate::model::ParamRole::Weight {
            log::warn!("{} is pruned to zero: the layer is degenerate", spec.name);
        }
    }
    Ok((shadow, masks))
}
