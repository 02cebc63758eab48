use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{resolve_arch, SweepConfig};
use crate::codec::{prune, PruneConfig};
use crate::model::ParamRole;
use crate::nn::{randomized_count, train, Dataset, Evaluator, TrainConfig};
use crate::seed::{self, Stage};
use crate::{Error, Result};

/// Training accuracy after pruning one fitted network to one sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sparsity: f64,
    pub train_accuracy: f64,
    /// `train_accuracy / unpruned_accuracy`.
    pub retained: f64,
    pub seconds: f64,
}

/// One label-randomization fraction: the fitted network and its pruned variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub fraction: f64,
    pub randomized: usize,
    pub seed: u64,
    pub unpruned_accuracy: f64,
    /// Whether the unpruned network reached the configured fit accuracy
    /// within its training budget.
    pub fitted: bool,
    pub train_seconds: f64,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub arch: String,
    pub n: usize,
    pub seed: u64,
    pub train_steps: u64,
    pub fine_tune_steps: u64,
    pub runs: Vec<SweepRun>,
}

impl SweepResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("sweep result: {e}")))
    }

    pub fn is_empty(&self) -> bool {
        self.runs.iter().all(|r| r.cells.is_empty())
    }
}

/// For each fraction: randomize that share of labels, fit the network, then
/// prune its weight tensors to each sparsity with fine-tuning and record
/// the training accuracy that survives.
pub fn run_randomization_sweep(cfg: &SweepConfig, data: &Dataset, master_seed: u64) -> Result<SweepResult> {
    cfg.validate()?;
    let data = if cfg.subset > 0 && cfg.subset < data.len() {
        data.sample(cfg.subset, master_seed)
    } else {
        data.clone()
    };
    let arch = resolve_arch(&cfg.arch, &data)?;
    let roles: Vec<ParamRole> = arch.params().iter().map(|p| p.role).collect();
    let mut runs = Vec::with_capacity(cfg.fractions.len());
    for (i, &fraction) in cfg.fractions.iter().enumerate() {
        let run_seed = seed::sub_seed(master_seed, i as u64);
        let labels = data.randomize_labels(fraction, run_seed)?;
        let t = Instant::now();
        let model = train(
            &arch,
            &labels,
            &TrainConfig {
                seed: run_seed,
                ..cfg.train.clone()
            },
        )?;
        let ev = Evaluator::new(&model, 1)?;
        let unpruned_accuracy = 1.0 - ev.evaluate_01(&model, &labels)?.point_estimate;
        let train_seconds = t.elapsed().as_secs_f64();
        log::info!("fraction {fraction}: fitted to {unpruned_accuracy:.4} in {train_seconds:.1}s");
        if unpruned_accuracy < cfg.fit_accuracy {
            log::warn!("fraction {fraction}: budget exhausted at training accuracy {unpruned_accuracy:.4}");
        }
        let mut cells = Vec::with_capacity(cfg.sparsities.len());
        for &sparsity in &cfg.sparsities {
            let t = Instant::now();
            let pcfg = PruneConfig {
                target_sparsity: roles
                    .iter()
                    .map(|r| if *r == ParamRole::Weight { sparsity } else { 0.0 })
                    .collect(),
                schedule: if cfg.ramp_steps == 0 {
                    Vec::new()
                } else {
                    PruneConfig::linear_ramp(cfg.ramp_steps, cfg.ramp_points)
                },
                splicing: false,
                fine_tune: TrainConfig {
                    seed: seed::stage_seed(run_seed, Stage::Prune),
                    ..cfg.fine_tune.clone()
                },
            };
            let (pruned, _) = prune(&model, &labels, &pcfg)?;
            let acc = 1.0 - ev.evaluate_01(&pruned, &labels)?.point_estimate;
            log::info!("fraction {fraction}, sparsity {sparsity}: accuracy {acc:.4}");
            cells.push(SweepCell {
                sparsity,
                train_accuracy: acc,
                retained: if unpruned_accuracy > 0.0 { acc / unpruned_accuracy } else { 0.0 },
                seconds: t.elapsed().as_secs_f64(),
            });
        }
        runs.push(SweepRun {
            fraction,
            randomized: randomized_count(labels.len(), fraction),
            seed: run_seed,
            unpruned_accuracy,
            fitted: unpruned_accuracy >= cfg.fit_accuracy,
            train_seconds,
            cells,
        });
    }
    Ok(SweepResult {
        arch: cfg.arch.clone(),
        n: data.len(),
        seed: master_seed,
        train_steps: cfg.train.steps,
        fine_tune_steps: cfg.fine_tune.steps,
        runs,
    })
}
