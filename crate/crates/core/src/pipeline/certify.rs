use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{resolve_arch, PipelineConfig, Splits};
use crate::bound::{certify, BoundReport};
use crate::codec::{coded_sizes, prune, quantize, save_triplet};
use crate::model::{decode_weights, save_model, ArchSpec, CompressedTriplet, Model, StochasticPosterior};
use crate::nn::{train, Dataset, ErrorEstimate, Evaluator};
use crate::{Error, Result};

pub const MODEL_FILE: &str = "model.mdl";
pub const PRUNED_FILE: &str = "pruned.mdl";
pub const TRIPLET_FILE: &str = "triplet.cmp1";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// A certificate together with the context needed to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifySummary {
    pub arch: String,
    pub parameters: u64,
    /// Dense 32-bit size of every parameter tensor.
    pub original_bits: u64,
    /// Fraction of zero weights (biases excluded) in the compressed model.
    pub weight_sparsity: f64,
    pub dense_train_error: Option<f64>,
    pub dense_test_error: Option<f64>,
    pub compressed_train_error: f64,
    pub compressed_test_error: Option<f64>,
    pub report: BoundReport,
    /// The full run configuration, as TOML.
    pub config: String,
}

impl CertifySummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("certify summary: {e}")))
    }
}

/// Keep-masks implied by a pruned model: every nonzero value is retained.
pub fn masks_of(model: &Model) -> Vec<Vec<bool>> {
    model
        .layers
        .iter()
        .map(|l| l.values.iter().map(|v| *v != 0.0).collect())
        .collect()
}

pub fn stage_train(cfg: &PipelineConfig, arch: &ArchSpec, data: &Dataset) -> Result<Model> {
    let t = Instant::now();
    let model = train(arch, data, &cfg.train_config()).map_err(|e| e.in_stage("train"))?;
    log::info!("trained {} steps in {:.1?}", cfg.train.steps, t.elapsed());
    Ok(model)
}

pub fn stage_prune(cfg: &PipelineConfig, model: &Model, data: &Dataset) -> Result<Model> {
    let t = Instant::now();
    let pcfg = cfg.prune_config(&model.arch).map_err(|e| e.in_stage("prune"))?;
    let (pruned, _) = prune(model, data, &pcfg).map_err(|e| e.in_stage("prune"))?;
    log::info!(
        "pruned to {} of {} weights in {:.1?}",
        pruned.nonzero_weights(),
        pruned.weight_count(),
        t.elapsed()
    );
    Ok(pruned)
}

pub fn stage_quantize(cfg: &PipelineConfig, pruned: &Model, data: &Dataset) -> Result<CompressedTriplet> {
    let t = Instant::now();
    let triplet = quantize(pruned, &masks_of(pruned), &cfg.quantize_config(), data).map_err(|e| e.in_stage("quantize"))?;
    log::info!("quantized {} retained values in {:.1?}", triplet.k(), t.elapsed());
    Ok(triplet)
}

/// Estimates the stochastic training error of the compressed network and
/// turns it, with the measured code length, into a certificate.
pub fn stage_certify(
    cfg: &PipelineConfig,
    triplet: &CompressedTriplet,
    arch: &ArchSpec,
    splits: &Splits,
    dense: Option<&Model>,
) -> Result<CertifySummary> {
    let inner = || -> Result<CertifySummary> {
        let t = Instant::now();
        let decoded = decode_weights(triplet, arch)?;
        let sigmas = cfg.noise.sigmas(&decoded)?;
        let posterior = StochasticPosterior::from_triplet(triplet, arch, sigmas.clone())?;
        let ev = Evaluator::new(&decoded, cfg.evaluation.threads)?;
        let data = &splits.train;
        let seed = cfg.noise_seed();
        let errors = estimate(&ev, &posterior, data, cfg, seed)?;
        let sizes = coded_sizes(triplet)?;
        let prior = cfg.bound.prior(arch);
        let mut report = certify(triplet, &sizes, &sigmas, None, &prior, &errors, data.len() as u64)?;
        report.notes.push(
            "support chosen by magnitude pruning on a ramp schedule with optional splice-back, not dynamic network surgery"
                .into(),
        );
        if cfg.evaluation.examples_per_draw > 0 {
            report.notes.push(format!(
                "each draw scores {} training examples sampled uniformly with replacement",
                cfg.evaluation.examples_per_draw
            ));
        }
        if cfg.noise.granularity == crate::model::Granularity::PerFilter {
            report
                .notes
                .push("convolutions use one noise scale: the mean of their per-filter ranges".into());
        }
        let dense_err = |m: &Model, d: &Dataset| -> Result<f64> { Ok(ev.evaluate_01(m, d)?.point_estimate) };
        let summary = CertifySummary {
            arch: cfg.arch.clone(),
            parameters: arch.params().iter().map(|p| p.len() as u64).sum(),
            original_bits: 32 * arch.params().iter().map(|p| p.len() as u64).sum::<u64>(),
            weight_sparsity: 1.0 - decoded.nonzero_weights() as f64 / decoded.weight_count() as f64,
            dense_train_error: dense.map(|m| dense_err(m, data)).transpose()?,
            dense_test_error: match (dense, &splits.test) {
                (Some(m), Some(test)) => Some(dense_err(m, test)?),
                _ => None,
            },
            compressed_train_error: dense_err(&decoded, data)?,
            compressed_test_error: splits.test.as_ref().map(|d| dense_err(&decoded, d)).transpose()?,
            report,
            config: cfg.to_toml()?,
        };
        log::info!("certified in {:.1?}: bound {:.4}", t.elapsed(), summary.report.bound);
        Ok(summary)
    };
    inner().map_err(|e| e.in_stage("certify"))
}

fn estimate(
    ev: &Evaluator,
    posterior: &StochasticPosterior,
    data: &Dataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ErrorEstimate> {
    let e = &cfg.evaluation;
    if e.examples_per_draw == 0 {
        ev.evaluate_stochastic(posterior, data, e.draws, seed)
    } else {
        ev.evaluate_stochastic_batched(posterior, data, e.draws, e.examples_per_draw, seed)
    }
}

/// Paths of the artifacts a certify run writes into `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub config: PathBuf,
    pub model: PathBuf,
    pub pruned: PathBuf,
    pub triplet: PathBuf,
    pub report: PathBuf,
    pub summary: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts {
            config: dir.join(CONFIG_FILE),
            model: dir.join(MODEL_FILE),
            pruned: dir.join(PRUNED_FILE),
            triplet: dir.join(TRIPLET_FILE),
            report: dir.join(REPORT_FILE),
            summary: dir.join(SUMMARY_FILE),
        }
    }
}

/// Train, prune, quantize, encode and certify, persisting every
/// intermediate artifact in `cfg.out_dir` as soon as it exists. A failing
/// stage is named in the error and leaves the earlier artifacts in place.
pub fn run_certify_pipeline(cfg: &PipelineConfig) -> Result<CertifySummary> {
    cfg.validate()?;
    let out = Artifacts::in_dir(&cfg.out_dir);
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(&out.config, cfg.to_toml()?)?;

    let splits = cfg.data.load(cfg.seed).map_err(|e| e.in_stage("data"))?;
    let arch = resolve_arch(&cfg.arch, &splits.train).map_err(|e| e.in_stage("data"))?;

    let dense = stage_train(cfg, &arch, &splits.train)?;
    save_model(&dense, &out.model).map_err(|e| e.in_stage("train"))?;

    let pruned = stage_prune(cfg, &dense, &splits.train)?;
    save_model(&pruned, &out.pruned).map_err(|e| e.in_stage("prune"))?;

    let triplet = stage_quantize(cfg, &pruned, &splits.train)?;
    save_triplet(&triplet, &out.triplet).map_err(|e| e.in_stage("quantize"))?;

    let summary = stage_certify(cfg, &triplet, &arch, &splits, Some(&dense))?;
    fs::write(&out.report, summary.report.to_json()?)?;
    fs::write(&out.summary, summary.to_json()?)?;
    Ok(summary)
}
