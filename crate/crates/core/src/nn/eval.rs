use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::net::{argmax, Network, Workspace};
use crate::model::{Model, StochasticPosterior};
use rand::Rng;

use crate::seed;
use crate::{Error, Result};

const CHUNK: usize = 256;

/// Empirical 0-1 risk, optionally of a stochastic classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub point_estimate: f64,
    /// One full-dataset error per posterior draw; empty for a deterministic model.
    pub per_draw_errors: Vec<f64>,
    pub draws: usize,
    pub seed: Option<u64>,
    pub n: usize,
}

/// Reusable evaluator bound to one architecture.
#[derive(Debug)]
pub struct Evaluator {
    net: Network,
    threads: usize,
}

impl Evaluator {
    /// `threads` of 0 or 1 evaluates on the calling thread.
    pub fn new(model: &Model, threads: usize) -> Result<Self> {
        Ok(Evaluator {
            net: Network::new(&model.arch)?,
            threads: threads.max(1),
        })
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.example_len() != self.net.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "examples have {} values, network expects {}",
                data.example_len(),
                self.net.input_len()
            )));
        }
        if data.classes > self.net.classes() {
            return Err(Error::ShapeMismatch(format!(
                "dataset has {} classes, network outputs {}",
                data.classes,
                self.net.classes()
            )));
        }
        Ok(())
    }

    /// Predicted class per example.
    pub fn predict(&self, model: &Model, data: &Dataset) -> Result<Vec<usize>> {
        self.check(data)?;
        let mut out = vec![0; data.len()];
        let per_thread = data.len().div_ceil(self.threads).max(1);
        let params: Vec<&[f32]> = model.layers.iter().map(|l| l.values.as_slice()).collect();
        let d = data.example_len();
        let classes = self.net.classes();
        std::thread::scope(|s| -> Result<()> {
            let mut handles = Vec::new();
            for (t, preds) in out.chunks_mut(per_thread).enumerate() {
                let params = &params;
                let net = &self.net;
                let start = t * per_thread;
                let mut job = move || -> Result<()> {
                    let mut ws = Workspace::default();
                    for (c, preds) in preds.chunks_mut(CHUNK).enumerate() {
                        let lo = start + c * CHUNK;
                        let x = &data.features[lo * d..(lo + preds.len()) * d];
                        let logits = net.forward(params, x, preds.len(), &mut ws)?;
                        for (p, row) in preds.iter_mut().zip(logits.chunks_exact(classes)) {
                            *p = argmax(row);
                        }
                    }
                    Ok(())
                };
                if self.threads == 1 {
                    job()?;
                } else {
                    handles.push(s.spawn(job));
                }
            }
            for h in handles {
                h.join().expect("evaluation thread panicked")?;
            }
            Ok(())
        })?;
        Ok(out)
    }

    pub fn misclassified(&self, model: &Model, data: &Dataset) -> Result<usize> {
        let preds = self.predict(model, data)?;
        Ok(preds.iter().zip(&data.labels).filter(|(p, &y)| **p != y as usize).count())
    }

    pub fn evaluate_01(&self, model: &Model, data: &Dataset) -> Result<ErrorEstimate> {
        let wrong = self.misclassified(model, data)?;
        Ok(ErrorEstimate {
            point_estimate: ratio(wrong, data.len()),
            per_draw_errors: Vec::new(),
            draws: 0,
            seed: None,
            n: data.len(),
        })
    }

    pub fn evaluate_stochastic(
        &self,
        posterior: &StochasticPosterior,
        data: &Dataset,
        draws: usize,
        seed: u64,
    ) -> Result<ErrorEstimate> {
        if draws == 0 {
            return Err(Error::InvalidInput("at least one posterior draw is required".into()));
        }
        let mut errors = Vec::with_capacity(draws);
        for j in 0..draws {
            let m = posterior.sample(seed, j as u64);
            errors.push(ratio(self.misclassified(&m, data)?, data.len()));
        }
        Ok(ErrorEstimate {
            point_estimate: errors.iter().sum::<f64>() / draws as f64,
            per_draw_errors: errors,
            draws,
            seed: Some(seed),
            n: data.len(),
        })
    }
}

impl Evaluator {
    /// Monte-Carlo risk with `draws` independent units, each a fresh weight
    /// sample scored on `batch` examples drawn uniformly with replacement.
    /// Every unit is an i.i.d. `[0, 1]` variable whose mean is the posterior's
    /// empirical risk, so many small units give a tighter certified estimate
    /// than a few full passes at equal cost.
    pub fn evaluate_stochastic_batched(
        &self,
        posterior: &StochasticPosterior,
        data: &Dataset,
        draws: usize,
        batch: usize,
        seed: u64,
    ) -> Result<ErrorEstimate> {
        self.check(data)?;
        if draws == 0 || batch == 0 || data.is_empty() {
            return Err(Error::InvalidInput("need at least one draw, one example per draw and data".into()));
        }
        let mut errors = vec![0.0; draws];
        let per_thread = draws.div_ceil(self.threads);
        let d = data.example_len();
        let classes = self.net.classes();
        std::thread::scope(|s| -> Result<()> {
            let mut handles = Vec::new();
            for (t, chunk) in errors.chunks_mut(per_thread).enumerate() {
                let net = &self.net;
                let mut job = move || -> Result<()> {
                    let mut ws = Workspace::default();
                    let mut x = Vec::with_capacity(batch * d);
                    for (i, e) in chunk.iter_mut().enumerate() {
                        let j = (t * per_thread + i) as u64;
                        let model = posterior.sample(seed, j);
                        let mut rng = seed::rng(seed::sub_seed(seed::sub_seed(seed, j), 1));
                        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.len())).collect();
                        x.clear();
                        for &k in &idx {
                            x.extend_from_slice(data.example(k));
                        }
                        let params: Vec<&[f32]> = model.layers.iter().map(|l| l.values.as_slice()).collect();
                        let logits = net.forward(&params, &x, batch, &mut ws)?;
                        let wrong = logits
                            .chunks_exact(classes)
                            .zip(&idx)
                            .filter(|(row, &k)| argmax(row) != data.labels[k] as usize)
                            .count();
                        *e = ratio(wrong, batch);
                    }
                    Ok(())
                };
                if self.threads == 1 {
                    job()?;
                } else {
                    handles.push(s.spawn(job));
                }
            }
            for h in handles {
                h.join().expect("evaluation thread panicked")?;
            }
            Ok(())
        })?;
        Ok(ErrorEstimate {
            point_estimate: errors.iter().sum::<f64>() / draws as f64,
            per_draw_errors: errors,
            draws,
            seed: Some(seed),
            n: data.len(),
        })
    }
}

fn ratio(wrong: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        wrong as f64 / n as f64
    }
}

/// Fraction of misclassified examples; argmax ties go to the smallest class.
pub fn evaluate_01(model: &Model, data: &Dataset) -> Result<ErrorEstimate> {
    Evaluator::new(model, 1)?.evaluate_01(model, data)
}

/// Monte-Carlo 0-1 risk of the posterior: one fresh weight draw per full pass.
pub fn evaluate_stochastic(p: &StochasticPosterior, data: &Dataset, draws: usize, seed: u64) -> Result<ErrorEstimate> {
    Evaluator::new(&p.base, 1)?.evaluate_stochastic(p, data, draws, seed)
}
