use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bound::{LengthPrior, MixtureQuadrature, PriorSpec, TauGrid};
use crate::codec::{PruneConfig, QuantizeConfig};
use crate::model::{ArchSpec, NoiseSpec, ParamRole};
use crate::nn::{Dataset, MnistSplit, TrainConfig};
use crate::seed::{self, Stage};
use crate::{Error, Result};

/// A complete, declarative description of one certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// `lenet5`, `small-conv`, `mlp:H1,H2,...` or a path to a descriptor file.
    pub arch: String,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneSpec,
    #[serde(default)]
    pub quantize: QuantizeConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("occam-out")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stage configs with seeds derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn prune_config(&self, arch: &ArchSpec) -> Result<PruneConfig> {
        let mut cfg = self.prune.to_prune_config(arch)?;
        cfg.fine_tune.seed = seed::stage_seed(self.seed, Stage::Prune);
        cfg.validate(arch.params().len())?;
        Ok(cfg)
    }

    pub fn quantize_config(&self) -> QuantizeConfig {
        let base = seed::stage_seed(self.seed, Stage::Quantize);
        let mut cfg = self.quantize.clone();
        cfg.seed = base;
        cfg.fine_tune.seed = seed::sub_seed(base, u64::MAX);
        cfg
    }

    pub fn noise_seed(&self) -> u64 {
        seed::stage_seed(self.seed, Stage::Noise)
    }

    /// Checks everything that can be checked before any data is loaded.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.bound.validate()?;
        self.evaluation.validate()?;
        if !(self.noise.fraction_of_range >= 0.0 && self.noise.fraction_of_range.is_finite()) {
            return Err(Error::Config(format!(
                "noise fraction {} must be finite and non-negative",
                self.noise.fraction_of_range
            )));
        }
        Ok(())
    }
}

/// Where the training (and optional held-out) examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX files `{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        /// Train on a seeded random subset of this size.
        #[serde(default)]
        train_subset: Option<usize>,
    },
    /// Gaussian blobs; the test split is drawn from the same blobs.
    Synthetic {
        n: usize,
        #[serde(default)]
        test_n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_spread() -> f64 {
    0.5
}

pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// Training split plus an optional held-out split.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl DataSpec {
    pub fn load(&self, master_seed: u64) -> Result<Splits> {
        match self {
            DataSpec::Mnist { dir, train_subset } => {
                let dir = dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
                let train = Dataset::load_mnist(&dir, MnistSplit::Train)?;
                let train = match train_subset {
                    Some(n) if *n < train.len() => train.sample(*n, master_seed),
                    _ => train,
                };
                let test = Dataset::load_mnist(&dir, MnistSplit::Test).ok();
                Ok(Splits { train, test })
            }
            &DataSpec::Synthetic {
                n,
                test_n,
                dim,
                classes,
                spread,
            } => {
                let s = seed::stage_seed(master_seed, Stage::Synthetic);
                let all = Dataset::synthetic_blobs(n + test_n, dim, classes, spread, s)?;
                let train = all.subset(&(0..n).collect::<Vec<_>>());
                let test = (test_n > 0).then(|| all.subset(&(n..n + test_n).collect::<Vec<_>>()));
                Ok(Splits { train, test })
            }
        }
    }
}

/// Resolves an architecture name against the data it will be trained on.
pub fn resolve_arch(name: &str, data: &Dataset) -> Result<ArchSpec> {
    if let Some(a) = ArchSpec::named(name) {
        return Ok(a);
    }
    if let Some(hidden) = name.strip_prefix("mlp:").or(if name == "mlp" { Some("") } else { None }) {
        let hidden = hidden
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad mlp widths in `{name}`: {e}")))?;
        return Ok(ArchSpec::mlp(data.example_len(), &hidden, data.classes));
    }
    let path = Path::new(name);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return text.parse();
    }
    Err(Error::Config(format!("unknown architecture `{name}`")))
}

/// Pruning targets and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSpec {
    /// Per-tensor sparsity in model order; overrides the two fields below.
    pub target_sparsity: Vec<f64>,
    /// Sparsity of every weight tensor when no per-tensor list is given.
    pub weight_sparsity: f64,
    /// Sparsity of every bias tensor when no per-tensor list is given.
    pub bias_sparsity: f64,
    /// The ramp reaches the target after this many fine-tuning steps; 0 prunes in one shot.
    pub ramp_steps: u64,
    pub ramp_points: u64,
    pub splicing: bool,
    pub fine_tune: TrainConfig,
}

impl Default for PruneSpec {
    fn default() -> Self {
        PruneSpec {
            target_sparsity: Vec::new(),
            weight_sparsity: 0.0,
            bias_sparsity: 0.0,
            ramp_steps: 0,
            ramp_points: 1,
            splicing: false,
            fine_tune: TrainConfig {
                steps: 0,
                ..TrainConfig::default()
            },
        }
    }
}

impl PruneSpec {
    pub fn to_prune_config(&self, arch: &ArchSpec) -> Result<PruneConfig> {
        let params = arch.params();
        let target_sparsity = if self.target_sparsity.is_empty() {
            params
                .iter()
                .map(|p| match p.role {
                    ParamRole::Weight => self.weight_sparsity,
                    ParamRole::Bias => self.bias_sparsity,
                })
                .collect()
        } else {
            self.target_sparsity.clone()
        };
        let schedule = if self.ramp_steps == 0 {
            Vec::new()
        } else {
            PruneConfig::linear_ramp(self.ramp_steps, self.ramp_points)
        };
        let cfg = PruneConfig {
            target_sparsity,
            schedule,
            splicing: self.splicing,
            fine_tune: self.fine_tune.clone(),
        };
        cfg.validate(params.len())?;
        Ok(cfg)
    }
}

/// Prior and confidence parameters of the certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    pub alpha: f64,
    pub epsilon_pb: f64,
    pub epsilon_mc: f64,
    /// Log-spaced `τ` values per tensor, in units of the tensor's init std.
    pub tau_points: usize,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub max_bits_log2: u32,
    pub quadrature: MixtureQuadrature,
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec {
            alpha: 1.05,
            epsilon_pb: 0.04,
            epsilon_mc: 0.01,
            tau_points: 32,
            tau_lo: 1e-4,
            tau_hi: 1.0,
            max_bits_log2: LengthPrior::default().max_bits_log2,
            quadrature: MixtureQuadrature::default(),
        }
    }
}

impl BoundSpec {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = |e: f64| e > 0.0 && e < 1.0;
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !eps_ok(self.epsilon_pb) || !eps_ok(self.epsilon_mc) || self.epsilon_pb + self.epsilon_mc >= 1.0 {
            return Err(Error::Config("confidence parameters must lie in (0, 1) and sum below 1".into()));
        }
        if self.tau_points == 0 || !(self.tau_lo > 0.0 && self.tau_lo <= self.tau_hi && self.tau_hi.is_finite()) {
            return Err(Error::Config("τ grid needs at least one point and 0 < lo ≤ hi".into()));
        }
        Ok(())
    }

    /// The data-independent prior for `arch`: the `τ` grid scales with each
    /// tensor's initialisation std, which the architecture alone determines.
    pub fn prior(&self, arch: &ArchSpec) -> PriorSpec {
        PriorSpec {
            tau_grid: TauGrid::LogSpaced {
                points: self.tau_points,
                lo: self.tau_lo,
                hi: self.tau_hi,
                scales: arch.params().iter().map(|p| p.init_std()).collect(),
            },
            alpha: self.alpha,
            epsilon_pb: self.epsilon_pb,
            epsilon_mc: self.epsilon_mc,
            length_prior: LengthPrior {
                max_bits_log2: self.max_bits_log2,
            },
            quadrature: self.quadrature,
        }
    }
}

/// Monte-Carlo estimation of the stochastic training error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub draws: usize,
    /// Examples scored per draw, sampled with replacement; 0 scores the whole
    /// training set with every draw.
    pub examples_per_draw: usize,
    pub threads: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            draws: 20_000,
            examples_per_draw: 16,
            threads: 1,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("at least one posterior draw is required".into()));
        }
        Ok(())
    }
}

/// Label-randomization sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub arch: String,
    /// Seeded training subset size; 0 uses every example.
    pub subset: usize,
    pub fractions: Vec<f64>,
    pub sparsities: Vec<f64>,
    pub train: TrainConfig,
    /// Training accuracy regarded as fitting the labels.
    pub fit_accuracy: f64,
    /// Pruning schedule per cell; the sparsity comes from `sparsities`.
    pub ramp_steps: u64,
    pub ramp_points: u64,
    pub fine_tune: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            arch: "small-conv".into(),
            subset: 10_000,
            fractions: vec![0.0, 0.5, 1.0],
            sparsities: vec![0.5, 0.8],
            train: TrainConfig {
                steps: 6000,
                ..TrainConfig::default()
            },
            fit_accuracy: 0.99,
            ramp_steps: 0,
            ramp_points: 1,
            fine_tune: TrainConfig {
                steps: 300,
                ..TrainConfig::default()
            },
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.sparsities.is_empty() {
            return Err(Error::Config("a sweep needs at least one fraction and one sparsity".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!("randomization fraction {f} outside [0, 1]")));
        }
        if let Some(s) = self.sparsities.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::Config(format!("sparsity {s} outside [0, 1)")));
        }
        self.train.validate()?;
        self.fine_tune.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            arch = "lenet5"
            [data]
            source = "mnist"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.bound, BoundSpec::default());
        assert_eq!(cfg.evaluation.draws, 20_000);
        assert_eq!(cfg.out_dir, PathBuf::from("occam-out"));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml(
            r#"
            arch = "lenet5"
            colour = "blue"
            [data]
            source = "mnist"
            "#,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::from_toml("arch = \"mlp:8\"\n[data]\nsource = \"synthetic\"\nn = 10\ndim = 2\nclasses = 2\n").unwrap();
        cfg.prune.weight_sparsity = 0.5;
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sparsity_defaults_follow_roles() {
        let arch = ArchSpec::mlp(4, &[3], 2);
        let spec = PruneSpec {
            weight_sparsity: 0.5,
            bias_sparsity: 0.25,
            ..PruneSpec::default()
        };
        assert_eq!(spec.to_prune_config(&arch).unwrap().target_sparsity, vec![0.5, 0.25, 0.5, 0.25]);
    }

    #[test]
    fn arch_names_resolve() {
        let data = Dataset::synthetic_blobs(4, 3, 2, 0.5, 0).unwrap();
        assert_eq!(resolve_arch("mlp:5", &data).unwrap(), ArchSpec::mlp(3, &[5], 2));
        assert_eq!(resolve_arch("mlp", &data).unwrap(), ArchSpec::mlp(3, &[], 2));
        assert_eq!(resolve_arch("lenet5", &data).unwrap(), ArchSpec::lenet5());
        assert!(resolve_arch("resnet", &data).is_err());
    }
}
