use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use occam_core::codec::{load_triplet, save_triplet};
use occam_core::entropy::{entropy_lower_bound, overfit_stats};
use occam_core::model::{load_model, save_model};
use occam_core::pipeline::{
    report_emit, resolve_arch, run_certify_pipeline, run_randomization_sweep, stage_certify, stage_prune,
    stage_quantize, stage_train, Artifacts, DataSpec, PipelineConfig, ReportFormat, ReportInput, Splits,
};
use occam_core::Error;

const DATA_DIR_ENV: &str = "OCCAM_DATA_DIR";
const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "occam", version, about = "Compress a network and certify its test error")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation threads; 0 runs on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the dense network and write `model.mdl`.
    Train,
    /// Prune with fine-tuning and write `pruned.mdl`.
    Prune {
        /// Dense model to prune [default: OUT/model.mdl].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Quantize the pruned model and write `triplet.cmp1`.
    Quantize {
        /// Pruned model [default: OUT/pruned.mdl].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Certify a compressed triplet and write `report.json` and `summary.json`.
    Certify {
        /// Triplet to certify [default: OUT/triplet.cmp1].
        #[arg(long)]
        triplet: Option<PathBuf>,
        /// Run every stage from training onwards first.
        #[arg(long)]
        pipeline: bool,
    },
    /// Label-randomization sweep; writes `sweep.{json,csv,svg}`.
    Sweep,
    /// Entropy lower bound for a classifier with the given errors.
    EntropyBound {
        #[arg(long)]
        train_error: f64,
        #[arg(long)]
        test_error: f64,
        #[arg(long)]
        n: u64,
    },
    /// Render a summary, bound report or sweep result.
    Report {
        input: PathBuf,
        /// text, csv, svg or json.
        #[arg(long, default_value = "text")]
        format: String,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            let inner = match err {
                Error::Stage { source, .. } => source.as_ref(),
                other => other,
            };
            return if matches!(inner, Error::Config(_)) { EXIT_CONFIG } else { EXIT_STAGE };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_STAGE
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

/// The configuration with command-line overrides and the data-directory
/// environment variable applied.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config_error("this command needs --config PATH"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.evaluation.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let DataSpec::Mnist { dir: dir @ None, .. } = &mut cfg.data {
        if let Some(env) = std::env::var_os(DATA_DIR_ENV) {
            *dir = Some(PathBuf::from(env));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &PipelineConfig) -> Result<Splits> {
    cfg.data
        .load(cfg.seed)
        .map_err(|e| anyhow::Error::new(e.in_stage("data")))
}

fn prepare_out(cfg: &PipelineConfig) -> Result<Artifacts> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    Ok(Artifacts::in_dir(&cfg.out_dir))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(&cli)?;
            let out = prepare_out(&cfg)?;
            let splits = load_data(&cfg)?;
            let arch = resolve_arch(&cfg.arch, &splits.train)?;
            let model = stage_train(&cfg, &arch, &splits.train)?;
            save_model(&model, &out.model)?;
            println!("wrote {}", out.model.display());
        }
        Command::Prune { model } => {
            let cfg = load_config(&cli)?;
            let out = prepare_out(&cfg)?;
            let splits = load_data(&cfg)?;
            let dense = load_model(model.as_deref().unwrap_or(&out.model))?;
            let pruned = stage_prune(&cfg, &dense, &splits.train)?;
            save_model(&pruned, &out.pruned)?;
            println!(
                "wrote {} ({} of {} weights retained)",
                out.pruned.display(),
                pruned.nonzero_weights(),
                pruned.weight_count()
            );
        }
        Command::Quantize { model } => {
            let cfg = load_config(&cli)?;
            let out = prepare_out(&cfg)?;
            let splits = load_data(&cfg)?;
            let pruned = load_model(model.as_deref().unwrap_or(&out.pruned))?;
            let triplet = stage_quantize(&cfg, &pruned, &splits.train)?;
            let sizes = save_triplet(&triplet, &out.triplet)?;
            println!(
                "wrote {}: {} bits ({:.3} KiB)",
                out.triplet.display(),
                sizes.raw_compressed_bits,
                sizes.kib()
            );
        }
        Command::Certify { triplet, pipeline } => {
            let cfg = load_config(&cli)?;
            let out = prepare_out(&cfg)?;
            let summary = if *pipeline {
                run_certify_pipeline(&cfg)?
            } else {
                let splits = load_data(&cfg)?;
                let arch = resolve_arch(&cfg.arch, &splits.train)?;
                let t = load_triplet(triplet.as_deref().unwrap_or(&out.triplet))?;
                let dense = load_model(&out.model).ok();
                let s = stage_certify(&cfg, &t, &arch, &splits, dense.as_ref())?;
                fs::write(&out.report, s.report.to_json()?)?;
                fs::write(&out.summary, s.to_json()?)?;
                s
            };
            print!("{}", report_emit(&ReportInput::Certify(Box::new(summary)), ReportFormat::Text)?);
        }
        Command::Sweep => {
            let cfg = load_config(&cli)?;
            cfg.sweep.validate()?;
            prepare_out(&cfg)?;
            let splits = load_data(&cfg)?;
            let result = run_randomization_sweep(&cfg.sweep, &splits.train, cfg.seed)
                .map_err(|e| e.in_stage("sweep"))?;
            let input = ReportInput::Sweep(result);
            for (name, format) in [("sweep.json", ReportFormat::Json), ("sweep.csv", ReportFormat::Csv), ("sweep.svg", ReportFormat::Svg)] {
                write_file(&cfg.out_dir.join(name), &report_emit(&input, format)?)?;
            }
            print!("{}", report_emit(&input, ReportFormat::Text)?);
        }
        Command::EntropyBound { train_error, test_error, n } => {
            let stats = overfit_stats(*train_error, *test_error, *n).map_err(|e| config_error(e.to_string()))?;
            let b = entropy_lower_bound(&stats);
            println!("p_n  {:.6}", stats.p_n);
            println!("q_n  {:.6}", stats.q_n);
            println!("l_n  {:.6}", stats.l_n);
            println!("g    {:.6} nats per example", b.g_nats);
            println!("H(h) >= {:.3} nats = {:.3} bits", b.bound_nats, b.bound_bits);
            if stats.boundary_convention {
                println!("note: a zero-denominator convention was applied to p_n or q_n");
            }
        }
        Command::Report { input, format, output } => {
            let format: ReportFormat = format.parse().map_err(|e: Error| config_error(e.to_string()))?;
            let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
            let parsed = ReportInput::from_json(&text)?;
            let rendered = report_emit(&parsed, format)?;
            match output {
                Some(path) => write_file(path, &rendered)?,
                None => print!("{rendered}"),
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| anyhow!("cannot write {}: {e}", path.display()))
}
