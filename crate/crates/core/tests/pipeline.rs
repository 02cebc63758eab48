use std::fs;
use std::path::Path;

use occam_core::bound::BoundReport;
use occam_core::codec::load_triplet;
use occam_core::model::load_model;
use occam_core::pipeline::{
    report_emit, run_certify_pipeline, run_randomization_sweep, Artifacts, CertifySummary, PipelineConfig,
    ReportFormat, ReportInput, SweepConfig,
};
use occam_core::{Error, TrainConfig};

fn blobs_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml(
        r#"
        seed = 5
        arch = "mlp:16"

        [data]
        source = "synthetic"
        n = 600
        test_n = 200
        dim = 8
        classes = 4
        spread = 0.6

        [train]
        steps = 300
        batch_size = 32
        learning_rate = 0.05

        [prune]
        weight_sparsity = 0.6
        ramp_steps = 60
        ramp_points = 3

        [prune.fine_tune]
        steps = 100
        batch_size = 32
        learning_rate = 0.02

        [quantize]
        bits = 3

        [noise]
        granularity = "per-layer"
        fraction_of_range = 0.02

        [evaluation]
        draws = 400
        examples_per_draw = 8
        "#,
    )
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn blobs_pipeline_writes_every_artifact_and_a_consistent_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path());
    let summary = run_certify_pipeline(&cfg).unwrap();
    let out = Artifacts::in_dir(dir.path());
    for p in [&out.config, &out.model, &out.pruned, &out.triplet, &out.report, &out.summary] {
        assert!(p.exists(), "{} missing", p.display());
    }

    let r = &summary.report;
    assert!(r.bound.is_finite() && r.bound > 0.0 && r.bound <= 1.0);
    let k = &r.kl;
    assert_eq!(k.code_bits, r.sizes.raw_compressed_bits);
    assert_eq!(
        k.effective_bits.to_bits(),
        (k.code_bits as f64 + k.length_prior_bits + k.union_bits + k.gain_back_bits).to_bits()
    );
    assert_eq!(k.kl_nats, k.effective_bits * std::f64::consts::LN_2);
    assert!(r.train_loss_upper >= r.mean_train_error);
    assert!((r.confidence - 0.95).abs() < 1e-12);
    assert_eq!(r.draws, 400);
    assert!(r.notes.iter().any(|n| n.contains("magnitude pruning")));

    let triplet = load_triplet(&out.triplet).unwrap();
    assert_eq!(triplet.layers.len(), 4);
    let pruned = load_model(&out.pruned).unwrap();
    let dense = load_model(&out.model).unwrap();
    assert!(pruned.nonzero_weights() < dense.nonzero_weights());
    assert!(summary.weight_sparsity >= 0.6 - 1e-9);
    assert!(summary.compressed_test_error.is_some());

    let stored = CertifySummary::from_json(&fs::read_to_string(&out.summary).unwrap()).unwrap();
    assert_eq!(&stored, &summary);
    assert_eq!(&BoundReport::from_json(&fs::read_to_string(&out.report).unwrap()).unwrap(), r);
    assert_eq!(PipelineConfig::load(&out.config).unwrap(), cfg);

    let text = report_emit(&ReportInput::Certify(Box::new(summary.clone())), ReportFormat::Text).unwrap();
    for col in ["orig. size", "comp. size", "robust. adj.", "eff. size", "error bound"] {
        assert!(text.contains(col), "missing column {col}");
    }
    let csv = report_emit(&ReportInput::Certify(Box::new(summary)), ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn failing_stage_is_named_and_earlier_artifacts_survive() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs_config(dir.path());
    cfg.prune.target_sparsity = vec![0.5; 3];
    let err = run_certify_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "prune"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert!(err.to_string().contains("prune"));
    let out = Artifacts::in_dir(dir.path());
    assert!(out.model.exists());
    assert!(!out.triplet.exists());
}

#[test]
fn single_cell_sweep_reports_the_unpruned_accuracy() {
    let data = occam_core::Dataset::synthetic_blobs(300, 5, 3, 0.5, 2).unwrap();
    let cfg = SweepConfig {
        arch: "mlp:12".into(),
        subset: 0,
        fractions: vec![0.0],
        sparsities: vec![0.0],
        train: TrainConfig {
            steps: 200,
            batch_size: 32,
            ..TrainConfig::default()
        },
        fit_accuracy: 0.9,
        ramp_steps: 0,
        ramp_points: 1,
        fine_tune: TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        },
    };
    let res = run_randomization_sweep(&cfg, &data, 9).unwrap();
    assert_eq!(res.runs.len(), 1);
    let run = &res.runs[0];
    assert_eq!(run.cells.len(), 1);
    assert_eq!(run.cells[0].train_accuracy, run.unpruned_accuracy);
    assert_eq!(run.cells[0].retained, 1.0);

    let input = ReportInput::Sweep(res);
    let csv = report_emit(&input, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let svg = report_emit(&input, ReportFormat::Svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
