use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn occam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_blobs_config(dir: &Path) -> String {
    let path = dir.join("blobs.toml");
    fs::write(
        &path,
        format!(
            r#"
seed = 3
arch = "mlp:12"
out_dir = "{}"

[data]
source = "synthetic"
n = 400
test_n = 100
dim = 6
classes = 3
spread = 0.6

[train]
steps = 200
batch_size = 32
learning_rate = 0.05

[prune]
weight_sparsity = 0.5
ramp_steps = 40
ramp_points = 2

[prune.fine_tune]
steps = 60
batch_size = 32
learning_rate = 0.02

[quantize]
bits = 2

[evaluation]
draws = 200
examples_per_draw = 8
"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn entropy_bound_prints_n_times_g() {
    let o = occam(&["entropy-bound", "--train-error", "0.1", "--test-error", "0.3", "--n", "1000"]);
    assert!(o.status.success());
    let h = |p: f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
    let (p, q, l) = (0.25, 0.5625, 0.2);
    let g = 2f64.ln() - l * h(p) - (1.0 - l) * h(q);
    let text = stdout(&o);
    assert!(text.contains(&format!("g    {g:.6} nats per example")), "{text}");
    assert!(text.contains(&format!("H(h) >= {:.3} nats", 1000.0 * g)), "{text}");
}

#[test]
fn entropy_bound_rejects_an_error_outside_the_unit_interval() {
    let o = occam(&["entropy-bound", "--train-error", "1.5", "--test-error", "0.3", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_configuration_error() {
    let o = occam(&["train", "--config", "/nonexistent/occam.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = occam(&["train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_blobs_config(dir.path());
    let o = occam(&["prune", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_then_report_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_blobs_config(dir.path());
    let o = occam(&["certify", "--pipeline", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("error bound"));

    let out = dir.path().join("out");
    for name in ["model.mdl", "pruned.mdl", "triplet.cmp1", "report.json", "summary.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let summary = out.join("summary.json");
    let summary = summary.to_str().unwrap();

    let csv = occam(&["report", summary, "--format", "csv"]);
    assert!(csv.status.success());
    assert_eq!(stdout(&csv).lines().count(), 2);

    let json = occam(&["report", summary, "--format", "json"]);
    assert!(json.status.success());
    assert_eq!(stdout(&json).trim(), fs::read_to_string(summary).unwrap().trim());

    let svg_path = dir.path().join("summary.svg");
    let svg = occam(&["report", summary, "--format", "svg", "--output", svg_path.to_str().unwrap()]);
    assert!(svg.status.success());
    assert!(fs::read_to_string(&svg_path).unwrap().contains("<svg"));

    let bad = occam(&["report", summary, "--format", "pdf"]);
    assert_eq!(bad.status.code(), Some(2));

    let again = occam(&["certify", "--config", &cfg]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
}
