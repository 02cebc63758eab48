use std::fmt::Write;
use std::str::FromStr;

use super::certify::CertifySummary;
use super::sweep::SweepResult;
use crate::bound::BoundReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Svg,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Anything `report_emit` can render.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportInput {
    Certify(Box<CertifySummary>),
    Bound(Box<BoundReport>),
    Sweep(SweepResult),
}

impl ReportInput {
    /// Recognises a summary, a bare bound report or a sweep result.
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("report input: {e}")))?;
        if value.get("runs").is_some() {
            Ok(ReportInput::Sweep(SweepResult::from_json(s)?))
        } else if value.get("report").is_some() {
            Ok(ReportInput::Certify(Box::new(CertifySummary::from_json(s)?)))
        } else if value.get("schema").is_some() {
            Ok(ReportInput::Bound(Box::new(BoundReport::from_json(s)?)))
        } else {
            Err(Error::InvalidInput("not a certify summary, bound report or sweep result".into()))
        }
    }
}

pub fn report_emit(input: &ReportInput, format: ReportFormat) -> Result<String> {
    match (input, format) {
        (ReportInput::Sweep(s), _) if s.is_empty() => Err(Error::InvalidInput("the sweep has no cells to report".into())),
        (ReportInput::Certify(c), ReportFormat::Json) => c.to_json(),
        (ReportInput::Bound(b), ReportFormat::Json) => b.to_json(),
        (ReportInput::Sweep(s), ReportFormat::Json) => s.to_json(),
        (ReportInput::Certify(c), ReportFormat::Text) => Ok(certify_text(&c.report, Some(c))),
        (ReportInput::Bound(b), ReportFormat::Text) => Ok(certify_text(b, None)),
        (ReportInput::Certify(c), ReportFormat::Csv) => Ok(certify_csv(&c.report, Some(c))),
        (ReportInput::Bound(b), ReportFormat::Csv) => Ok(certify_csv(b, None)),
        (ReportInput::Certify(c), ReportFormat::Svg) => Ok(size_svg(&c.report)),
        (ReportInput::Bound(b), ReportFormat::Svg) => Ok(size_svg(b)),
        (ReportInput::Sweep(s), ReportFormat::Text) => Ok(sweep_text(s)),
        (ReportInput::Sweep(s), ReportFormat::Csv) => Ok(sweep_csv(s)),
        (ReportInput::Sweep(s), ReportFormat::Svg) => Ok(sweep_svg(s)),
    }
}

fn kib(bits: f64) -> f64 {
    bits / 8192.0
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".into())
}

fn certify_text(r: &BoundReport, summary: Option<&CertifySummary>) -> String {
    let k = &r.kl;
    let comp = kib(k.code_bits as f64);
    let mut out = String::new();
    let name = summary.map_or("model", |s| s.arch.as_str());
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>13} {:>11} {:>12}",
        "", "orig. size", "comp. size", "robust. adj.", "eff. size", "error bound"
    );
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>13} {:>11} {:>12}",
        name,
        opt(summary.map(|s| kib(s.original_bits as f64)), |v| format!("{v:.2} KiB")),
        format!("{comp:.2} KiB"),
        format!("{:+.2} KiB", r.effective_kib - comp),
        format!("{:.2} KiB", r.effective_kib),
        format!("{:.2}%", 100.0 * r.bound),
    );
    out.push('\n');
    let s = &r.sizes;
    let _ = writeln!(
        out,
        "code length        {:>12} bits  (support {}, codebooks {}, assignments {})",
        k.code_bits, s.support_bits, s.codebook_bits, s.assignment_bits
    );
    let _ = writeln!(out, "length prior       {:>12.2} bits", k.length_prior_bits);
    let _ = writeln!(out, "prior-scale union  {:>12.2} bits", k.union_bits);
    let _ = writeln!(out, "noise gain-back    {:>12.2} bits", k.gain_back_bits);
    let _ = writeln!(out, "effective size     {:>12.2} bits  ({:.3} KiB, KL {:.2} nats)", k.effective_bits, r.effective_kib, k.kl_nats);
    let _ = writeln!(
        out,
        "train error        {:>12.5}       (upper {:.5} from {} draws, seed {})",
        r.mean_train_error,
        r.train_loss_upper,
        r.draws,
        r.draw_seed.map_or_else(|| "-".to_string(), |s| s.to_string())
    );
    let _ = writeln!(
        out,
        "bound              {:>12.5}       (n {}, confidence {:.3}, alpha {}, lambda* {:.1})",
        r.bound, r.n, r.confidence, r.alpha, r.lambda_star
    );
    if let Some(sm) = summary {
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let _ = writeln!(out, "weight sparsity    {:>12.4}", sm.weight_sparsity);
        let _ = writeln!(
            out,
            "dense error        train {} test {}",
            opt(sm.dense_train_error, pct),
            opt(sm.dense_test_error, pct)
        );
        let _ = writeln!(
            out,
            "compressed error   train {} test {}",
            pct(sm.compressed_train_error),
            opt(sm.compressed_test_error, pct)
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>8} {:>4} {:>10} {:>10} {:>11} {:>11}",
        "tensor", "len", "k", "r", "sigma", "tau", "code bits", "gain bits"
    );
    for (sz, l) in r.sizes.layers.iter().zip(&k.layers) {
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>4} {:>10.3e} {:>10.3e} {:>11} {:>11.1}",
            sz.name,
            sz.len,
            sz.k,
            sz.r,
            l.sigma,
            l.tau,
            sz.raw_compressed_bits(),
            l.gain_back_nats / std::f64::consts::LN_2
        );
    }
    if !r.notes.is_empty() {
        out.push('\n');
        for n in &r.notes {
            let _ = writeln!(out, "note: {n}");
        }
    }
    out
}

fn certify_csv(r: &BoundReport, summary: Option<&CertifySummary>) -> String {
    let comp = kib(r.kl.code_bits as f64);
    let mut out = String::from(
        "model,original_kib,compressed_kib,robustness_adjustment_kib,effective_kib,train_error,train_error_upper,bound,confidence,test_error\n",
    );
    let num = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        summary.map_or("model", |s| s.arch.as_str()),
        num(summary.map(|s| kib(s.original_bits as f64))),
        comp,
        r.effective_kib - comp,
        r.effective_kib,
        r.mean_train_error,
        r.train_loss_upper,
        r.bound,
        r.confidence,
        num(summary.and_then(|s| s.compressed_test_error)),
    );
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_open(w: u32, h: u32, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-tensor code length, stacked by component.
fn size_svg(r: &BoundReport) -> String {
    let (w, h) = (640u32, 60 + 28 * r.sizes.layers.len() as u32);
    let mut s = svg_open(w, h, "code length per tensor (bits)");
    let left = 130.0;
    let width = f64::from(w) - left - 30.0;
    let max = r
        .sizes
        .layers
        .iter()
        .map(|l| l.raw_compressed_bits())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    for (i, l) in r.sizes.layers.iter().enumerate() {
        let y = 40.0 + 28.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + 14.0, escape(&l.name));
        let mut x = left;
        for (bits, colour) in [(l.support_bits, PALETTE[0]), (l.codebook_bits, PALETTE[1]), (l.assignment_bits, PALETTE[2])] {
            let bw = width * bits as f64 / max;
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="20" fill="{colour}"/>"#);
            x += bw;
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}">{}</text>"#, x + 4.0, y + 14.0, l.raw_compressed_bits());
    }
    s.push_str("</svg>\n");
    s
}

/// (sparsity, accuracy) points of one run, the unpruned network at sparsity 0.
fn curve(run: &super::sweep::SweepRun) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(run.cells.len() + 1);
    if !run.cells.iter().any(|c| c.sparsity == 0.0) {
        pts.push((0.0, run.unpruned_accuracy));
    }
    pts.extend(run.cells.iter().map(|c| (c.sparsity, c.train_accuracy)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn sweep_text(s: &SweepResult) -> String {
    let mut sparsities: Vec<f64> = s.runs.iter().flat_map(|r| r.cells.iter().map(|c| c.sparsity)).collect();
    sparsities.sort_by(f64::total_cmp);
    sparsities.dedup();
    let mut out = format!(
        "{} on {} examples, {} training steps, {} fine-tuning steps per cell, seed {}\n\n",
        s.arch, s.n, s.train_steps, s.fine_tune_steps, s.seed
    );
    let _ = write!(out, "{:>9} {:>10} {:>9}", "fraction", "randomized", "unpruned");
    for sp in &sparsities {
        let _ = write!(out, " {:>9}", format!("s={sp}"));
    }
    out.push('\n');
    for r in &s.runs {
        let _ = write!(out, "{:>9} {:>10} {:>9.4}", r.fraction, r.randomized, r.unpruned_accuracy);
        for sp in &sparsities {
            match r.cells.iter().find(|c| c.sparsity == *sp) {
                Some(c) => {
                    let _ = write!(out, " {:>9.4}", c.train_accuracy);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        if !r.fitted {
            out.push_str("  (not fitted)");
        }
        out.push('\n');
    }
    out
}

fn sweep_csv(s: &SweepResult) -> String {
    let mut out = String::from("fraction,randomized,seed,fitted,sparsity,train_accuracy,unpruned_accuracy,retained,seconds\n");
    for r in &s.runs {
        for c in &r.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.fraction, r.randomized, r.seed, r.fitted, c.sparsity, c.train_accuracy, r.unpruned_accuracy, c.retained, c.seconds
            );
        }
    }
    out
}

/// Training accuracy against sparsity, one line per randomization fraction.
fn sweep_svg(s: &SweepResult) -> String {
    let (w, h) = (640u32, 420u32);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pw = f64::from(w) - left - right;
    let ph = f64::from(h) - top - bottom;
    let curves: Vec<_> = s.runs.iter().map(curve).collect();
    let lo = curves
        .iter()
        .flatten()
        .map(|p| p.1)
        .fold(1.0f64, f64::min)
        .min(0.9);
    let y_lo = (lo * 10.0).floor() / 10.0;
    let x = |v: f64| left + pw * v;
    let y = |v: f64| top + ph * (1.0 - (v - y_lo) / (1.0 - y_lo).max(1e-9));

    let mut out = svg_open(w, h, &format!("{}: training accuracy after pruning", s.arch));
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=10 {
        let v = f64::from(i) / 10.0;
        let _ = writeln!(out, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/>"#, x(v), top + ph, top + ph + 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#, x(v), top + ph + 18.0);
    }
    let steps = ((1.0 - y_lo) * 10.0).round() as i32;
    for i in 0..=steps {
        let v = y_lo + f64::from(i) / 10.0;
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{1:.2}" x2="{left}" y2="{1:.2}" stroke="black"/>"#, left - 5.0, y(v));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, left - 8.0, y(v) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">sparsity</text>"#, left + pw / 2.0, h - 10);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">training accuracy</text>"#,
        top + ph / 2.0
    );
    for (i, (run, pts)) in s.runs.iter().zip(&curves).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.2},{:.2}", x(a), y(b))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(a, b) in pts {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, x(a), y(b));
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}% random</text>"#, lx + 26.0, ly + 4.0, run.fraction * 100.0);
    }
    out.push_str("</svg>\n");
    out
}
