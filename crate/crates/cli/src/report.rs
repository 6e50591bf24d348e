//! Tables, plots and text summaries derived from sweep results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use gtf_core::oracle::PerturbationStudy;
use gtf_core::plot::{ablation_svg, sweep_svg};
use gtf_core::tuner::{fit_linear, improvement_report, AblationCurve, SweepDocument, SweepGrid, SweepPoint};
use serde::{Deserialize, Serialize};

/// Grid values and external-metric rows are matched within this relative tolerance.
const VALUE_MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Deserialize)]
struct ExternalRow {
    value: f64,
    metric: f64,
}

#[derive(Serialize)]
struct ResultRow {
    value: f64,
    gtf_ate: Option<f64>,
    gt_ate: Option<f64>,
    external_metric: Option<f64>,
    valid_pairs: Option<usize>,
    invalid_reason: Option<String>,
}

fn same_value(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_MATCH_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

pub fn attach_external_metric(points: &mut [SweepPoint], path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<ExternalRow> = reader.deserialize().collect::<Result<_, _>>()?;
    for point in points {
        point.external_metric = rows.iter().find(|r| same_value(r.value, point.value)).map(|r| r.metric);
        if point.external_metric.is_none() {
            eprintln!("warning: no external metric for value {}", point.value);
        }
    }
    Ok(())
}

fn write_points_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for p in points {
        writer.serialize(ResultRow {
            value: p.value,
            gtf_ate: p.gtf.as_ref().map(|g| g.gtf_ate),
            gt_ate: p.gt_ate,
            external_metric: p.external_metric,
            valid_pairs: p.gtf.as_ref().map(|g| g.valid_pair_count),
            invalid_reason: p.invalid_reason.clone(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `results.csv`, `sweep.svg` and `report.txt` into `dir`.
pub fn write_outputs(doc: &SweepDocument, dir: &Path) -> Result<()> {
    write_points_csv(&doc.points, &dir.join("results.csv"))?;
    fs::write(dir.join("sweep.svg"), sweep_svg(doc))?;
    fs::write(dir.join("report.txt"), summary(doc, 1.0))?;
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    delta_sigma: f64,
    value: f64,
    gtf_ate: Option<f64>,
    gt_ate: Option<f64>,
    selected: bool,
}

/// Writes `ablation.csv` and `ablation.svg` into `dir`.
pub fn write_ablation(grid: &SweepGrid, curves: &[AblationCurve], dir: &Path) -> Result<()> {
    let path = dir.join("ablation.csv");
    let mut writer = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for curve in curves {
        for (i, p) in curve.points.iter().enumerate() {
            writer.serialize(AblationRow {
                delta_sigma: curve.delta_sigma,
                value: p.value,
                gtf_ate: p.gtf_score(),
                gt_ate: p.gt_score(),
                selected: curve.optimum == Some(i),
            })?;
        }
    }
    writer.flush()?;
    fs::write(dir.join("ablation.svg"), ablation_svg(&grid.param_name, grid.spacing, curves))?;
    Ok(())
}

/// Valid `(x, y)` pairs where both are present.
fn paired(points: &[SweepPoint], x: impl Fn(&SweepPoint) -> Option<f64>, y: impl Fn(&SweepPoint) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    points.iter().filter_map(|p| Some((x(p)?, y(p)?))).unzip()
}

fn fit_line(out: &mut String, label: &str, x: &[f64], y: &[f64]) {
    match fit_linear(x, y) {
        Ok(fit) => {
            let _ = writeln!(
                out,
                "{label}: slope {:.4}, intercept {:.4e}, R^2 {:.4}{}",
                fit.slope,
                fit.intercept,
                fit.r_squared,
                if fit.degenerate { " (degenerate)" } else { "" }
            );
        }
        Err(e) => {
            let _ = writeln!(out, "{label}: {e}");
        }
    }
}

/// Human-readable report: per-point scores, the improvement table row and
/// the correlation fits that can be computed from the document.
pub fn summary(doc: &SweepDocument, unit_scale: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sweep of {} (nominal {})", doc.grid.param_name, doc.grid.nominal);
    let _ = writeln!(out, "value\tgtf_ate\tgt_ate\tstatus");
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for p in &doc.points {
        let status = p.invalid_reason.as_deref().unwrap_or(if p.is_valid() { "ok" } else { "invalid" });
        let _ = writeln!(out, "{}\t{}\t{}\t{}", p.value, cell(p.gtf_score()), cell(p.gt_score()), status);
    }
    match improvement_report(&doc.points, doc.grid.nominal) {
        Ok(report) => {
            let _ = writeln!(
                out,
                "\nimprovement ({:?}, unit scale {unit_scale})\nnominal\tGTF-tuned ({})\tGT-tuned{}",
                report.basis,
                report.gtf_tuned.value,
                report.gt_tuned.as_ref().map_or(String::new(), |r| format!(" ({})", r.value)),
            );
            let _ = writeln!(out, "{}", report.table_row(unit_scale));
        }
        Err(e) => {
            let _ = writeln!(out, "\nimprovement: {e}");
        }
    }
    let (gtf, gt) = paired(&doc.points, SweepPoint::gtf_score, SweepPoint::gt_score);
    if !gt.is_empty() {
        fit_line(&mut out, "gt_ate vs gtf_ate", &gtf, &gt);
    }
    let (ext, gt) = paired(&doc.points, |p| p.is_valid().then_some(p.external_metric).flatten(), SweepPoint::gt_score);
    if !ext.is_empty() {
        fit_line(&mut out, "gt_ate vs external_metric", &ext, &gt);
    }
    out
}

/// Serializable digest of a perturbation study.
#[derive(Serialize)]
pub struct SampleReport {
    pub trials: usize,
    pub mean_diff_norm: f64,
    pub covariance: Vec<Vec<f64>>,
    pub predicted_covariance: Vec<Vec<f64>>,
}

impl SampleReport {
    pub fn new(study: &PerturbationStudy, trials: usize) -> Self {
        let rows = |m: &nalgebra::DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self {
            trials,
            mean_diff_norm: study.mean_diff_norm(),
            covariance: rows(&study.covariance),
            predicted_covariance: rows(&study.predicted_covariance),
        }
    }
}
