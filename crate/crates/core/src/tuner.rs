//! One-dimensional brute-force hyperparameter sweeps scored by GTF ATE, with
//! optional ground-truth comparison and the regression/ablation analyses
//! built on top of them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtf::{gtf_ate, ExecOptions, GtfConfig, GtfError, GtfResult, MIN_VALID_RUN_FRACTION};
use crate::runner::{Params, Pipeline, RunnerError};
use crate::sim3::ate;
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no sweep point produced a reportable result: {}", .reasons.join("; "))]
    AllPointsInvalid { reasons: Vec<String> },
    #[error("no valid sweep points")]
    NoValidPoints,
    #[error("ground-truth ATE is not available for the valid sweep points")]
    MissingGroundTruth,
    #[error("nominal value {0} has no valid sweep point")]
    NominalUnavailable(f64),
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error(transparent)]
    Gtf(GtfError),
}

impl From<GtfError> for TunerError {
    fn from(e: GtfError) -> Self {
        match e {
            GtfError::Runner(RunnerError::Config(msg)) => TunerError::Config(msg),
            GtfError::InvalidConfig(msg) => TunerError::Config(msg),
            other => TunerError::Gtf(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// Values of one parameter to evaluate, strictly increasing, always
/// containing the nominal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub param_name: String,
    pub values: Vec<f64>,
    pub spacing: Spacing,
    pub nominal: f64,
}

impl SweepGrid {
    /// Uses `values` as given (they must be strictly increasing) and inserts
    /// `nominal` if it is not already present.
    pub fn from_values(
        param_name: impl Into<String>,
        values: Vec<f64>,
        spacing: Spacing,
        nominal: f64,
    ) -> Result<Self, TunerError> {
        if values.is_empty() {
            return Err(TunerError::Config("sweep grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || !nominal.is_finite() {
            return Err(TunerError::Config("sweep values must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TunerError::Config("sweep values must be strictly increasing".into()));
        }
        if spacing == Spacing::Log && (values[0] <= 0.0 || nominal <= 0.0) {
            return Err(TunerError::Config("log-spaced grids need positive values".into()));
        }
        let mut values = values;
        let tol = 1e-12 * nominal.abs().max(1.0);
        match values.iter().position(|v| (v - nominal).abs() <= tol) {
            Some(idx) => values[idx] = nominal,
            None => {
                let at = values.partition_point(|v| *v < nominal);
                values.insert(at, nominal);
            }
        }
        Ok(Self {
            param_name: param_name.into(),
            values,
            spacing,
            nominal,
        })
    }

    /// `count` values from `min` to `max` inclusive, evenly spaced in value
    /// or in log-value.
    pub fn spaced(
        param_name: impl Into<String>,
        min: f64,
        max: f64,
        count: usize,
        spacing: Spacing,
        nominal: f64,
    ) -> Result<Self, TunerError> {
        if count == 0 {
            return Err(TunerError::Config("grid count must be at least 1".into()));
        }
        if count > 1 && !(min < max) {
            return Err(TunerError::Config(format!("grid needs min < max, got {min} and {max}")));
        }
        if spacing == Spacing::Log && min <= 0.0 {
            return Err(TunerError::Config("log-spaced grids need positive bounds".into()));
        }
        let values = if count == 1 {
            vec![min]
        } else {
            (0..count)
                .map(|i| {
                    let f = i as f64 / (count - 1) as f64;
                    match spacing {
                        Spacing::Linear => min + f * (max - min),
                        Spacing::Log => (min.ln() + f * (max.ln() - min.ln())).exp(),
                    }
                })
                .collect()
        };
        Self::from_values(param_name, values, spacing, nominal)
    }

    pub fn nominal_index(&self) -> usize {
        self.values
            .iter()
            .position(|v| *v == self.nominal)
            .expect("nominal injected at construction")
    }
}

/// Result of evaluating one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub gtf: Option<GtfResult>,
    /// Mean ATE of the raw runs against ground truth, when supplied.
    pub gt_ate: Option<f64>,
    /// Caller-supplied scalar (e.g. a pipeline's mean reprojection error).
    #[serde(default)]
    pub external_metric: Option<f64>,
    /// Set when the point must not be reported.
    pub invalid_reason: Option<String>,
}

impl SweepPoint {
    pub fn is_valid(&self) -> bool {
        self.invalid_reason.is_none() && self.gtf.is_some()
    }

    /// GTF ATE when the point is valid.
    pub fn gtf_score(&self) -> Option<f64> {
        if self.is_valid() {
            self.gtf.as_ref().map(|g| g.gtf_ate)
        } else {
            None
        }
    }

    /// Ground-truth ATE when the point is valid.
    pub fn gt_score(&self) -> Option<f64> {
        if self.is_valid() {
            self.gt_ate
        } else {
            None
        }
    }
}

/// Mean of `ate(raw_i, ground_truth)` over the raw runs that align.
pub fn ground_truth_ate<'a>(
    raw: impl IntoIterator<Item = &'a Trajectory>,
    ground_truth: &Trajectory,
    max_time_offset: f64,
) -> Option<f64> {
    let values: Vec<f64> = raw
        .into_iter()
        .filter_map(|t| ate(t, ground_truth, max_time_offset).ok().map(|r| r.rmse))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Evaluates one parameter assignment and packages it as a sweep point.
pub fn evaluate_point(
    pipeline: &dyn Pipeline,
    value: f64,
    params: &Params,
    images: &Path,
    cfg: &GtfConfig,
    ground_truth: Option<&Trajectory>,
    exec: &ExecOptions,
) -> Result<SweepPoint, TunerError> {
    match gtf_ate(pipeline, params, images, cfg, exec) {
        Ok(result) => {
            let gt_ate = ground_truth
                .and_then(|gt| ground_truth_ate(result.raw_trajectories(), gt, cfg.max_time_offset));
            let fraction = result.valid_run_fraction();
            let invalid_reason = (fraction < MIN_VALID_RUN_FRACTION).then(|| {
                format!("only {:.0}% of runs succeeded", fraction * 100.0)
            });
            Ok(SweepPoint {
                value,
                gtf: Some(result),
                gt_ate,
                external_metric: None,
                invalid_reason,
            })
        }
        Err(e @ (GtfError::AllRunsFailed | GtfError::InsufficientValidPairs)) => Ok(SweepPoint {
            value,
            gtf: None,
            gt_ate: None,
            external_metric: None,
            invalid_reason: Some(e.to_string()),
        }),
        Err(e) => Err(e.into()),
    }
}

/// GTF evaluation at every grid value with all other parameters fixed.
pub fn sweep(
    pipeline: &dyn Pipeline,
    grid: &SweepGrid,
    fixed_params: &Params,
    images: &Path,
    cfg: &GtfConfig,
    ground_truth: Option<&Trajectory>,
    exec: &ExecOptions,
) -> Result<Vec<SweepPoint>, TunerError> {
    let points = grid
        .values
        .iter()
        .map(|&value| {
            let mut params = fixed_params.clone();
            params.insert(grid.param_name.clone(), value);
            evaluate_point(pipeline, value, &params, images, cfg, ground_truth, exec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if points.iter().all(|p| !p.is_valid()) {
        return Err(TunerError::AllPointsInvalid {
            reasons: points
                .iter()
                .map(|p| format!("{}: {}", p.value, p.invalid_reason.as_deref().unwrap_or("invalid")))
                .collect(),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    Gtf,
    GroundTruth,
}

/// Index of the smallest score. Equal scores resolve toward the value
/// closest to `nominal`, then toward the smaller value.
pub fn select_by_scores(values: &[f64], scores: &[Option<f64>], nominal: f64) -> Option<usize> {
    values
        .iter()
        .zip(scores)
        .enumerate()
        .filter_map(|(i, (v, s))| s.map(|s| (i, *v, s)))
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then_with(|| (a.1 - nominal).abs().total_cmp(&(b.1 - nominal).abs()))
                .then_with(|| a.1.total_cmp(&b.1))
        })
        .map(|(i, _, _)| i)
}

/// Index of the best valid point under `by`.
pub fn select_optimum(points: &[SweepPoint], nominal: f64, by: SelectBy) -> Result<usize, TunerError> {
    if !points.iter().any(SweepPoint::is_valid) {
        return Err(TunerError::NoValidPoints);
    }
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let scores: Vec<Option<f64>> = points
        .iter()
        .map(|p| match by {
            SelectBy::Gtf => p.gtf_score(),
            SelectBy::GroundTruth => p.gt_score(),
        })
        .collect();
    select_by_scores(&values, &scores, nominal).ok_or(match by {
        SelectBy::Gtf => TunerError::NoValidPoints,
        SelectBy::GroundTruth => TunerError::MissingGroundTruth,
    })
}

/// `(nominal - tuned) / nominal * 100`; negative when tuning made things worse.
pub fn improvement_percent(nominal: f64, tuned: f64) -> f64 {
    (nominal - tuned) / nominal * 100.0
}

/// Which score the report's ATE columns are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBasis {
    GroundTruth,
    Gtf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedRow {
    pub value: f64,
    pub ate: f64,
    pub improvement_percent: f64,
}

impl TunedRow {
    /// `"0.80 / 40.7%"`, with the ATE scaled by `unit_scale`.
    pub fn cell(&self, unit_scale: f64) -> String {
        format!("{:.2} / {:.1}%", self.ate * unit_scale, self.improvement_percent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub basis: ScoreBasis,
    pub nominal_value: f64,
    pub nominal_ate: f64,
    pub gtf_tuned: TunedRow,
    pub gt_tuned: Option<TunedRow>,
}

impl ImprovementReport {
    /// Tab-separated `nominal | GTF-tuned | GT-tuned` row.
    pub fn table_row(&self, unit_scale: f64) -> String {
        let gt = self
            .gt_tuned
            .as_ref()
            .map(|r| r.cell(unit_scale))
            .unwrap_or_else(|| "-".into());
        format!(
            "{:.2}\t{}\t{}",
            self.nominal_ate * unit_scale,
            self.gtf_tuned.cell(unit_scale),
            gt
        )
    }
}

/// Nominal vs tuned comparison. ATE columns use ground truth when every valid
/// point carries it, and GTF ATE otherwise.
pub fn improvement_report(points: &[SweepPoint], nominal: f64) -> Result<ImprovementReport, TunerError> {
    let gtf_idx = select_optimum(points, nominal, SelectBy::Gtf)?;
    let nominal_point = points
        .iter()
        .find(|p| p.value == nominal && p.is_valid())
        .ok_or(TunerError::NominalUnavailable(nominal))?;
    let has_gt = points.iter().filter(|p| p.is_valid()).all(|p| p.gt_ate.is_some());

    let score = |p: &SweepPoint| {
        if has_gt {
            p.gt_score()
        } else {
            p.gtf_score()
        }
    };
    let nominal_ate = score(nominal_point).ok_or(TunerError::NominalUnavailable(nominal))?;
    let row = |idx: usize| -> Result<TunedRow, TunerError> {
        let p = &points[idx];
        let ate = score(p).ok_or(TunerError::NoValidPoints)?;
        Ok(TunedRow {
            value: p.value,
            ate,
            improvement_percent: improvement_percent(nominal_ate, ate),
        })
    };
    let gtf_tuned = row(gtf_idx)?;
    let gt_tuned = if has_gt {
        Some(row(select_optimum(points, nominal, SelectBy::GroundTruth)?)?)
    } else {
        None
    };
    Ok(ImprovementReport {
        basis: if has_gt { ScoreBasis::GroundTruth } else { ScoreBasis::Gtf },
        nominal_value: nominal,
        nominal_ate,
        gtf_tuned,
        gt_tuned,
    })
}

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// All `y` equal (R^2 reported as 0) or all `x` equal (no slope).
    pub degenerate: bool,
}

pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<RegressionFit, TunerError> {
    if x.len() != y.len() {
        return Err(TunerError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(TunerError::TooFewPoints { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut ss_tot) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        let dy = yi - y_mean;
        sxx += dx * dx;
        sxy += dx * dy;
        ss_tot += dy * dy;
    }
    if sxx == 0.0 {
        return Ok(RegressionFit {
            slope: 0.0,
            intercept: y_mean,
            r_squared: 0.0,
            degenerate: true,
        });
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    if ss_tot == 0.0 {
        return Ok(RegressionFit {
            slope,
            intercept,
            r_squared: 0.0,
            degenerate: true,
        });
    }
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - (slope * xi + intercept)).powi(2))
        .sum();
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared: (1.0 - ss_res / ss_tot).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Population standard deviation over mean; `None` for empty input or zero
/// mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt() / mean.abs())
}

/// GTF sweep for one input noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub delta_sigma: f64,
    pub points: Vec<SweepPoint>,
    /// GTF-selected point, if any point is valid.
    pub optimum: Option<usize>,
    /// Spread of the valid GTF scores across the grid.
    pub coefficient_of_variation: Option<f64>,
}

impl AblationCurve {
    pub fn gtf_scores(&self) -> Vec<f64> {
        self.points.iter().filter_map(SweepPoint::gtf_score).collect()
    }
}

/// Repeats the sweep for every noise level in `delta_sigmas` (non-empty,
/// strictly increasing).
#[allow(clippy::too_many_arguments)]
pub fn noise_ablation(
    pipeline: &dyn Pipeline,
    grid: &SweepGrid,
    fixed_params: &Params,
    images: &Path,
    cfg: &GtfConfig,
    delta_sigmas: &[f64],
    ground_truth: Option<&Trajectory>,
    exec: &ExecOptions,
) -> Result<Vec<AblationCurve>, TunerError> {
    if delta_sigmas.is_empty() {
        return Err(TunerError::Config("no noise levels given".into()));
    }
    if delta_sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TunerError::Config("noise levels must be strictly increasing".into()));
    }
    delta_sigmas
        .iter()
        .map(|&delta_sigma| {
            let mut level = cfg.clone();
            level.noise.delta_sigma = delta_sigma;
            let points = grid
                .values
                .iter()
                .map(|&value| {
                    let mut params = fixed_params.clone();
                    params.insert(grid.param_name.clone(), value);
                    evaluate_point(pipeline, value, &params, images, &level, ground_truth, exec)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let optimum = select_optimum(&points, grid.nominal, SelectBy::Gtf).ok();
            let scores: Vec<f64> = points.iter().filter_map(SweepPoint::gtf_score).collect();
            Ok(AblationCurve {
                delta_sigma,
                coefficient_of_variation: coefficient_of_variation(&scores),
                optimum,
                points,
            })
        })
        .collect()
}

/// Everything needed to regenerate tables and plots without re-running
/// pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub grid: SweepGrid,
    pub config: GtfConfig,
    /// Interpretation of the noise level, recorded for readers.
    pub noise_units: String,
    pub points: Vec<SweepPoint>,
}

pub const NOISE_UNITS: &str = "delta_sigma: standard deviation in grey levels on the 0-255 intensity scale";
