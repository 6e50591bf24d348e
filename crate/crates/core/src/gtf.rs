//! Ground-truth-free ATE.
//!
//! A pipeline is run `k` times on the raw images and `k_delta` times on
//! independently noise-augmented copies. Every raw trajectory is compared
//! with every noisy one by Sim(3)-aligned ATE (noisy as estimate, raw as
//! reference) and the score is the mean of all available comparisons:
//!
//! ```text
//! GTF ATE = 1 / (k * k_delta) * sum_i sum_j ATE(t_i, t_delta_j)
//! ```
//!
//! Comparisons involving a failed run or an unalignable pair are left out of
//! both the sum and the count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{perturb_image_set, NoiseError, NoiseSpec};
use crate::runner::{count_images, run_batch, Params, Pipeline, RunRecord, RunRequest, RunnerError};
use crate::sim3::ate;
use crate::trajectory::{Trajectory, DEFAULT_MAX_TIME_OFFSET};

/// Below this fraction of successful runs a result is not reportable.
pub const MIN_VALID_RUN_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum GtfError {
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every pipeline run failed")]
    AllRunsFailed,
    #[error("no raw/noisy trajectory pair could be compared")]
    InsufficientValidPairs,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtfConfig {
    pub k: usize,
    pub k_delta: usize,
    pub noise: NoiseSpec,
    #[serde(default = "default_offset")]
    pub max_time_offset: f64,
}

fn default_offset() -> f64 {
    DEFAULT_MAX_TIME_OFFSET
}

impl GtfConfig {
    pub fn new(k: usize, k_delta: usize, noise: NoiseSpec) -> Self {
        Self {
            k,
            k_delta,
            noise,
            max_time_offset: DEFAULT_MAX_TIME_OFFSET,
        }
    }

    pub fn validate(&self) -> Result<(), GtfError> {
        if self.k == 0 || self.k_delta == 0 {
            return Err(GtfError::InvalidConfig(format!(
                "k and k_delta must be at least 1 (got {} and {})",
                self.k, self.k_delta
            )));
        }
        if !(self.max_time_offset >= 0.0) {
            return Err(GtfError::InvalidConfig("max_time_offset must be non-negative".into()));
        }
        self.noise.validate()?;
        Ok(())
    }
}

/// Execution knobs that do not change the result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecOptions {
    pub parallelism: usize,
    /// Where noisy image sets are materialised; the system temp dir if absent.
    pub work_dir: Option<PathBuf>,
    /// Keep the materialised noisy image sets after the evaluation.
    pub keep_noisy_images: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            work_dir: None,
            keep_noisy_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtfResult {
    pub gtf_ate: f64,
    /// `ate_matrix[i][j]` compares raw run `i` with noisy run `j`.
    pub ate_matrix: Vec<Vec<Option<f64>>>,
    pub raw_records: Vec<RunRecord>,
    pub noisy_records: Vec<RunRecord>,
    pub valid_pair_count: usize,
}

impl GtfResult {
    pub fn present_entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.ate_matrix.iter().flatten().filter_map(|e| *e)
    }

    /// Fraction of pipeline runs that succeeded. Results built from
    /// trajectories (no records) count as fully valid.
    pub fn valid_run_fraction(&self) -> f64 {
        let total = self.raw_records.len() + self.noisy_records.len();
        if total == 0 {
            return 1.0;
        }
        let ok = self
            .raw_records
            .iter()
            .chain(&self.noisy_records)
            .filter(|r| r.outcome.is_success())
            .count();
        ok as f64 / total as f64
    }

    pub fn is_reportable(&self) -> bool {
        self.valid_pair_count > 0 && self.valid_run_fraction() >= MIN_VALID_RUN_FRACTION
    }

    /// Successful raw-run trajectories.
    pub fn raw_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.raw_records.iter().filter_map(|r| r.outcome.trajectory())
    }
}

fn pairwise(
    raw: &[Option<&Trajectory>],
    noisy: &[Option<&Trajectory>],
    max_time_offset: f64,
) -> Vec<Vec<Option<f64>>> {
    raw.par_iter()
        .map(|reference| {
            noisy
                .iter()
                .map(|estimate| match (reference, estimate) {
                    (Some(reference), Some(estimate)) => {
                        ate(estimate, reference, max_time_offset).ok().map(|r| r.rmse)
                    }
                    _ => None,
                })
                .collect()
        })
        .collect()
}

fn assemble(
    ate_matrix: Vec<Vec<Option<f64>>>,
    raw_records: Vec<RunRecord>,
    noisy_records: Vec<RunRecord>,
) -> Result<GtfResult, GtfError> {
    let (sum, count) = ate_matrix
        .iter()
        .flatten()
        .filter_map(|e| *e)
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(GtfError::InsufficientValidPairs);
    }
    Ok(GtfResult {
        gtf_ate: sum / count as f64,
        ate_matrix,
        raw_records,
        noisy_records,
        valid_pair_count: count,
    })
}

/// GTF ATE over pre-computed trajectories; no pipeline is executed.
pub fn gtf_metric_from_trajectories(
    raw: &[Trajectory],
    noisy: &[Trajectory],
    max_time_offset: f64,
) -> Result<GtfResult, GtfError> {
    if raw.is_empty() || noisy.is_empty() {
        return Err(GtfError::InvalidConfig("need at least one raw and one noisy trajectory".into()));
    }
    let raw_refs: Vec<_> = raw.iter().map(Some).collect();
    let noisy_refs: Vec<_> = noisy.iter().map(Some).collect();
    assemble(pairwise(&raw_refs, &noisy_refs, max_time_offset), Vec::new(), Vec::new())
}

/// GTF ATE over already executed runs. Failed runs leave their row or column
/// empty.
pub fn gtf_metric_from_records(
    raw_records: Vec<RunRecord>,
    noisy_records: Vec<RunRecord>,
    max_time_offset: f64,
) -> Result<GtfResult, GtfError> {
    if !raw_records
        .iter()
        .chain(&noisy_records)
        .any(|r| r.outcome.is_success())
    {
        return Err(GtfError::AllRunsFailed);
    }
    let raw: Vec<_> = raw_records.iter().map(|r| r.outcome.trajectory()).collect();
    let noisy: Vec<_> = noisy_records.iter().map(|r| r.outcome.trajectory()).collect();
    let matrix = pairwise(&raw, &noisy, max_time_offset);
    assemble(matrix, raw_records, noisy_records)
}

/// Materialises `k_delta` noisy copies of `images` under `root`, one
/// directory per noisy run, each with its own noise stream.
pub fn materialize_noisy_sets(
    images: &Path,
    root: &Path,
    noise: &NoiseSpec,
    k_delta: usize,
) -> Result<Vec<PathBuf>, GtfError> {
    (0..k_delta)
        .map(|j| {
            let dir = root.join(format!("noisy_{j:03}"));
            perturb_image_set(images, &dir, noise, j as u64)?;
            Ok(dir)
        })
        .collect()
}

/// Full evaluation: `k` raw runs, `k_delta` noisy runs, pairwise ATE, mean.
///
/// Raw runs use run indices `0..k` and noisy runs `k..k + k_delta`, so every
/// execution in one evaluation sees a distinct index.
pub fn gtf_ate(
    pipeline: &dyn Pipeline,
    params: &Params,
    images: &Path,
    cfg: &GtfConfig,
    exec: &ExecOptions,
) -> Result<GtfResult, GtfError> {
    cfg.validate()?;
    pipeline.check(params, images)?;
    count_images(images)?;

    let mut builder = tempfile::Builder::new();
    builder.prefix("gtf-noisy-");
    let root = match &exec.work_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| GtfError::Io(e.to_string()))?;
            builder.tempdir_in(dir)
        }
        None => builder.tempdir(),
    }
    .map_err(|e| GtfError::Io(e.to_string()))?;

    let noisy_dirs = materialize_noisy_sets(images, root.path(), &cfg.noise, cfg.k_delta)?;
    let mut requests: Vec<RunRequest> = (0..cfg.k)
        .map(|i| RunRequest {
            params: params.clone(),
            image_dir: images.to_path_buf(),
            run_index: i as u64,
        })
        .collect();
    requests.extend(noisy_dirs.iter().enumerate().map(|(j, dir)| RunRequest {
        params: params.clone(),
        image_dir: dir.clone(),
        run_index: (cfg.k + j) as u64,
    }));
    let mut records = run_batch(pipeline, &requests, exec.parallelism)?;
    let noisy_records = records.split_off(cfg.k);
    if exec.keep_noisy_images {
        let _ = root.keep();
    }
    gtf_metric_from_records(records, noisy_records, cfg.max_time_offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::RunOutcome;
    use crate::trajectory::Pose;
    use nalgebra::Vector3;

    fn line(n: usize, wobble: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let x = i as f64;
                    Pose::from_translation(x * 0.1, Vector3::new(x, (x * 0.7).sin() + wobble * (i % 3) as f64, 0.1 * x * x))
                })
                .collect(),
            "",
        )
        .unwrap()
    }

    fn record(outcome: RunOutcome) -> RunRecord {
        RunRecord {
            params: Params::new(),
            image_dir: PathBuf::new(),
            noisy: false,
            run_index: 0,
            outcome,
            wall_time: 0.0,
            scratch_dir: None,
        }
    }

    #[test]
    fn identical_single_pair_is_zero() {
        let t = line(8, 0.0);
        let r = gtf_metric_from_trajectories(std::slice::from_ref(&t), std::slice::from_ref(&t), 0.02).unwrap();
        assert!(r.gtf_ate < 1e-9);
        assert_eq!(r.valid_pair_count, 1);
    }

    #[test]
    fn single_pair_reduces_to_ate() {
        let a = line(8, 0.0);
        let b = line(8, 0.05);
        let r = gtf_metric_from_trajectories(std::slice::from_ref(&a), std::slice::from_ref(&b), 0.02).unwrap();
        assert_eq!(r.gtf_ate, ate(&b, &a, 0.02).unwrap().rmse);
    }

    #[test]
    fn failed_runs_are_dropped() {
        let a = line(8, 0.0);
        let b = line(8, 0.05);
        let raw = vec![
            record(RunOutcome::Success { trajectory: a.clone() }),
            record(RunOutcome::Timeout),
        ];
        let noisy = vec![
            record(RunOutcome::Success { trajectory: b.clone() }),
            record(RunOutcome::Failed { reason: "x".into() }),
            record(RunOutcome::Success { trajectory: a.clone() }),
        ];
        let r = gtf_metric_from_records(raw, noisy, 0.02).unwrap();
        assert_eq!(r.valid_pair_count, 2);
        assert!(r.ate_matrix[1].iter().all(Option::is_none));
        assert!(r.ate_matrix[0][1].is_none());
        let expected = (ate(&b, &a, 0.02).unwrap().rmse + ate(&a, &a, 0.02).unwrap().rmse) / 2.0;
        assert!((r.gtf_ate - expected).abs() <= 1e-12 * expected);
        assert!((r.valid_run_fraction() - 0.6).abs() < 1e-12);
        assert!(r.is_reportable());
    }

    #[test]
    fn all_failed_and_no_pairs() {
        let raw = vec![record(RunOutcome::Timeout)];
        let noisy = vec![record(RunOutcome::Degenerate { pose_fraction: 0.1 })];
        assert!(matches!(
            gtf_metric_from_records(raw, noisy, 0.02),
            Err(GtfError::AllRunsFailed)
        ));
        let raw = vec![record(RunOutcome::Success { trajectory: line(5, 0.0) })];
        let noisy = vec![record(RunOutcome::Timeout)];
        assert!(matches!(
            gtf_metric_from_records(raw, noisy, 0.02),
            Err(GtfError::InsufficientValidPairs)
        ));
    }

    #[test]
    fn config_validation() {
        let noise = NoiseSpec::new(1.0, 0).unwrap();
        assert!(GtfConfig::new(0, 1, noise).validate().is_err());
        assert!(GtfConfig::new(1, 0, noise).validate().is_err());
        assert!(GtfConfig::new(1, 1, noise).validate().is_ok());
    }
}
