//! Linear-Gaussian sensitivity oracle and a controllable mock pipeline.
//!
//! For a measurement model `z = J x + e` with `e ~ N(0, sigma2 I_m)` the state
//! information matrix is `J^T J / sigma2`, so two setups can be ranked by the
//! log-determinant of their Jacobian Gram matrices alone. Perturbing the
//! measurements with extra variance `delta_sigma2` and differencing the two
//! least-squares estimates gives `cov(diff) = (2 sigma2 + delta_sigma2) (J^T J)^-1`,
//! which preserves that ranking and can be estimated by sampling.

use std::f64::consts::LN_2;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::NoiseManifest;
use crate::runner::{
    classify_trajectory, count_images, Params, Pipeline, RunRecord, RunnerError,
};
use crate::trajectory::{Pose, Trajectory};

/// Random problems whose smallest singular value falls below this are redrawn.
pub const MIN_SINGULAR_VALUE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("jacobian is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid variance: {0}")]
    InvalidVariance(String),
    #[error("parameter value {0} is outside the error-scale domain")]
    DomainError(f64),
    #[error("invalid problem file: {0}")]
    Parse(String),
}

/// Optional labelling of the state as `c` camera poses and `d` points
/// (`n = 6c + 3d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateStructure {
    pub images: usize,
    pub points: usize,
}

/// `z = J x + e`, `e ~ N(0, sigma2 I_m)`, with `J` of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    jacobian: DMatrix<f64>,
    sigma2: f64,
    structure: Option<StateStructure>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    m: usize,
    n: usize,
    sigma2: f64,
    jacobian: Vec<f64>,
    #[serde(default)]
    structure: Option<StateStructure>,
}

impl LinearProblem {
    /// `sigma2` may be zero (noiseless sampling); information quantities then
    /// report [`OracleError::InvalidVariance`].
    pub fn new(jacobian: DMatrix<f64>, sigma2: f64) -> Result<Self, OracleError> {
        let (m, n) = jacobian.shape();
        if n == 0 || m < n {
            return Err(OracleError::DimensionMismatch(format!(
                "need m >= n >= 1, got m = {m}, n = {n}"
            )));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(OracleError::InvalidVariance(format!("sigma2 = {sigma2}")));
        }
        let sv = jacobian.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > 1e-12 * max.max(f64::MIN_POSITIVE)) {
            return Err(OracleError::RankDeficient(min));
        }
        Ok(Self {
            jacobian,
            sigma2,
            structure: None,
        })
    }

    pub fn with_structure(mut self, structure: StateStructure) -> Result<Self, OracleError> {
        let expected = 6 * structure.images + 3 * structure.points;
        if expected != self.n() {
            return Err(OracleError::DimensionMismatch(format!(
                "6c + 3d = {expected} but n = {}",
                self.n()
            )));
        }
        self.structure = Some(structure);
        Ok(self)
    }

    /// I.i.d. standard normal `m x n` Jacobian, redrawn until its smallest
    /// singular value is at least [`MIN_SINGULAR_VALUE`].
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, sigma2: f64, rng: &mut R) -> Result<Self, OracleError> {
        if n == 0 || m < n {
            return Err(OracleError::DimensionMismatch(format!(
                "need m >= n >= 1, got m = {m}, n = {n}"
            )));
        }
        loop {
            let j = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng));
            if j.singular_values().min() >= MIN_SINGULAR_VALUE {
                return Self::new(j, sigma2);
            }
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, OracleError> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| OracleError::Parse(e.to_string()))?;
        if file.jacobian.len() != file.m * file.n {
            return Err(OracleError::Parse(format!(
                "jacobian has {} entries, expected m * n = {}",
                file.jacobian.len(),
                file.m * file.n
            )));
        }
        let problem = Self::new(DMatrix::from_row_slice(file.m, file.n, &file.jacobian), file.sigma2)?;
        match file.structure {
            Some(s) => problem.with_structure(s),
            None => Ok(problem),
        }
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let file = ProblemFile {
            m: self.m(),
            n: self.n(),
            sigma2: self.sigma2,
            jacobian: self.jacobian.transpose().as_slice().to_vec(),
            structure: self.structure,
        };
        toml::to_string(&file).expect("problem serialises")
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn m(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn n(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn structure(&self) -> Option<StateStructure> {
        self.structure
    }

    /// `ln |J^T J|` from the diagonal of the thin QR factor of `J`.
    pub fn gram_log_det(&self) -> f64 {
        let r = self.jacobian.clone().qr().r();
        2.0 * r.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>()
    }

    fn positive_sigma2(&self) -> Result<f64, OracleError> {
        if self.sigma2 > 0.0 {
            Ok(self.sigma2)
        } else {
            Err(OracleError::InvalidVariance("sigma2 must be positive for information quantities".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub matrix: DMatrix<f64>,
    /// Natural log of the determinant.
    pub log_det: f64,
}

/// `Lambda = J^T J / sigma2` and `ln |Lambda| = ln |J^T J| - n ln sigma2`.
pub fn information_matrix(p: &LinearProblem) -> Result<InformationMatrix, OracleError> {
    let sigma2 = p.positive_sigma2()?;
    let matrix = p.jacobian.transpose() * &p.jacobian / sigma2;
    let log_det = p.gram_log_det() - p.n() as f64 * sigma2.ln();
    Ok(InformationMatrix { matrix, log_det })
}

/// Information gained, in bits, by using setup `q` instead of `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub e_bits: f64,
    pub log_det_p: f64,
    pub log_det_q: f64,
}

/// `E(p, q) = 1/2 log2(|Lambda_q| / |Lambda_p|)`.
pub fn entropy_reduction(p: &LinearProblem, q: &LinearProblem) -> Result<EntropyReport, OracleError> {
    if p.n() != q.n() {
        return Err(OracleError::DimensionMismatch(format!(
            "state dimensions differ ({} vs {})",
            p.n(),
            q.n()
        )));
    }
    let log_det_p = information_matrix(p)?.log_det;
    let log_det_q = information_matrix(q)?.log_det;
    Ok(EntropyReport {
        e_bits: (log_det_q - log_det_p) / (2.0 * LN_2),
        log_det_p,
        log_det_q,
    })
}

/// `ln |Lambda_diff| = ln |J^T J| - n ln(2 sigma2 + delta_sigma2)`, the
/// information of the difference between the clean and the perturbed
/// estimate.
pub fn perturbed_information(p: &LinearProblem, delta_sigma2: f64) -> Result<f64, OracleError> {
    if !(delta_sigma2 >= 0.0) || !delta_sigma2.is_finite() {
        return Err(OracleError::InvalidVariance(format!("delta_sigma2 = {delta_sigma2}")));
    }
    let sigma2 = p.positive_sigma2()?;
    Ok(p.gram_log_det() - p.n() as f64 * (2.0 * sigma2 + delta_sigma2).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub x_hat: DVector<f64>,
    pub x_hat_delta: DVector<f64>,
    /// `x_hat_delta - x_hat`.
    pub diff: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStudy {
    pub samples: Vec<PerturbationSample>,
    /// Unbiased sample covariance of `diff`.
    pub covariance: DMatrix<f64>,
    /// `(2 sigma2 + delta_sigma2) (J^T J)^-1`.
    pub predicted_covariance: DMatrix<f64>,
}

impl PerturbationStudy {
    pub fn mean_diff_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.diff.norm()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Draws `trials` clean/perturbed measurement pairs around a seed-derived true
/// state, solves both least-squares problems by QR, and records the
/// difference. Trial `t` uses its own ChaCha stream, so results do not depend
/// on scheduling.
pub fn sample_perturbation(
    p: &LinearProblem,
    delta_sigma2: f64,
    trials: usize,
    seed: u64,
) -> Result<PerturbationStudy, OracleError> {
    if trials < 2 {
        return Err(OracleError::DimensionMismatch("need at least 2 trials".into()));
    }
    if !(delta_sigma2 >= 0.0) || !delta_sigma2.is_finite() {
        return Err(OracleError::InvalidVariance(format!("delta_sigma2 = {delta_sigma2}")));
    }
    let (m, n) = (p.m(), p.n());
    let qr = p.jacobian.clone().qr();
    let q_t = qr.q().transpose();
    let r = qr.r();
    let solve = |z: &DVector<f64>| -> DVector<f64> {
        r.solve_upper_triangular(&(&q_t * z))
            .expect("full column rank checked at construction")
    };

    let mut state_rng = ChaCha12Rng::seed_from_u64(seed);
    let x_true = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut state_rng));
    let clean = &p.jacobian * &x_true;
    let sigma = p.sigma2.sqrt();
    let sigma_delta = (p.sigma2 + delta_sigma2).sqrt();

    let samples: Vec<PerturbationSample> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let z = DVector::from_fn(m, |i, _| clean[i] + sigma * { let z: f64 = StandardNormal.sample(&mut rng); z });
            let z_delta =
                DVector::from_fn(m, |i, _| clean[i] + sigma_delta * { let z: f64 = StandardNormal.sample(&mut rng); z });
            let x_hat = solve(&z);
            let x_hat_delta = solve(&z_delta);
            let diff = &x_hat_delta - &x_hat;
            PerturbationSample {
                x_hat,
                x_hat_delta,
                diff,
            }
        })
        .collect();

    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + &s.diff) / trials as f64;
    let mut covariance = DMatrix::zeros(n, n);
    for s in &samples {
        let d = &s.diff - &mean;
        covariance += &d * d.transpose();
    }
    covariance /= (trials - 1) as f64;

    let gram = p.jacobian.transpose() * &p.jacobian;
    let gram_inv = gram
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(OracleError::RankDeficient(0.0))?;
    let predicted_covariance = gram_inv * (2.0 * p.sigma2 + delta_sigma2);
    Ok(PerturbationStudy {
        samples,
        covariance,
        predicted_covariance,
    })
}

/// Per-pose error standard deviation of the mock pipeline as a function of
/// the swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorScale {
    Constant { value: f64 },
    /// `minimum + curvature * (u - u_opt)^2`, with `u = ln v` when
    /// `log_domain` is set (then `v` must be positive) and `u = v` otherwise.
    Quadratic {
        minimum: f64,
        optimum: f64,
        curvature: f64,
        #[serde(default)]
        log_domain: bool,
    },
}

impl ErrorScale {
    pub fn eval(&self, value: f64) -> Result<f64, OracleError> {
        if !value.is_finite() {
            return Err(OracleError::DomainError(value));
        }
        match *self {
            ErrorScale::Constant { value: c } => Ok(c),
            ErrorScale::Quadratic {
                minimum,
                optimum,
                curvature,
                log_domain,
            } => {
                let (u, u_opt) = if log_domain {
                    if value <= 0.0 || optimum <= 0.0 {
                        return Err(OracleError::DomainError(value));
                    }
                    (value.ln(), optimum.ln())
                } else {
                    (value, optimum)
                };
                Ok(minimum + curvature * (u - u_opt).powi(2))
            }
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        let ok = match *self {
            ErrorScale::Constant { value } => value >= 0.0 && value.is_finite(),
            ErrorScale::Quadratic { minimum, curvature, .. } => {
                minimum >= 0.0 && curvature >= 0.0 && minimum.is_finite() && curvature.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(OracleError::InvalidVariance(format!("error scale must be non-negative: {self:?}")))
        }
    }
}

/// Stand-in for an external pipeline: the true trajectory plus i.i.d.
/// Gaussian translation noise whose scale depends on the parameter value and
/// on the input image noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockPipelineSpec {
    pub true_trajectory: Trajectory,
    pub error_scale: ErrorScale,
    /// Metres of pose error per grey level of input noise.
    pub input_noise_gain: f64,
    pub seed: u64,
}

impl MockPipelineSpec {
    /// Per-axis translation noise standard deviation.
    pub fn pose_noise_std(&self, param_value: f64, input_delta_sigma: f64) -> Result<f64, OracleError> {
        self.error_scale.validate()?;
        let base = self.error_scale.eval(param_value)?;
        let induced = self.input_noise_gain * input_delta_sigma;
        Ok((base * base + induced * induced).sqrt())
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mock_seed(seed: u64, param_value: f64, input_delta_sigma: f64, run_index: u64) -> u64 {
    [param_value.to_bits(), input_delta_sigma.to_bits(), run_index]
        .iter()
        .fold(mix64(seed), |acc, &v| mix64(acc ^ mix64(v.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

/// One mock execution. Rotations are passed through unchanged.
pub fn mock_pipeline(
    spec: &MockPipelineSpec,
    param_value: f64,
    input_delta_sigma: f64,
    run_index: u64,
) -> Result<Trajectory, OracleError> {
    if !(input_delta_sigma >= 0.0) {
        return Err(OracleError::InvalidVariance(format!("input delta sigma {input_delta_sigma}")));
    }
    let std = spec.pose_noise_std(param_value, input_delta_sigma)?;
    let mut rng = ChaCha12Rng::seed_from_u64(mock_seed(spec.seed, param_value, input_delta_sigma, run_index));
    let mut trajectory = if std == 0.0 {
        spec.true_trajectory.clone()
    } else {
        let normal = Normal::new(0.0, std).expect("finite std");
        spec.true_trajectory.map_poses(|p| {
            let noise = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            Pose::new(p.timestamp, p.translation + noise, p.rotation)
        })
    };
    trajectory.label = format!("mock-{run_index}");
    Ok(trajectory)
}

/// Smooth synthetic camera path: `n` poses at 10 Hz along a rising loop
/// with a few metres of extent.
pub fn synthetic_trajectory(n: usize) -> Trajectory {
    let poses = (0..n.max(1))
        .map(|i| {
            let s = i as f64 / n.max(1) as f64 * std::f64::consts::TAU;
            Pose::from_translation(
                i as f64 * 0.1,
                Vector3::new(3.0 * s.cos(), 2.0 * (2.0 * s).sin(), 0.5 * s + 0.3 * (3.0 * s).cos()),
            )
        })
        .collect();
    Trajectory::new(poses, "synthetic").expect("timestamps increase")
}

/// The mock as a [`Pipeline`]: reads the swept parameter from `params` and
/// the input noise level from the image directory's noise manifest (zero when
/// absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockPipeline {
    pub spec: MockPipelineSpec,
    pub param_name: String,
    #[serde(default = "default_fraction")]
    pub min_pose_fraction: f64,
}

fn default_fraction() -> f64 {
    crate::runner::DEFAULT_MIN_POSE_FRACTION
}

impl MockPipeline {
    pub fn new(spec: MockPipelineSpec, param_name: impl Into<String>) -> Self {
        Self {
            spec,
            param_name: param_name.into(),
            min_pose_fraction: default_fraction(),
        }
    }

    /// Trajectory for the given directory, as the executable shim produces it.
    pub fn trajectory_for(&self, param_value: f64, image_dir: &Path, run_index: u64) -> Result<Trajectory, OracleError> {
        let delta_sigma = NoiseManifest::read(image_dir).map(|m| m.delta_sigma).unwrap_or(0.0);
        mock_pipeline(&self.spec, param_value, delta_sigma, run_index)
    }
}

impl Pipeline for MockPipeline {
    fn check(&self, params: &Params, image_dir: &Path) -> Result<(), RunnerError> {
        let value = params.get(&self.param_name).ok_or_else(|| {
            RunnerError::Config(format!("mock pipeline needs parameter '{}'", self.param_name))
        })?;
        self.spec
            .pose_noise_std(*value, 0.0)
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        count_images(image_dir).map(|_| ())
    }

    fn run(&self, params: &Params, image_dir: &Path, run_index: u64) -> Result<RunRecord, RunnerError> {
        self.check(params, image_dir)?;
        let started = Instant::now();
        let image_count = count_images(image_dir)?;
        let manifest = NoiseManifest::read(image_dir);
        let value = params[&self.param_name];
        let outcome = match self.trajectory_for(value, image_dir, run_index) {
            Ok(t) => classify_trajectory(Ok(t), image_count, self.min_pose_fraction),
            Err(e) => crate::runner::RunOutcome::Failed { reason: e.to_string() },
        };
        Ok(RunRecord {
            params: params.clone(),
            image_dir: image_dir.to_path_buf(),
            noisy: manifest.is_some(),
            run_index,
            outcome,
            wall_time: started.elapsed().as_secs_f64(),
            scratch_dir: None,
        })
    }
}
