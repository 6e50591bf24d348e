//! Closed-form similarity alignment (Umeyama) and the absolute trajectory
//! error built on top of it.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{associate, Pose, Trajectory};

/// Minimum number of associated poses for a Sim(3) fit.
pub const MIN_ALIGNMENT_PAIRS: usize = 3;

/// Relative threshold on the second singular value of the centred source
/// scatter below which the configuration is treated as collinear.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("point sets differ in length ({source_len} vs {target_len})")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("need at least {MIN_ALIGNMENT_PAIRS} points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("only {0} associated poses, need at least {MIN_ALIGNMENT_PAIRS}")]
    InsufficientOverlap(usize),
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            scale,
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * point) + self.translation
    }

    /// Moves every pose of `trajectory` by this transform. Orientations are
    /// rotated; scale only affects positions.
    pub fn transform_trajectory(&self, trajectory: &Trajectory) -> Trajectory {
        let rot = UnitQuaternion::from_matrix(&self.rotation);
        trajectory.map_poses(|p| Pose::new(p.timestamp, self.apply(&p.translation), rot * p.rotation))
    }

    /// Sum of squared residuals `target_i - T(source_i)`.
    pub fn cost(&self, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
        source
            .iter()
            .zip(target)
            .map(|(s, t)| (t - self.apply(s)).norm_squared())
            .sum()
    }
}

/// Least-squares similarity transform taking `source` onto `target`,
/// minimising `sum |target_i - (s R source_i + t)|^2`.
pub fn umeyama_sim3(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<Sim3Transform, AlignmentError> {
    if source.len() != target.len() {
        return Err(AlignmentError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    let n = source.len();
    if n < MIN_ALIGNMENT_PAIRS {
        return Err(AlignmentError::TooFewPoints(n));
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_dst = target.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut src_var = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_src;
        let dt = t - mu_dst;
        cross += dt * ds.transpose();
        scatter += ds * ds.transpose();
        src_var += ds.norm_squared();
    }
    cross *= inv_n;
    scatter *= inv_n;
    src_var *= inv_n;

    let mut spread = scatter.singular_values();
    spread
        .as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    if spread[0] <= 0.0 || spread[1] <= RANK_TOLERANCE * spread[0] {
        return Err(AlignmentError::DegenerateConfiguration(
            "source points are coincident or collinear".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction paired with the smallest singular value.
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(2);
        sign[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let trace: f64 = svd
        .singular_values
        .iter()
        .zip(sign.iter())
        .map(|(d, s)| d * s)
        .sum();
    let scale = trace / src_var;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(AlignmentError::DegenerateConfiguration(format!(
            "non-positive scale {scale}"
        )));
    }
    let translation = mu_dst - scale * rotation * mu_src;
    Ok(Sim3Transform {
        scale,
        rotation,
        translation,
    })
}

/// Absolute trajectory error after Sim(3) alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub rmse: f64,
    pub per_pose_errors: Vec<f64>,
    /// Maps estimate positions into the reference frame.
    pub transform: Sim3Transform,
    pub pair_count: usize,
}

/// ATE of `estimate` against `reference`.
///
/// Poses are associated by timestamp, the estimate's translations are aligned
/// onto the reference's with [`umeyama_sim3`], and the RMSE of the residual
/// translations is reported in reference units. Rotations do not contribute.
pub fn ate(
    estimate: &Trajectory,
    reference: &Trajectory,
    max_time_offset: f64,
) -> Result<AteResult, AlignmentError> {
    let assoc = associate(estimate, reference, max_time_offset);
    if assoc.len() < MIN_ALIGNMENT_PAIRS {
        return Err(AlignmentError::InsufficientOverlap(assoc.len()));
    }
    let source = estimate
        .translations(&assoc.first_indices())
        .expect("association indices are in range");
    let target = reference
        .translations(&assoc.second_indices())
        .expect("association indices are in range");
    let transform = umeyama_sim3(&source, &target)?;
    let per_pose_errors: Vec<f64> = source
        .iter()
        .zip(&target)
        .map(|(s, t)| (t - transform.apply(s)).norm())
        .collect();
    let pair_count = per_pose_errors.len();
    let rmse = (per_pose_errors.iter().map(|e| e * e).sum::<f64>() / pair_count as f64).sqrt();
    Ok(AteResult {
        rmse,
        per_pose_errors,
        transform,
        pair_count,
    })
}
