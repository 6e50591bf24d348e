//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use gtf_core::noise::{list_images, GrayImage};
use gtf_core::oracle::{synthetic_trajectory, ErrorScale, MockPipeline, MockPipelineSpec};
use gtf_core::trajectory::{associate, Pose, Trajectory};
use gtf_core::PipelineAdapter;
use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_points<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(normal(rng), normal(rng), normal(rng)) * spread)
        .collect()
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3<f64> {
    let axis = Vector3::new(normal(rng), normal(rng), normal(rng));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Rotation3::new(axis.normalize() * angle)
}

/// Scale in [0.2, 5], arbitrary rotation, translation up to a few metres.
pub fn random_sim3<R: Rng + ?Sized>(rng: &mut R) -> (f64, Rotation3<f64>, Vector3<f64>) {
    let scale = rng.random_range(0.2f64.ln()..5.0f64.ln()).exp();
    let t = Vector3::new(normal(rng), normal(rng), normal(rng)) * 3.0;
    (scale, random_rotation(rng), t)
}

pub fn trajectory_from_points(points: &[Vector3<f64>]) -> Trajectory {
    Trajectory::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| Pose::from_translation(i as f64 * 0.1, *p))
            .collect(),
        "test",
    )
    .unwrap()
}

fn sim3_cost(s: f64, r: &Matrix3<f64>, t: &Vector3<f64>, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(a, b)| (b - (s * (r * a) + t)).norm_squared())
        .sum()
}

/// Minimises the alignment cost with Levenberg-Marquardt over
/// `(ln s, rotation increment, t)` using finite-difference Jacobians, from
/// several starting rotations. Returns the smallest cost reached and its
/// parameters.
pub fn numeric_sim3(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (f64, f64, Matrix3<f64>, Vector3<f64>) {
    let starts = [
        Vector3::zeros(),
        Vector3::new(std::f64::consts::PI * 0.9, 0.0, 0.0),
        Vector3::new(0.0, std::f64::consts::PI * 0.9, 0.0),
        Vector3::new(0.0, 0.0, std::f64::consts::PI * 0.9),
        Vector3::new(1.5, -1.5, 1.5),
        Vector3::new(-2.0, 1.0, 0.5),
    ];
    let mut best: Option<(f64, f64, Matrix3<f64>, Vector3<f64>)> = None;
    for w in starts {
        let r0 = Rotation3::new(w).into_inner();
        let (cost, s, r, t) = levenberg_marquardt(src, dst, 1.0, r0, Vector3::zeros());
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, s, r, t));
        }
    }
    best.unwrap()
}

fn residuals(s: f64, r: &Matrix3<f64>, t: &Vector3<f64>, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Vec<f64> {
    src.iter()
        .zip(dst)
        .flat_map(|(a, b)| {
            let e = b - (s * (r * a) + t);
            [e.x, e.y, e.z]
        })
        .collect()
}

fn apply_step(s: f64, r: &Matrix3<f64>, t: &Vector3<f64>, d: &[f64]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let dr = Rotation3::new(Vector3::new(d[1], d[2], d[3])).into_inner();
    (s * d[0].exp(), dr * r, t + Vector3::new(d[4], d[5], d[6]))
}

fn levenberg_marquardt(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    mut s: f64,
    mut r: Matrix3<f64>,
    mut t: Vector3<f64>,
) -> (f64, f64, Matrix3<f64>, Vector3<f64>) {
    let m = src.len() * 3;
    let mut lambda = 1e-3;
    let mut cost = sim3_cost(s, &r, &t, src, dst);
    for _ in 0..500 {
        let base = residuals(s, &r, &t, src, dst);
        let mut jac = DMatrix::zeros(m, 7);
        let h = 1e-7;
        for k in 0..7 {
            let mut d = [0.0; 7];
            d[k] = h;
            let (sp, rp, tp) = apply_step(s, &r, &t, &d);
            let plus = residuals(sp, &rp, &tp, src, dst);
            d[k] = -h;
            let (sm, rm, tm) = apply_step(s, &r, &t, &d);
            let minus = residuals(sm, &rm, &tm, src, dst);
            for i in 0..m {
                jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let e = nalgebra::DVector::from_vec(base);
        let jtj = jac.transpose() * &jac;
        let jte = jac.transpose() * &e;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..7 {
                a[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&(-&jte)) else {
                lambda *= 10.0;
                continue;
            };
            let (sn, rn, tn) = apply_step(s, &r, &t, step.as_slice());
            let new_cost = sim3_cost(sn, &rn, &tn, src, dst);
            if new_cost < cost {
                let converged = cost - new_cost <= 1e-16 * cost.max(1e-300) || step.norm() < 1e-14;
                (s, r, t, cost) = (sn, rn, tn, new_cost);
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if converged {
                    return (cost, s, r, t);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (cost, s, r, t)
}

/// ATE computed with the numeric aligner in place of the closed form.
pub fn numeric_ate(estimate: &Trajectory, reference: &Trajectory, max_time_offset: f64) -> f64 {
    let assoc = associate(estimate, reference, max_time_offset);
    let src = estimate.translations(&assoc.first_indices()).unwrap();
    let dst = reference.translations(&assoc.second_indices()).unwrap();
    let (cost, ..) = numeric_sim3(&src, &dst);
    (cost / src.len() as f64).sqrt()
}

/// Size of the largest one-to-one matching within the offset bound, found by
/// exhaustive search.
pub fn brute_force_max_matching(a: &[f64], b: &[f64], max_offset: f64) -> usize {
    fn go(i: usize, a: &[f64], b: &[f64], used: &mut Vec<bool>, bound: f64) -> usize {
        if i == a.len() {
            return 0;
        }
        let mut best = go(i + 1, a, b, used, bound);
        for j in 0..b.len() {
            if !used[j] && (a[i] - b[j]).abs() <= bound {
                used[j] = true;
                best = best.max(1 + go(i + 1, a, b, used, bound));
                used[j] = false;
            }
        }
        best
    }
    go(0, a, b, &mut vec![false; b.len()], max_offset + 1e-9)
}

/// Slope and intercept from the 2x2 normal equations solved by Cramer's rule.
pub fn normal_equations_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

/// `ln|det(A)|` from an LU factorisation.
pub fn lu_log_det(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant().abs().ln()
}

/// Expected Sim(3)-aligned RMSE between two copies of an `n`-pose path, each
/// perturbed by isotropic translation noise, when the per-axis standard
/// deviation of the difference is `sigma_d`. Alignment removes 7 of the
/// `3n` residual dimensions; the last factor is the chi mean correction.
pub fn expected_pairwise_rmse(sigma_d: f64, n: usize) -> f64 {
    let dof = (3 * n - 7) as f64;
    sigma_d * (dof / n as f64).sqrt() * (1.0 - 1.0 / (4.0 * dof))
}

/// Writes `count` small greyscale PNGs with distinct content.
pub fn write_images(dir: &Path, count: usize, width: u32, height: u32) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..count)
        .map(|k| {
            let data = (0..width * height)
                .map(|i| ((i as usize * 7 + k * 31) % 200 + 20) as u8)
                .collect();
            let path = dir.join(format!("frame_{k:04}.png"));
            GrayImage::new(width, height, data).unwrap().save(&path).unwrap();
            path
        })
        .collect()
}

/// SHA-256 over every file name and content in `dir`, in name order.
pub fn dir_checksum(dir: &Path) -> Vec<u8> {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    let mut hasher = Sha256::new();
    for path in entries {
        hasher.update(path.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update(fs::read(&path).unwrap());
    }
    hasher.finalize().to_vec()
}

pub fn image_count(dir: &Path) -> usize {
    list_images(dir).unwrap().len()
}

/// Writes an executable shell script and returns its path.
pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Adapter running `script {images} {output} {run_index}`.
pub fn script_adapter(script: &Path, timeout: f64) -> PipelineAdapter {
    PipelineAdapter::new(
        format!("{} {{images}} {{output}} {{run_index}}", script.display()),
        timeout,
    )
}

/// Writes the first `n` poses of `trajectory` in text form to `path`.
pub fn write_prefix(trajectory: &Trajectory, n: usize, path: &Path) {
    let t = Trajectory::new(trajectory.poses()[..n].to_vec(), "").unwrap();
    t.write(path).unwrap();
}

/// Mock with a quadratic-in-log error curve, optimum at `optimum`.
pub fn quadratic_mock(seed: u64, poses: usize, optimum: f64, input_noise_gain: f64) -> MockPipeline {
    MockPipeline::new(
        MockPipelineSpec {
            true_trajectory: synthetic_trajectory(poses),
            error_scale: ErrorScale::Quadratic {
                minimum: 0.01,
                optimum,
                curvature: 0.02,
                log_domain: true,
            },
            input_noise_gain,
            seed,
        },
        "v",
    )
}

pub fn constant_mock(seed: u64, poses: usize, value: f64, input_noise_gain: f64) -> MockPipeline {
    MockPipeline::new(
        MockPipelineSpec {
            true_trajectory: synthetic_trajectory(poses),
            error_scale: ErrorScale::Constant { value },
            input_noise_gain,
            seed,
        },
        "v",
    )
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
