mod support;

use gtf_core::gtf::{gtf_ate, gtf_metric_from_trajectories, ExecOptions, GtfConfig, GtfError};
use gtf_core::noise::NoiseSpec;
use gtf_core::oracle::{mock_pipeline, synthetic_trajectory};
use gtf_core::runner::Params;
use gtf_core::sim3::ate;
use gtf_core::trajectory::{Pose, Trajectory};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn jittered(base: &Trajectory, std: f64, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    base.map_poses(|p| {
        let n = Vector3::new(support::normal(&mut rng), support::normal(&mut rng), support::normal(&mut rng));
        Pose::new(p.timestamp, p.translation + n * std, p.rotation)
    })
}

fn config(k: usize, k_delta: usize, delta_sigma: f64, seed: u64) -> GtfConfig {
    GtfConfig::new(k, k_delta, NoiseSpec::new(delta_sigma, seed).unwrap())
}

fn params(v: f64) -> Params {
    Params::from([("v".to_string(), v)])
}

#[test]
fn identical_stub_outputs_give_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    support::write_images(&images, 10, 8, 8);
    let fixed = tmp.path().join("fixed.txt");
    synthetic_trajectory(10).write(&fixed).unwrap();
    let script = support::write_script(tmp.path(), "p.sh", &format!("cp {} \"$2\"", fixed.display()));
    let adapter = support::script_adapter(&script, 10.0);
    let r = gtf_ate(&adapter, &Params::new(), &images, &config(1, 1, 5.0, 1), &ExecOptions::default()).unwrap();
    assert!(r.gtf_ate < 1e-9);
    assert_eq!(r.valid_pair_count, 1);
    assert!(r.noisy_records[0].noisy);
    assert!(!r.raw_records[0].noisy);
}

#[test]
fn two_by_three_stub_matrix_matches_hand_computed_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    support::write_images(&images, 20, 8, 8);
    let base = synthetic_trajectory(20);
    let outputs: Vec<Trajectory> = (0..5)
        .map(|i| {
            let path = tmp.path().join(format!("traj_{i}.txt"));
            jittered(&base, 0.01 * (i + 1) as f64, i).write(&path).unwrap();
            Trajectory::read(&path).unwrap()
        })
        .collect();
    let script = support::write_script(tmp.path(), "p.sh", &format!("cp {}/traj_$3.txt \"$2\"", tmp.path().display()));
    let adapter = support::script_adapter(&script, 10.0);
    let exec = ExecOptions { parallelism: 3, ..ExecOptions::default() };
    let r = gtf_ate(&adapter, &Params::new(), &images, &config(2, 3, 5.0, 9), &exec).unwrap();

    assert_eq!(r.ate_matrix.len(), 2);
    assert!(r.ate_matrix.iter().all(|row| row.len() == 3 && row.iter().all(Option::is_some)));
    let mut sum = 0.0;
    for i in 0..2 {
        for j in 0..3 {
            let expected = ate(&outputs[2 + j], &outputs[i], 0.02).unwrap().rmse;
            assert!((r.ate_matrix[i][j].unwrap() - expected).abs() <= 1e-12 * expected);
            sum += expected;
        }
    }
    assert!((r.gtf_ate - sum / 6.0).abs() <= 1e-12 * r.gtf_ate);
    let present: f64 = r.present_entries().sum();
    assert!((r.gtf_ate * r.valid_pair_count as f64 - present).abs() <= 1e-12 * present);
}

#[test]
fn two_by_two_matches_numeric_alignment_oracle() {
    let base = synthetic_trajectory(8);
    let raw: Vec<_> = (0..2).map(|i| jittered(&base, 0.05, i)).collect();
    let noisy: Vec<_> = (2..4).map(|i| jittered(&base, 0.08, i)).collect();
    let r = gtf_metric_from_trajectories(&raw, &noisy, 0.02).unwrap();
    let mut oracle = 0.0;
    for a in &raw {
        for b in &noisy {
            oracle += support::numeric_ate(b, a, 0.02);
        }
    }
    oracle /= 4.0;
    assert!((r.gtf_ate - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", r.gtf_ate);
}

#[test]
fn shuffling_run_lists_leaves_score_unchanged() {
    let base = synthetic_trajectory(30);
    let mut raw: Vec<_> = (0..4).map(|i| jittered(&base, 0.02, i)).collect();
    let mut noisy: Vec<_> = (10..16).map(|i| jittered(&base, 0.05, i)).collect();
    let reference = gtf_metric_from_trajectories(&raw, &noisy, 0.02).unwrap().gtf_ate;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        raw.shuffle(&mut rng);
        noisy.shuffle(&mut rng);
        let g = gtf_metric_from_trajectories(&raw, &noisy, 0.02).unwrap().gtf_ate;
        assert!((g - reference).abs() <= 1e-12 * reference);
    }
}

#[test]
fn no_overlap_is_insufficient_pairs() {
    let a = synthetic_trajectory(10);
    let b = a.map_poses(|p| Pose::new(p.timestamp + 100.0, p.translation, p.rotation));
    assert!(matches!(
        gtf_metric_from_trajectories(&[a], &[b], 0.02),
        Err(GtfError::InsufficientValidPairs)
    ));
}

#[test]
fn mock_gtf_matches_analytic_pairwise_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    support::write_images(&images, 10, 8, 8);
    let (poses, f, gain, delta_sigma): (usize, f64, f64, f64) = (60, 0.02, 0.004, 5.0);
    let sigma_raw2 = f * f;
    let sigma_noisy2 = f * f + (gain * delta_sigma) * (gain * delta_sigma);
    let expected = support::expected_pairwise_rmse((sigma_raw2 + sigma_noisy2).sqrt(), poses);

    let mut total = 0.0;
    for rep in 0..50 {
        let mock = support::constant_mock(1000 + rep, poses, f, gain);
        let r = gtf_ate(&mock, &params(1.0), &images, &config(2, 3, delta_sigma, rep), &ExecOptions::default()).unwrap();
        total += r.gtf_ate;
    }
    let mean = total / 50.0;
    assert!((mean - expected).abs() / expected < 0.05, "mean {mean} vs expected {expected}");
}

#[test]
fn mock_gtf_grows_with_input_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    support::write_images(&images, 10, 8, 8);
    let levels = [0.0, 2.0, 5.0, 10.0, 20.0];
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    for rep in 0..15 {
        let mock = support::constant_mock(rep, 40, 0.01, 0.003);
        for (l, &ds) in levels.iter().enumerate() {
            let r = gtf_ate(&mock, &params(1.0), &images, &config(2, 3, ds, rep), &ExecOptions::default()).unwrap();
            per_level[l].push(r.gtf_ate);
        }
    }
    let medians: Vec<f64> = per_level.iter_mut().map(|v| support::median(v)).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}

#[test]
fn zero_error_mock_without_noise_is_exact() {
    let spec = support::constant_mock(3, 20, 0.0, 0.0).spec;
    let t = mock_pipeline(&spec, 1.0, 0.0, 7).unwrap();
    assert_eq!(t.to_text(), spec.true_trajectory.to_text());
}
