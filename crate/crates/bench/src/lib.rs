//! Deterministic fixtures shared by the benchmarks in `benches/`.

use gtf_core::oracle::synthetic_trajectory;
use gtf_core::{GrayImage, Pose, Trajectory};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic path of `n` poses with uniform position jitter of `jitter` metres
/// and timestamps shifted by up to 5 ms.
pub fn jittered_trajectory(n: usize, jitter: f64, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses = synthetic_trajectory(n)
        .poses()
        .iter()
        .map(|p| {
            let offset = Vector3::from_fn(|_, _| rng.random_range(-jitter..=jitter));
            Pose::new(p.timestamp + rng.random_range(0.0..0.005), p.translation + offset, p.rotation)
        })
        .collect();
    Trajectory::new(poses, format!("jittered-{seed}")).expect("shifts are smaller than the 0.1 s spacing")
}

pub fn random_image(width: u32, height: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..width * height).map(|_| rng.random()).collect();
    GrayImage::new(width, height, pixels).expect("pixel count matches dimensions")
}
