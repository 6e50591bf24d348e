//! Seeded additive Gaussian noise on 8-bit grayscale intensities.
//!
//! Every pixel's noise sample is a pure function of `(base_seed, stream_id,
//! pixel index)`: the ChaCha key comes from `base_seed`, the stream selector
//! from `stream_id`, and samples are drawn in row-major order. Image sets
//! derive `stream_id` from `(run_index, image ordinal)`, so they can be
//! generated in any order or in parallel with identical results.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the provenance record written next to a perturbed image set.
pub const NOISE_MANIFEST: &str = ".gtf_noise.json";

/// Extensions recognised as images, lowercase.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm", "jpg", "jpeg", "bmp", "tif", "tiff"];

const LOSSY_EXTENSIONS: &[&str] = &["jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("cannot read image {path}: {message}")]
    UnreadableImage { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    UnwritableOutput { path: PathBuf, message: String },
    #[error("invalid noise specification: {0}")]
    InvalidSpec(String),
}

/// Gaussian intensity-noise parameters. `delta_sigma` is a standard deviation
/// in grey levels on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta_sigma: f64,
    pub base_seed: u64,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

fn default_clamp() -> bool {
    true
}

impl NoiseSpec {
    pub fn new(delta_sigma: f64, base_seed: u64) -> Result<Self, NoiseError> {
        let spec = Self {
            delta_sigma,
            base_seed,
            clamp: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.delta_sigma >= 0.0) || !self.delta_sigma.is_finite() {
            return Err(NoiseError::InvalidSpec(format!(
                "delta_sigma must be a finite non-negative number, got {}",
                self.delta_sigma
            )));
        }
        Ok(())
    }
}

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    intensities: Vec<u8>,
}

impl GrayImage {
    /// Returns `None` when `intensities.len() != width * height`.
    pub fn new(width: u32, height: u32, intensities: Vec<u8>) -> Option<Self> {
        (intensities.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            intensities,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            intensities: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn intensities(&self) -> &[u8] {
        &self.intensities
    }

    /// Decodes any supported format; colour inputs are reduced to luma.
    pub fn load(path: &Path) -> Result<Self, NoiseError> {
        let img = image::open(path).map_err(|e| NoiseError::UnreadableImage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let luma = img.into_luma8();
        let (width, height) = luma.dimensions();
        Ok(Self {
            width,
            height,
            intensities: luma.into_raw(),
        })
    }

    /// Encodes losslessly; the format follows the path's extension (PNG or
    /// PGM).
    pub fn save(&self, path: &Path) -> Result<(), NoiseError> {
        let buffer = image::GrayImage::from_raw(self.width, self.height, self.intensities.clone())
            .expect("dimensions checked at construction");
        buffer.save(path).map_err(|e| NoiseError::UnwritableOutput {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Stream id for image `ordinal` of noise run `run_index`.
pub fn stream_id(run_index: u64, ordinal: u64) -> u64 {
    (run_index << 32) ^ (ordinal & 0xFFFF_FFFF)
}

/// The zero-mean unit-variance samples behind a perturbation, one per pixel.
pub fn standard_normal_field(base_seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Intensities plus noise, before rounding or clamping. Used for
/// experiments that need the unquantised signal.
pub fn perturb_values(img: &GrayImage, spec: &NoiseSpec, stream: u64) -> Vec<f64> {
    if spec.delta_sigma == 0.0 {
        return img.intensities.iter().map(|&v| f64::from(v)).collect();
    }
    standard_normal_field(spec.base_seed, stream, img.intensities.len())
        .into_iter()
        .zip(&img.intensities)
        .map(|(z, &v)| f64::from(v) + spec.delta_sigma * z)
        .collect()
}

/// Adds `N(0, delta_sigma^2)` to every pixel, rounds half away from zero, and
/// clamps to `[0, 255]`.
///
/// With `clamp` off the rounded value still has to fit in a byte, so it
/// saturates the same way; use [`perturb_values`] for unclamped intensities.
pub fn perturb_image(img: &GrayImage, spec: &NoiseSpec, stream: u64) -> GrayImage {
    if spec.delta_sigma == 0.0 {
        return img.clone();
    }
    let intensities = perturb_values(img, spec, stream)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        intensities,
    }
}

/// Provenance of a perturbed image set, written as [`NOISE_MANIFEST`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub delta_sigma: f64,
    pub base_seed: u64,
    pub run_index: u64,
    pub clamp: bool,
    pub units: String,
    pub source: PathBuf,
    pub images: Vec<String>,
}

impl NoiseManifest {
    /// Reads the manifest in `dir`, if any.
    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(NOISE_MANIFEST)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Image files directly inside `dir`, sorted lexicographically by file name.
/// Hidden files are ignored.
pub fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|entry| entry.path())
        .filter(|path| {
            path.is_file()
                && !path
                    .file_name()
                    .map(|n| n.to_string_lossy().starts_with('.'))
                    .unwrap_or(true)
                && extension_of(path)
                    .map(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
                    .unwrap_or(false)
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Output name for `input`: unchanged unless the source format is lossy, in
/// which case the extension becomes `.png`.
fn output_name(input: &Path) -> PathBuf {
    let name = PathBuf::from(input.file_name().expect("listed files have names"));
    match extension_of(input) {
        Some(ext) if LOSSY_EXTENSIONS.contains(&ext.as_str()) => name.with_extension("png"),
        _ => name,
    }
}

/// Perturbs every image in `dir_in` into `dir_out` and returns how many were
/// written. Image `i` (by filename rank) uses `stream_id(run_index, i)`.
pub fn perturb_image_set(
    dir_in: &Path,
    dir_out: &Path,
    spec: &NoiseSpec,
    run_index: u64,
) -> Result<usize, NoiseError> {
    spec.validate()?;
    let inputs = list_images(dir_in).map_err(|e| NoiseError::UnreadableImage {
        path: dir_in.to_path_buf(),
        message: e.to_string(),
    })?;
    if inputs.is_empty() {
        return Ok(0);
    }
    fs::create_dir_all(dir_out).map_err(|e| NoiseError::UnwritableOutput {
        path: dir_out.to_path_buf(),
        message: e.to_string(),
    })?;
    let names = inputs
        .par_iter()
        .enumerate()
        .map(|(ordinal, input)| {
            let img = GrayImage::load(input)?;
            let noisy = perturb_image(&img, spec, stream_id(run_index, ordinal as u64));
            let name = output_name(input);
            noisy.save(&dir_out.join(&name))?;
            Ok(name.to_string_lossy().into_owned())
        })
        .collect::<Result<Vec<_>, NoiseError>>()?;

    let manifest = NoiseManifest {
        delta_sigma: spec.delta_sigma,
        base_seed: spec.base_seed,
        run_index,
        clamp: spec.clamp,
        units: "grey levels, 0-255 intensity scale".into(),
        source: dir_in.to_path_buf(),
        images: names,
    };
    let manifest_path = dir_out.join(NOISE_MANIFEST);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, body).map_err(|e| NoiseError::UnwritableOutput {
        path: manifest_path,
        message: e.to_string(),
    })?;
    Ok(manifest.images.len())
}
