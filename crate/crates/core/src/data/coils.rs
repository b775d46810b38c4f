use ndarray::Array3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::physics::{expand, fft2c_coils, ComplexImage, MultiCoilKSpace, SensitivityMaps};
use crate::{Error, Result};

const LOBE_WIDTH: f64 = 0.9;
const LOBE_RADIUS: f64 = 1.25;
const PHASE_RAMP: f64 = 0.6;

/// `n` Gaussian-lobe receive profiles centered on a ring outside the field
/// of view, each with its own linear phase ramp, RSS-normalized per pixel.
pub fn simulate_coils(n: usize, height: usize, width: usize) -> Result<SensitivityMaps> {
    if n == 0 {
        return Err(Error::config("at least one coil is required"));
    }
    let raw = Array3::from_shape_fn((n, height, width), |(i, r, c)| {
        let x = (c as f64 + 0.5) / width as f64 * 2.0 - 1.0;
        let y = (r as f64 + 0.5) / height as f64 * 2.0 - 1.0;
        let angle = std::f64::consts::TAU * i as f64 / n as f64 + 0.25;
        let (s, co) = angle.sin_cos();
        let (cx, cy) = (LOBE_RADIUS * co, LOBE_RADIUS * s);
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        let mag = (-d2 / (2.0 * LOBE_WIDTH * LOBE_WIDTH)).exp();
        let phase = PHASE_RAMP * (x * co + y * s) + 0.4 * i as f64;
        Complex64::from_polar(mag, phase)
    });
    SensitivityMaps::normalize(raw)
}

/// Coil k-space `F(S_i x) + z_i` with circular complex Gaussian noise of
/// total variance `noise_std^2` per sample.
pub fn synthesize_kspace(
    image: &ComplexImage,
    sens: &SensitivityMaps,
    noise_std: f64,
    seed: u64,
) -> Result<MultiCoilKSpace> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config(format!(
            "noise std must be finite and nonnegative, got {noise_std}"
        )));
    }
    let clean = fft2c_coils(&expand(image, sens)?);
    if noise_std == 0.0 {
        return Ok(clean);
    }
    let normal = Normal::new(0.0, noise_std / std::f64::consts::SQRT_2).expect("valid deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = clean.into_data();
    for v in data.iter_mut() {
        *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
    MultiCoilKSpace::new(data)
}
