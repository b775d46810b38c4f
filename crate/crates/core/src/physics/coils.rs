use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;

use super::{apply_mask, fft2c_coils, ifft2c_coils, CoilImages, ComplexImage, MultiCoilKSpace, SamplingMask};
use crate::{Error, Result};

/// Pixels whose raw root-sum-of-squares falls at or below this value are
/// outside the map support and get all-zero sensitivities.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Coil sensitivity maps normalized so that `sum_i |S_i(p)|^2 = 1` on the support.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    data: Array3<Complex64>,
    support: Array2<bool>,
}

impl SensitivityMaps {
    /// Pixelwise RSS normalization of raw (unnormalized) coil profiles.
    pub fn normalize(raw: Array3<Complex64>) -> Result<Self> {
        let (n, h, w) = raw.dim();
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "sensitivity maps need at least one coil and a nonempty grid",
            ));
        }
        if raw.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidData("non-finite raw sensitivity".into()));
        }
        let norm = raw.map_axis(Axis(0), |lane| lane.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
        let support = norm.mapv(|r| r > SUPPORT_THRESHOLD);
        let mut data = raw;
        for mut coil in data.outer_iter_mut() {
            Zip::from(&mut coil).and(&norm).for_each(|s, &r| {
                *s = if r > SUPPORT_THRESHOLD {
                    *s / r
                } else {
                    Complex64::new(0.0, 0.0)
                };
            });
        }
        Ok(Self { data, support })
    }

    /// Wraps maps that are already normalized; `support` marks the pixels
    /// where the normalization holds.
    pub(crate) fn from_normalized(data: Array3<Complex64>, support: Array2<bool>) -> Self {
        Self { data, support }
    }

    pub fn coils(&self) -> usize {
        self.data.dim().0
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn support(&self) -> &Array2<bool> {
        &self.support
    }

    /// Largest deviation of `sum_i |S_i|^2` from one over the support.
    pub fn normalization_error(&self) -> f64 {
        let energy = self
            .data
            .map_axis(Axis(0), |lane| lane.iter().map(|v| v.norm_sqr()).sum::<f64>());
        Zip::from(&energy).and(&self.support).fold(
            0.0f64,
            |acc, &e, &s| if s { acc.max((e - 1.0).abs()) } else { acc.max(e) },
        )
    }
}

fn check_grid(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!(
            "{what}: grid {}x{} does not match sensitivity grid {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// `E(x) = (S_1 x, ..., S_N x)`.
pub fn expand(image: &ComplexImage, sens: &SensitivityMaps) -> Result<CoilImages> {
    let (n, h, w) = sens.dim();
    check_grid("expand", (image.height(), image.width()), (h, w))?;
    let mut out = Array3::zeros((n, h, w));
    for (mut dst, s) in out.outer_iter_mut().zip(sens.data().outer_iter()) {
        Zip::from(&mut dst)
            .and(&s)
            .and(image.data())
            .for_each(|d, &s, &x| *d = s * x);
    }
    Ok(MultiCoilKSpace::from_trusted(out))
}

/// `R(x_1, ..., x_N) = sum_i conj(S_i) x_i`.
pub fn reduce(coil_images: &CoilImages, sens: &SensitivityMaps) -> Result<ComplexImage> {
    if coil_images.dim() != sens.dim() {
        return Err(Error::shape(format!(
            "reduce: coil images {:?} vs sensitivities {:?}",
            coil_images.dim(),
            sens.dim()
        )));
    }
    let (_, h, w) = sens.dim();
    let mut out = Array2::<Complex64>::zeros((h, w));
    for (x, s) in coil_images.data().outer_iter().zip(sens.data().outer_iter()) {
        Zip::from(&mut out)
            .and(&x)
            .and(&s)
            .for_each(|o, &x, &s| *o += s.conj() * x);
    }
    Ok(ComplexImage::from_trusted(out))
}

/// The undersampled multi-coil acquisition `A(x) = M F E(x)`.
pub fn forward_operator(image: &ComplexImage, sens: &SensitivityMaps, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    let coils = expand(image, sens)?;
    apply_mask(&fft2c_coils(&coils), mask)
}

/// The adjoint `A^H(k) = R F^-1 M k`.
pub fn adjoint_operator(kspace: &MultiCoilKSpace, sens: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    let masked = apply_mask(kspace, mask)?;
    reduce(&ifft2c_coils(&masked), sens)
}

/// Pixelwise root-sum-of-squares coil combination.
pub fn rss(coil_images: &CoilImages) -> Array2<f64> {
    coil_images
        .data()
        .map_axis(Axis(0), |lane| lane.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
}
