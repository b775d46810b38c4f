//! Complex-valued Fourier operators, Cartesian undersampling and the
//! multi-coil acquisition model `k_i = M F(S_i x) (+ noise)`.

mod coils;
mod fft;
mod mask;

pub use coils::{adjoint_operator, expand, forward_operator, reduce, rss, SensitivityMaps, SUPPORT_THRESHOLD};
pub use fft::{fft2c, fft2c_coils, fft2c_planes, ifft2c, ifft2c_coils};
pub use mask::{apply_mask, make_equispaced_mask, AcsSpec, SamplingMask};

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::{Error, Result};

pub use num_complex::Complex64 as C64;

/// An H×W complex image slice (or a single-coil k-space plane).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    data: Array2<Complex64>,
}

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::shape("complex image must have nonzero height and width"));
        }
        if let Some(pos) = data.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite sample at flat index {pos} of {h}x{w} image"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub(crate) fn from_trusted(data: Array2<Complex64>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// N×H×W complex samples, one plane per receiver coil.
///
/// The same container holds per-coil images; see [`CoilImages`].
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilKSpace {
    data: Array3<Complex64>,
}

/// Per-coil image-domain data shares the k-space container layout.
pub type CoilImages = MultiCoilKSpace;

impl MultiCoilKSpace {
    pub fn new(data: Array3<Complex64>) -> Result<Self> {
        let (n, h, w) = data.dim();
        if n == 0 {
            return Err(Error::shape("at least one coil is required"));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("k-space must have nonzero height and width"));
        }
        if let Some(pos) = data.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite k-space sample at flat index {pos}"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((coils, height, width)),
        }
    }

    pub(crate) fn from_trusted(data: Array3<Complex64>) -> Self {
        Self { data }
    }

    pub fn coils(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    pub fn coil(&self, i: usize) -> ComplexImage {
        ComplexImage::from_trusted(self.data.index_axis(ndarray::Axis(0), i).to_owned())
    }
}
