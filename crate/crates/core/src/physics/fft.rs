use std::any::Any;
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{ComplexImage, MultiCoilKSpace};
use crate::Real;

struct Plans<F: Real> {
    rows: Arc<dyn Fft<F>>,
    cols: Arc<dyn Fft<F>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<(std::any::TypeId, usize, usize, bool), Box<dyn Any>>> =
        RefCell::new(HashMap::new());
}

fn with_plans<F: Real, R>(h: usize, w: usize, inverse: bool, f: impl FnOnce(&Plans<F>) -> R) -> R {
    let key = (std::any::TypeId::of::<F>(), h, w, inverse);
    let plans = PLANS.with(|cache| {
        let mut cache = cache.borrow_mut();
        cache
            .entry(key)
            .or_insert_with(|| {
                let mut planner = FftPlanner::<F>::new();
                let (rows, cols) = if inverse {
                    (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
                } else {
                    (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
                };
                Box::new(Arc::new(Plans { rows, cols }))
            })
            .downcast_ref::<Arc<Plans<F>>>()
            .expect("plan cache keyed by element type")
            .clone()
    });
    f(&plans)
}

/// Centered orthonormal 2D DFT over every contiguous H×W plane of `data`.
///
/// Equivalent to `fftshift(fft2(ifftshift(x))) / sqrt(H W)`; `inverse` selects
/// the conjugate transform. `data.len()` must be a multiple of `h * w`.
pub fn fft2c_planes<F: Real>(data: &mut [Complex<F>], h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    assert!(
        plane > 0 && data.len().is_multiple_of(plane),
        "buffer is not a whole number of planes"
    );
    let scale = F::one() / F::lit((plane as f64).sqrt());
    let (sh, sw) = (h / 2, w / 2);
    with_plans::<F, _>(h, w, inverse, |plans| {
        let mut tmp = vec![Complex::<F>::default(); plane];
        let mut col = vec![Complex::<F>::default(); h];
        let mut scratch = vec![
            Complex::<F>::default();
            plans
                .rows
                .get_inplace_scratch_len()
                .max(plans.cols.get_inplace_scratch_len())
        ];
        for chunk in data.chunks_exact_mut(plane) {
            // ifftshift
            for r in 0..h {
                let src_r = (r + sh) % h;
                for c in 0..w {
                    tmp[r * w + c] = chunk[src_r * w + (c + sw) % w];
                }
            }
            for row in tmp.chunks_exact_mut(w) {
                plans.rows.process_with_scratch(row, &mut scratch);
            }
            for c in 0..w {
                for r in 0..h {
                    col[r] = tmp[r * w + c];
                }
                plans.cols.process_with_scratch(&mut col, &mut scratch);
                for r in 0..h {
                    tmp[r * w + c] = col[r];
                }
            }
            // fftshift
            for r in 0..h {
                let src_r = (r + h - sh) % h;
                for c in 0..w {
                    chunk[r * w + c] = tmp[src_r * w + (c + w - sw) % w] * scale;
                }
            }
        }
    });
}

fn transform2(x: &Array2<Complex<f64>>, inverse: bool) -> Array2<Complex<f64>> {
    let (h, w) = x.dim();
    let mut buf: Vec<Complex<f64>> = x.iter().copied().collect();
    fft2c_planes(&mut buf, h, w, inverse);
    Array2::from_shape_vec((h, w), buf).expect("shape preserved")
}

fn transform3(x: &Array3<Complex<f64>>, inverse: bool) -> Array3<Complex<f64>> {
    let (n, h, w) = x.dim();
    let mut buf: Vec<Complex<f64>> = x.iter().copied().collect();
    fft2c_planes(&mut buf, h, w, inverse);
    Array3::from_shape_vec((n, h, w), buf).expect("shape preserved")
}

/// Centered orthonormal forward transform, image → k-space.
pub fn fft2c(image: &ComplexImage) -> ComplexImage {
    ComplexImage::from_trusted(transform2(image.data(), false))
}

/// Centered orthonormal inverse transform, k-space → image.
pub fn ifft2c(kspace: &ComplexImage) -> ComplexImage {
    ComplexImage::from_trusted(transform2(kspace.data(), true))
}

/// Per-coil [`fft2c`].
pub fn fft2c_coils(x: &MultiCoilKSpace) -> MultiCoilKSpace {
    MultiCoilKSpace::from_trusted(transform3(x.data(), false))
}

/// Per-coil [`ifft2c`].
pub fn ifft2c_coils(x: &MultiCoilKSpace) -> MultiCoilKSpace {
    MultiCoilKSpace::from_trusted(transform3(x.data(), true))
}
