use ndarray::{linalg::general_mat_mul, Array2, ArrayD, Axis, IxDyn};

use super::Var;
use crate::Real;

/// Interpolation matrix `[out, in]` for 1D bilinear resampling with
/// half-pixel centers (align-corners off). Equal sizes give the identity.
pub fn bilinear_matrix<F: Real>(input: usize, output: usize) -> Array2<F> {
    let mut m = Array2::zeros((output, input));
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[(o, i0)] += F::lit(1.0 - frac);
        m[(o, i1)] += F::lit(frac);
    }
    m
}

/// 2x average pooling matrix `[in / 2, in]`; `input` must be even.
pub fn avg_pool_matrix<F: Real>(input: usize) -> Array2<F> {
    assert!(
        input.is_multiple_of(2),
        "average pooling needs an even extent, got {input}"
    );
    let mut m = Array2::zeros((input / 2, input));
    for o in 0..input / 2 {
        m[(o, 2 * o)] = F::lit(0.5);
        m[(o, 2 * o + 1)] = F::lit(0.5);
    }
    m
}

/// Uniform `window`-tap moving average over valid positions, `[in - window + 1, in]`.
pub fn box_valid_matrix<F: Real>(input: usize, window: usize) -> Array2<F> {
    assert!(window >= 1 && window <= input, "window {window} vs extent {input}");
    let out = input - window + 1;
    let mut m = Array2::zeros((out, input));
    let w = F::lit(1.0 / window as f64);
    for o in 0..out {
        for k in 0..window {
            m[(o, o + k)] = w;
        }
    }
    m
}

fn apply_planes<F: Real>(x: &ArrayD<F>, rows: &Array2<F>, cols_t: &Array2<F>, out_h: usize, out_w: usize) -> ArrayD<F> {
    let nd = x.ndim();
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let planes = x.len() / (h * w);
    let x3 = x.view().into_shape_with_order((planes, h, w)).expect("plane view");
    let mut out_shape = x.shape().to_vec();
    out_shape[nd - 2] = out_h;
    out_shape[nd - 1] = out_w;
    let mut y = ndarray::Array3::<F>::zeros((planes, out_h, out_w));
    let mut tmp = Array2::<F>::zeros((out_h, w));
    for (xp, mut yp) in x3.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
        general_mat_mul(F::one(), rows, &xp, F::zero(), &mut tmp);
        general_mat_mul(F::one(), &tmp, cols_t, F::zero(), &mut yp);
    }
    y.into_shape_with_order(IxDyn(&out_shape)).expect("output shape")
}

impl<'g, F: Real> Var<'g, F> {
    /// Applies `rows · X · colsᵀ` to every trailing H×W plane.
    pub fn separable(self, rows: Array2<F>, cols: Array2<F>) -> Var<'g, F> {
        let x = self.value();
        let nd = x.ndim();
        assert!(nd >= 2, "separable map needs rank >= 2");
        assert_eq!(rows.ncols(), x.shape()[nd - 2], "row operator width");
        assert_eq!(cols.ncols(), x.shape()[nd - 1], "column operator width");
        let (oh, ow) = (rows.nrows(), cols.nrows());
        let cols_t = cols.t().to_owned();
        let y = apply_planes(&x, &rows, &cols_t, oh, ow);
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let rows_t = rows.t().to_owned();
        self.graph.push(y, &[self.id], move |g| {
            vec![Some(apply_planes(g, &rows_t, &cols, h, w))]
        })
    }

    /// Bilinear resize of the trailing two axes.
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'g, F> {
        let shape = self.shape();
        let nd = shape.len();
        let (h, w) = (shape[nd - 2], shape[nd - 1]);
        if (h, w) == (out_h, out_w) {
            return self;
        }
        self.separable(bilinear_matrix(h, out_h), bilinear_matrix(w, out_w))
    }

    /// 2x2 average pooling of the trailing two axes.
    pub fn avg_pool2(self) -> Var<'g, F> {
        let shape = self.shape();
        let nd = shape.len();
        self.separable(avg_pool_matrix(shape[nd - 2]), avg_pool_matrix(shape[nd - 1]))
    }
}
