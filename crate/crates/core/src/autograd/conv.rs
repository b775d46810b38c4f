use ndarray::{linalg::general_mat_mul, Array2, ArrayD, ArrayView3, ArrayViewMut3, Axis, Ix4, IxDyn};

use super::Var;
use crate::Real;

/// Geometry of a 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn same3x3() -> Self {
        Self {
            stride: 1,
            padding: 1,
            groups: 1,
        }
    }

    pub fn depthwise3x3(channels: usize) -> Self {
        Self {
            stride: 1,
            padding: 1,
            groups: channels,
        }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.padding - kernel) / self.stride + 1
    }
}

struct Geometry {
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox * stride + kj - pad` is inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = (self.w + self.pad)
            .saturating_sub(kj)
            .div_ceil(self.stride)
            .min(self.wo);
        (lo, hi.max(lo))
    }

    fn im2col<F: Real>(&self, x: ArrayView3<'_, F>) -> Array2<F> {
        let mut cols = Array2::zeros((self.cg * self.kh * self.kw, self.ho * self.wo));
        let xs = x.as_slice().expect("contiguous input plane");
        let plane = self.h * self.w;
        for c in 0..self.cg {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let (lo, hi) = self.valid_cols(kj);
                    let mut dst = cols.row_mut(row);
                    let dst = dst.as_slice_mut().expect("contiguous row");
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            continue;
                        }
                        let src = &xs[c * plane + iy as usize * self.w..][..self.w];
                        let out = &mut dst[oy * self.wo + lo..oy * self.wo + hi];
                        let first = lo * self.stride + kj - self.pad;
                        if self.stride == 1 {
                            out.copy_from_slice(&src[first..first + out.len()]);
                        } else {
                            for (o, &v) in out.iter_mut().zip(src[first..].iter().step_by(self.stride)) {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Real>(&self, cols: &Array2<F>, mut gx: ArrayViewMut3<'_, F>) {
        let gs = gx.as_slice_mut().expect("contiguous grad plane");
        let plane = self.h * self.w;
        for c in 0..self.cg {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let (lo, hi) = self.valid_cols(kj);
                    let src = cols.row(row);
                    let src = src.as_slice().expect("contiguous row");
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            continue;
                        }
                        let dst = &mut gs[c * plane + iy as usize * self.w..][..self.w];
                        let vals = &src[oy * self.wo + lo..oy * self.wo + hi];
                        let first = lo * self.stride + kj - self.pad;
                        if self.stride == 1 {
                            for (d, &v) in dst[first..first + vals.len()].iter_mut().zip(vals) {
                                *d += v;
                            }
                        } else {
                            for (d, &v) in dst[first..].iter_mut().step_by(self.stride).zip(vals) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'g, F: Real> Var<'g, F> {
    /// Grouped 2D cross-correlation of an NCHW input with an
    /// `[C_out, C_in / groups, kh, kw]` kernel and optional `[C_out]` bias.
    pub fn conv2d(self, weight: Var<'g, F>, bias: Option<Var<'g, F>>, spec: Conv2dSpec) -> Var<'g, F> {
        self.same_graph(weight);
        let x = self.value();
        let wt = weight.value();
        let x4 = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d input must be NCHW");
        let w4 = wt
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d kernel must be rank 4");
        let (n, cin, h, w) = x4.dim();
        let (cout, cg, kh, kw) = w4.dim();
        let groups = spec.groups;
        assert!(
            groups >= 1 && cin % groups == 0 && cout % groups == 0,
            "bad group count"
        );
        assert_eq!(cg, cin / groups, "kernel input channels {cg} vs input {cin}/{groups}");
        assert!(
            h + 2 * spec.padding >= kh && w + 2 * spec.padding >= kw,
            "kernel larger than padded input"
        );
        let geo = Geometry {
            cg,
            h,
            w,
            kh,
            kw,
            ho: spec.output_size(h, kh),
            wo: spec.output_size(w, kw),
            stride: spec.stride,
            pad: spec.padding,
        };
        let coutg = cout / groups;
        let wmat = wt
            .as_ref()
            .clone()
            .into_shape_with_order((cout, cg * kh * kw))
            .expect("kernel reshape");
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let mut cached = Vec::new();
        let mut y = ndarray::Array4::<F>::zeros((n, cout, geo.ho, geo.wo));
        for ni in 0..n {
            for gi in 0..groups {
                let xin = x4.index_axis(Axis(0), ni);
                let xin = xin.slice_axis(Axis(0), (gi * cg..(gi + 1) * cg).into());
                let wg = wmat.slice_axis(Axis(0), (gi * coutg..(gi + 1) * coutg).into());
                let mut yo = y.index_axis_mut(Axis(0), ni);
                let yo = yo.slice_axis_mut(Axis(0), (gi * coutg..(gi + 1) * coutg).into());
                let mut yo = yo.into_shape_with_order((coutg, geo.ho * geo.wo)).expect("output view");
                if geo.is_pointwise() {
                    let xm = xin.into_shape_with_order((cg, h * w)).expect("pointwise view");
                    general_mat_mul(F::one(), &wg, &xm, F::zero(), &mut yo);
                } else {
                    let cols = geo.im2col(xin);
                    general_mat_mul(F::one(), &wg, &cols, F::zero(), &mut yo);
                    if need_w {
                        cached.push(cols);
                    }
                }
            }
        }
        if let Some(b) = &bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[cout], "bias must be [C_out]");
            for mut plane in y.axis_iter_mut(Axis(0)) {
                for (mut ch, &bc) in plane.axis_iter_mut(Axis(0)).zip(bv.iter()) {
                    ch.mapv_inplace(|v| v + bc);
                }
            }
        }
        let need_b = bias.map(|b| b.requires_grad()).unwrap_or(false);
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        let has_bias = bias.is_some();
        self.graph.push(y.into_dyn(), &parents, move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().expect("NCHW grad");
            let x4 = x.view().into_dimensionality::<Ix4>().expect("NCHW input");
            let mut gx = need_x.then(|| ndarray::Array4::<F>::zeros((n, cin, h, w)));
            let mut gw = need_w.then(|| Array2::<F>::zeros((cout, cg * kh * kw)));
            for ni in 0..n {
                for gi in 0..groups {
                    let go = g4.index_axis(Axis(0), ni);
                    let go = go.slice_axis(Axis(0), (gi * coutg..(gi + 1) * coutg).into());
                    let go = go.into_shape_with_order((coutg, geo.ho * geo.wo)).expect("grad view");
                    let wg = wmat.slice_axis(Axis(0), (gi * coutg..(gi + 1) * coutg).into());
                    let xin = x4.index_axis(Axis(0), ni);
                    let xin = xin.slice_axis(Axis(0), (gi * cg..(gi + 1) * cg).into());
                    if let Some(gw) = gw.as_mut() {
                        let mut gwg = gw.slice_axis_mut(Axis(0), (gi * coutg..(gi + 1) * coutg).into());
                        if geo.is_pointwise() {
                            let xm = xin.into_shape_with_order((cg, h * w)).expect("pointwise view");
                            general_mat_mul(F::one(), &go, &xm.t(), F::one(), &mut gwg);
                        } else {
                            let cols = &cached[ni * groups + gi];
                            general_mat_mul(F::one(), &go, &cols.t(), F::one(), &mut gwg);
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut gxn = gx.index_axis_mut(Axis(0), ni);
                        let gxg = gxn.slice_axis_mut(Axis(0), (gi * cg..(gi + 1) * cg).into());
                        if geo.is_pointwise() {
                            let mut gm = gxg.into_shape_with_order((cg, h * w)).expect("pointwise grad view");
                            general_mat_mul(F::one(), &wg.t(), &go, F::one(), &mut gm);
                        } else {
                            let gcols = super::ops::matmul2(wg.t(), go);
                            geo.col2im(&gcols, gxg);
                        }
                    }
                }
            }
            let mut out = vec![
                gx.map(|a| a.into_dyn()),
                gw.map(|a| {
                    a.into_shape_with_order(IxDyn(&[cout, cg, kh, kw]))
                        .expect("kernel grad shape")
                }),
            ];
            if has_bias {
                out.push(need_b.then(|| {
                    let mut gb = ArrayD::<F>::zeros(IxDyn(&[cout]));
                    for plane in g4.axis_iter(Axis(0)) {
                        for (gbc, ch) in gb.iter_mut().zip(plane.axis_iter(Axis(0))) {
                            *gbc += ch.sum();
                        }
                    }
                    gb
                }));
            }
            out
        })
    }
}
