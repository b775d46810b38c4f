//! Operations on complex tensors stored with a trailing `(re, im)` axis.

use ndarray::{ArrayD, Axis, IxDyn};
use num_complex::Complex;

use super::ops::sum_to_shape;
use super::Var;
use crate::physics::fft2c_planes;
use crate::Real;

fn fft_interleaved<F: Real>(x: &ArrayD<F>, inverse: bool) -> ArrayD<F> {
    let nd = x.ndim();
    assert!(
        nd >= 3 && x.shape()[nd - 1] == 2,
        "complex tensor must end in [H, W, 2]"
    );
    let (h, w) = (x.shape()[nd - 3], x.shape()[nd - 2]);
    let xs = x.as_slice().expect("standard layout");
    let mut buf: Vec<Complex<F>> = xs.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
    fft2c_planes(&mut buf, h, w, inverse);
    let flat: Vec<F> = buf.iter().flat_map(|c| [c.re, c.im]).collect();
    ArrayD::from_shape_vec(x.raw_dim(), flat).expect("same shape")
}

fn split<F: Real>(a: &ArrayD<F>) -> (ArrayD<F>, ArrayD<F>) {
    let last = Axis(a.ndim() - 1);
    (a.index_axis(last, 0).to_owned(), a.index_axis(last, 1).to_owned())
}

fn join<F: Real>(re: ArrayD<F>, im: ArrayD<F>) -> ArrayD<F> {
    let last = Axis(re.ndim());
    ndarray::stack(last, &[re.view(), im.view()]).expect("matching parts")
}

impl<'g, F: Real> Var<'g, F> {
    /// Centered orthonormal 2D DFT over axes `[-3, -2]` of a `[..., H, W, 2]` tensor.
    pub fn fft2c(self) -> Var<'g, F> {
        let y = fft_interleaved(&self.value(), false);
        self.graph.push(y, &[self.id], |g| vec![Some(fft_interleaved(g, true))])
    }

    pub fn ifft2c(self) -> Var<'g, F> {
        let y = fft_interleaved(&self.value(), true);
        self.graph
            .push(y, &[self.id], |g| vec![Some(fft_interleaved(g, false))])
    }

    /// Broadcasting complex product `a * b`.
    pub fn cmul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.complex_product(other, false)
    }

    /// Broadcasting conjugate product `conj(a) * b`.
    pub fn cmul_conj(self, other: Var<'g, F>) -> Var<'g, F> {
        self.complex_product(other, true)
    }

    fn complex_product(self, other: Var<'g, F>, conj_a: bool) -> Var<'g, F> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        let (ar, ai) = split(&a);
        let (br, bi) = split(&b);
        let (yr, yi) = if conj_a {
            (&ar * &br + &ai * &bi, &ar * &bi - &ai * &br)
        } else {
            (&ar * &br - &ai * &bi, &ar * &bi + &ai * &br)
        };
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        let a_parts = (a.shape()[..a.ndim() - 1].to_vec(), ar, ai);
        let b_parts = (b.shape()[..b.ndim() - 1].to_vec(), br, bi);
        self.graph.push(join(yr, yi), &[self.id, other.id], move |g| {
            let (gr, gi) = split(g);
            let (ashape, ar, ai) = &a_parts;
            let (bshape, br, bi) = &b_parts;
            let ga = need_a.then(|| {
                // conj(a) b: conj(g) b ; a b: g conj(b)
                let (re, im) = if conj_a {
                    (&gr * br + &gi * bi, &gr * bi - &gi * br)
                } else {
                    (&gr * br + &gi * bi, &gi * br - &gr * bi)
                };
                join(sum_to_shape(re, ashape), sum_to_shape(im, ashape))
            });
            let gb = need_b.then(|| {
                // conj(a) b: g a ; a b: g conj(a)
                let (re, im) = if conj_a {
                    (&gr * ar - &gi * ai, &gr * ai + &gi * ar)
                } else {
                    (&gr * ar + &gi * ai, &gi * ar - &gr * ai)
                };
                join(sum_to_shape(re, bshape), sum_to_shape(im, bshape))
            });
            vec![ga, gb]
        })
    }

    /// `|z|^2`, dropping the trailing complex axis.
    pub fn abs2(self) -> Var<'g, F> {
        let x = self.value();
        let (re, im) = split(&x);
        let y = &re * &re + &im * &im;
        self.graph.push(y, &[self.id], move |g| {
            let two = F::lit(2.0);
            let gr = g * &re * two;
            let gi = g * &im * two;
            vec![Some(join(gr, gi))]
        })
    }

    /// Complex magnitude with a zero subgradient at the origin.
    pub fn cabs(self) -> Var<'g, F> {
        self.abs2().sqrt()
    }

    /// Root-sum-of-squares over the coil axis 0 of `[N, H, W, 2]`, giving `[H, W]`.
    pub fn rss(self) -> Var<'g, F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4, "rss expects [coils, H, W, 2]");
        self.abs2().sum_axis(0).reshape(&shape[1..3]).sqrt()
    }

    /// A zero imaginary part appended to a real tensor.
    pub fn to_complex(self) -> Var<'g, F> {
        let x = self.value();
        let y = join(x.as_ref().clone(), ArrayD::zeros(x.raw_dim()));
        self.graph.push(y, &[self.id], |g| {
            let last = Axis(g.ndim() - 1);
            vec![Some(g.index_axis(last, 0).to_owned())]
        })
    }
}

/// Interleave a complex array into a trailing `(re, im)` axis.
pub fn complex_to_real<F: Real, D: ndarray::Dimension>(x: &ndarray::Array<num_complex::Complex64, D>) -> ArrayD<F> {
    let mut shape = x.shape().to_vec();
    shape.push(2);
    let flat: Vec<F> = x.iter().flat_map(|c| [F::lit(c.re), F::lit(c.im)]).collect();
    ArrayD::from_shape_vec(IxDyn(&shape), flat).expect("interleaved shape")
}

/// Inverse of [`complex_to_real`].
pub fn real_to_complex<F: Real>(x: &ArrayD<F>) -> ArrayD<num_complex::Complex64> {
    let nd = x.ndim();
    assert_eq!(x.shape()[nd - 1], 2, "trailing axis must hold (re, im)");
    let shape = &x.shape()[..nd - 1];
    let xs = x.as_standard_layout();
    let flat: Vec<_> = xs
        .as_slice()
        .expect("standard layout")
        .chunks_exact(2)
        .map(|p| num_complex::Complex64::new(p[0].to_f64_lossy(), p[1].to_f64_lossy()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), flat).expect("complex shape")
}
