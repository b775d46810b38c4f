use std::ops::Range;
use std::rc::Rc;

use ndarray::{linalg::general_mat_mul, Array2, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn, Slice};

use super::Var;
use crate::Real;

/// Reduce a broadcast gradient back to `shape` by summing expanded axes.
pub(crate) fn sum_to_shape<F: Real>(mut g: ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    if g.shape() == shape {
        return g;
    }
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn view2<F: Real>(a: &ArrayD<F>) -> ArrayView2<'_, F> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

pub(crate) fn matmul2<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(F::one(), &a, &b, F::zero(), &mut out);
    out
}

impl<'g, F: Real> Var<'g, F> {
    fn unary(self, f: impl Fn(F) -> F, df: impl Fn(F, F) -> F + 'static) -> Var<'g, F> {
        let x = self.value();
        let y = Rc::new(x.mapv(&f));
        let y_keep = y.clone();
        self.graph.push((*y).clone(), &[self.id], move |g| {
            let mut gx = g.clone();
            ndarray::Zip::from(&mut gx)
                .and(&*x)
                .and(&*y_keep)
                .for_each(|gx, &x, &y| *gx *= df(x, y));
            vec![Some(gx)]
        })
    }

    pub fn neg(self) -> Var<'g, F> {
        self.unary(|x| -x, |_, _| -F::one())
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: F) -> Var<'g, F> {
        self.unary(move |x| x + c, |_, _| F::one())
    }

    pub fn square(self) -> Var<'g, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Square root with a zero subgradient at the origin.
    pub fn sqrt(self) -> Var<'g, F> {
        self.unary(
            |x| x.sqrt(),
            |_, y| if y > F::zero() { F::one() / (y + y) } else { F::zero() },
        )
    }

    pub fn exp(self) -> Var<'g, F> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn relu(self) -> Var<'g, F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(self, slope: F) -> Var<'g, F> {
        self.unary(
            move |x| if x > F::zero() { x } else { x * slope },
            move |x, _| if x > F::zero() { F::one() } else { slope },
        )
    }

    /// Exact (erf) GELU.
    pub fn gelu(self) -> Var<'g, F> {
        let half = F::lit(0.5);
        let inv_sqrt2 = F::lit(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = F::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        self.unary(
            move |x| half * x * (F::one() + (x * inv_sqrt2).erf()),
            move |x, _| half * (F::one() + (x * inv_sqrt2).erf()) + x * inv_sqrt_2pi * (-half * x * x).exp(),
        )
    }

    fn binary(
        self,
        other: Var<'g, F>,
        f: impl Fn(&ArrayD<F>, &ArrayD<F>) -> ArrayD<F>,
        back: impl Fn(&ArrayD<F>, &ArrayD<F>, &ArrayD<F>) -> (ArrayD<F>, ArrayD<F>) + 'static,
    ) -> Var<'g, F> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        let y = f(&a, &b);
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        self.graph.push(y, &[self.id, other.id], move |g| {
            let (ga, gb) = back(g, &a, &b);
            vec![
                need_a.then(|| sum_to_shape(ga, a.shape())),
                need_b.then(|| sum_to_shape(gb, b.shape())),
            ]
        })
    }

    /// Broadcasting addition.
    pub fn add(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, |a, b| a + b, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, |a, b| a - b, |g, _, _| (g.clone(), g.mapv(|v| -v)))
    }

    pub fn mul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(
            other,
            |a, b| a / b,
            |g, a, b| {
                let ga = g / b;
                let gb = -(&ga * a) / b;
                (ga, gb)
            },
        )
    }

    /// Broadcasting product with a constant tensor.
    pub fn mul_const(self, c: ArrayD<F>) -> Var<'g, F> {
        let c = self.graph.constant(c);
        self.mul(c)
    }

    pub fn add_const(self, c: ArrayD<F>) -> Var<'g, F> {
        let c = self.graph.constant(c);
        self.add(c)
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(self) -> Var<'g, F> {
        let x = self.value();
        let shape = x.raw_dim();
        let total = x.sum();
        self.graph
            .push(ArrayD::from_elem(IxDyn(&[]), total), &[self.id], move |g| {
                let gv = *g.iter().next().expect("scalar");
                vec![Some(ArrayD::from_elem(shape.clone(), gv))]
            })
    }

    pub fn mean(self) -> Var<'g, F> {
        let n = F::lit(self.value().len() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Sum over `axis`, keeping it with length one.
    pub fn sum_axis(self, axis: usize) -> Var<'g, F> {
        let x = self.value();
        let shape = x.raw_dim();
        let y = x.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.graph.push(y, &[self.id], move |g| {
            vec![Some(g.broadcast(shape.clone()).expect("keepdim broadcast").to_owned())]
        })
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g, F> {
        let n = F::lit(self.shape()[axis] as f64);
        self.sum_axis(axis).scale(F::one() / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let orig = x.shape().to_vec();
        let y = x
            .as_ref()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {:?} -> {:?}: {e}", orig, shape));
        self.graph.push(y, &[self.id], move |g| {
            vec![Some(
                g.clone().into_shape_with_order(IxDyn(&orig)).expect("inverse reshape"),
            )]
        })
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let y = x.view().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.graph.push(y, &[self.id], move |g| {
            vec![Some(
                g.view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .into_owned(),
            )]
        })
    }

    /// Contiguous sub-range along one axis.
    pub fn slice_axis(self, axis: usize, range: Range<usize>) -> Var<'g, F> {
        let x = self.value();
        let shape = x.raw_dim();
        let y = x.slice_axis(Axis(axis), Slice::from(range.clone())).to_owned();
        self.graph.push(y, &[self.id], move |g| {
            let mut gx = ArrayD::zeros(shape.clone());
            gx.slice_axis_mut(Axis(axis), Slice::from(range.clone())).assign(g);
            vec![Some(gx)]
        })
    }

    /// Selects `index` along `axis` and drops the axis.
    pub fn select(self, axis: usize, index: usize) -> Var<'g, F> {
        let mut shape = self.shape();
        shape.remove(axis);
        self.slice_axis(axis, index..index + 1).reshape(&shape)
    }

    /// Matrix product of rank-2 tensors.
    pub fn matmul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        let y = matmul2(view2(&a), view2(&b)).into_dyn();
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        self.graph.push(y, &[self.id, other.id], move |g| {
            let g2 = view2(g);
            vec![
                need_a.then(|| matmul2(g2, view2(&b).t()).into_dyn()),
                need_b.then(|| matmul2(view2(&a).t(), g2).into_dyn()),
            ]
        })
    }

    /// Batched product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(self, other: Var<'g, F>) -> Var<'g, F> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        let a3 = a.view().into_dimensionality::<Ix3>().expect("rank-3 lhs");
        let b3 = b.view().into_dimensionality::<Ix3>().expect("rank-3 rhs");
        let (batch, m, _) = a3.dim();
        let n = b3.dim().2;
        assert_eq!(batch, b3.dim().0, "bmm batch mismatch");
        let mut y = ndarray::Array3::zeros((batch, m, n));
        for i in 0..batch {
            general_mat_mul(
                F::one(),
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                F::zero(),
                &mut y.index_axis_mut(Axis(0), i),
            );
        }
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        self.graph.push(y.into_dyn(), &[self.id, other.id], move |g| {
            let g3 = g.view().into_dimensionality::<Ix3>().expect("rank-3 grad");
            let a3 = a.view().into_dimensionality::<Ix3>().expect("rank-3 lhs");
            let b3 = b.view().into_dimensionality::<Ix3>().expect("rank-3 rhs");
            let ga = need_a.then(|| {
                let mut ga = ndarray::Array3::zeros(a3.raw_dim());
                for i in 0..batch {
                    general_mat_mul(
                        F::one(),
                        &g3.index_axis(Axis(0), i),
                        &b3.index_axis(Axis(0), i).t(),
                        F::zero(),
                        &mut ga.index_axis_mut(Axis(0), i),
                    );
                }
                ga.into_dyn()
            });
            let gb = need_b.then(|| {
                let mut gb = ndarray::Array3::zeros(b3.raw_dim());
                for i in 0..batch {
                    general_mat_mul(
                        F::one(),
                        &a3.index_axis(Axis(0), i).t(),
                        &g3.index_axis(Axis(0), i),
                        F::zero(),
                        &mut gb.index_axis_mut(Axis(0), i),
                    );
                }
                gb.into_dyn()
            });
            vec![ga, gb]
        })
    }

    /// Swap the last two axes.
    pub fn transpose_last(self) -> Var<'g, F> {
        let n = self.shape().len();
        assert!(n >= 2, "transpose needs rank >= 2");
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g, F> {
        let x = self.value();
        let mut y = x.as_ref().clone();
        let last = Axis(y.ndim() - 1);
        for mut lane in y.lanes_mut(last) {
            let max = lane.iter().copied().fold(F::neg_infinity(), F::max);
            lane.mapv_inplace(|v| (v - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|v| v / total);
        }
        let y = Rc::new(y);
        let y_keep = y.clone();
        self.graph.push((*y).clone(), &[self.id], move |g| {
            let mut gx = g * &*y_keep;
            for (mut gl, yl) in gx.lanes_mut(last).into_iter().zip(y_keep.lanes(last)) {
                let dot = gl.sum();
                ndarray::Zip::from(&mut gl).and(&yl).for_each(|gv, &yv| *gv -= yv * dot);
            }
            vec![Some(gx)]
        })
    }

    /// Affine map over the last axis: `x W^T + b` with `W: [out, in]`.
    pub fn linear(self, weight: Var<'g, F>, bias: Option<Var<'g, F>>) -> Var<'g, F> {
        let shape = self.shape();
        let din = *shape.last().expect("linear input rank >= 1");
        let rows = shape.iter().product::<usize>() / din;
        let dout = weight.shape()[0];
        let x2 = self.reshape(&[rows, din]);
        let wt = weight.permute(&[1, 0]);
        let mut y = x2.matmul(wt);
        if let Some(b) = bias {
            y = y.add(b);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("nonempty") = dout;
        y.reshape(&out_shape)
    }
}

/// Concatenate along `axis`.
pub fn concat<'g, F: Real>(vars: &[Var<'g, F>], axis: usize) -> Var<'g, F> {
    assert!(!vars.is_empty(), "concat of nothing");
    let graph = vars[0].graph;
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = ndarray::concatenate(Axis(axis), &views).expect("concat shapes agree");
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    graph.push(y, &ids, move |g| {
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let part = g.slice_axis(Axis(axis), Slice::from(start..start + n)).to_owned();
                start += n;
                Some(part)
            })
            .collect()
    })
}
