use ndarray::ArrayD;

use super::Var;
use crate::Real;

/// Linear-interpolation percentile of already sorted values, as
/// `(value, lower order index, interpolation fraction)`.
pub fn percentile_sorted<F: Real>(sorted: &[F], pct: f64) -> (F, usize, F) {
    let n = sorted.len();
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (rank.floor() as usize).min(n - 1);
    let frac = rank - i as f64;
    let j = (i + 1).min(n - 1);
    let f = F::lit(frac);
    (sorted[i] + f * (sorted[j] - sorted[i]), i, f)
}

impl<'g, F: Real> Var<'g, F> {
    /// Clip to the `[low, high]` percentiles of the tensor's own values and
    /// rescale that interval to `[0, 1]`.
    ///
    /// Gradients include the dependence of both percentile values on the
    /// input. A degenerate interval (`high == low`) maps values at or above a
    /// positive `high` to one and everything else to zero, with zero gradient.
    pub fn percentile_scale(self, low_pct: f64, high_pct: f64) -> Var<'g, F> {
        let x = self.value();
        let xs = x.as_slice().expect("standard layout").to_vec();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted: Vec<F> = order.iter().map(|&i| xs[i]).collect();
        let (lo, lo_i, lo_f) = percentile_sorted(&sorted, low_pct);
        let (hi, hi_i, hi_f) = percentile_sorted(&sorted, high_pct);
        let span = hi - lo;
        let shape = x.raw_dim();
        if !(span > F::zero()) {
            let y = x.mapv(|v| if hi > F::zero() && v >= hi { F::one() } else { F::zero() });
            return self
                .graph
                .push(y, &[self.id], move |_| vec![Some(ArrayD::zeros(shape.clone()))]);
        }
        let y: Vec<F> = xs.iter().map(|&v| (v.max(lo).min(hi) - lo) / span).collect();
        let y = ArrayD::from_shape_vec(shape.clone(), y).expect("same shape");
        let n = xs.len();
        self.graph.push(y, &[self.id], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let mut gx = vec![F::zero(); n];
            let (mut g_lo, mut g_hi) = (F::zero(), F::zero());
            let span2 = span * span;
            for (j, (&v, &gv)) in xs.iter().zip(gs).enumerate() {
                if v > lo && v < hi {
                    gx[j] += gv / span;
                    g_lo += gv * (v - hi) / span2;
                    g_hi -= gv * (v - lo) / span2;
                }
            }
            let spread = |gx: &mut Vec<F>, grad: F, i: usize, f: F| {
                gx[order[i]] += grad * (F::one() - f);
                if f > F::zero() {
                    gx[order[(i + 1).min(n - 1)]] += grad * f;
                }
            };
            spread(&mut gx, g_lo, lo_i, lo_f);
            spread(&mut gx, g_hi, hi_i, hi_f);
            vec![Some(ArrayD::from_shape_vec(shape.clone(), gx).expect("same shape"))]
        })
    }
}
