use std::rc::Rc;

use super::Var;
use crate::Real;

impl<'g, F: Real> Var<'g, F> {
    /// Zero-mean, unit-variance normalization over consecutive runs of
    /// `group` elements (row-major order), using the biased variance.
    ///
    /// With NCHW input and `group = H * W` this is instance normalization;
    /// with `[tokens, dim]` input and `group = dim` it is layer normalization.
    pub fn normalize_groups(self, group: usize, eps: F) -> Var<'g, F> {
        let x = self.value();
        assert!(
            group > 0 && x.len().is_multiple_of(group),
            "group size {group} does not tile {}",
            x.len()
        );
        let xs = x.as_slice().expect("standard layout");
        let n = F::lit(group as f64);
        let mut y = vec![F::zero(); xs.len()];
        let mut inv_std = Vec::with_capacity(xs.len() / group);
        for (src, dst) in xs.chunks_exact(group).zip(y.chunks_exact_mut(group)) {
            let mean = src.iter().copied().sum::<F>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let y = Rc::new(ndarray::ArrayD::from_shape_vec(x.raw_dim(), y).expect("same shape"));
        let y_keep = y.clone();
        self.graph.push((*y).clone(), &[self.id], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let ys = y_keep.as_slice().expect("standard layout");
            let mut gx = vec![F::zero(); gs.len()];
            for (((gc, yc), dst), &inv) in gs
                .chunks_exact(group)
                .zip(ys.chunks_exact(group))
                .zip(gx.chunks_exact_mut(group))
                .zip(&inv_std)
            {
                let mean_g = gc.iter().copied().sum::<F>() / n;
                let mean_gy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<F>() / n;
                for ((d, &gv), &yv) in dst.iter_mut().zip(gc).zip(yc) {
                    *d = inv * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(
                ndarray::ArrayD::from_shape_vec(g.raw_dim(), gx).expect("same shape"),
            )]
        })
    }
}
