//! Central finite-difference gradient checks in double precision.

use ndarray::ArrayD;

use super::{Graph, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input: `||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2)`
    /// over the probed coordinates (zero when both vanish).
    pub relative_errors: Vec<f64>,
    pub probed: usize,
    /// Coordinates whose central differences at `h` and `h / 2` disagree,
    /// i.e. where the probe straddles a kink (ReLU, clipping). They are left
    /// out of the error.
    pub skipped: usize,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn skipped_fraction(&self) -> f64 {
        if self.probed == 0 {
            0.0
        } else {
            self.skipped as f64 / self.probed as f64
        }
    }
}

const KINK_TOL: f64 = 1e-3;
const KINK_FLOOR: f64 = 1e-7;

/// Compares reverse-mode gradients of a scalar function with central
/// differences of step `h`.
///
/// `max_coords` caps the number of coordinates probed per input; when an
/// input is larger, an evenly strided subset is used.
pub fn gradient_check<Fun>(inputs: &[ArrayD<f64>], h: f64, max_coords: usize, f: Fun) -> GradCheck
where
    Fun: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let eval = |xs: &[ArrayD<f64>]| -> f64 {
        let g = Graph::<f64>::inference();
        let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
        f(&g, &vars).item()
    };

    let g = Graph::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = f(&g, &vars);
    let grads = g.backward(loss).expect("scalar loss");

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let (mut probed, mut skipped) = (0, 0);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
        let n = input.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let mut probe = inputs.to_vec();
        for idx in (0..n).step_by(stride) {
            let orig = input.as_slice().expect("standard layout")[idx];
            let mut central = |step: f64| {
                probe[k].as_slice_mut().expect("standard layout")[idx] = orig + step;
                let up = eval(&probe);
                probe[k].as_slice_mut().expect("standard layout")[idx] = orig - step;
                let down = eval(&probe);
                probe[k].as_slice_mut().expect("standard layout")[idx] = orig;
                (up - down) / (2.0 * step)
            };
            let numeric = central(h);
            let half = central(0.5 * h);
            probed += 1;
            if (numeric - half).abs() > KINK_TOL * (numeric.abs() + half.abs()) + KINK_FLOOR {
                skipped += 1;
                continue;
            }
            let a = analytic.as_slice().expect("standard layout")[idx];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        relative_errors.push(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale });
    }
    GradCheck {
        relative_errors,
        probed,
        skipped,
    }
}
