use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::weights::{ModelWeights, Moments};
use crate::autograd::Gradients;
use crate::Real;

/// Gradients keyed by parameter path, in double precision.
pub type GradMap = BTreeMap<String, ArrayD<f64>>;

/// Adam without weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One update of every non-frozen tensor that has a gradient in `grads`.
    /// Moments live in `weights`; frozen tensors are never touched.
    pub fn step(&self, weights: &mut ModelWeights, grads: &GradMap) {
        weights.step += 1;
        let t = weights.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let paths: Vec<String> = weights.paths().map(str::to_string).collect();
        for path in paths {
            let Some(g) = grads.get(&path) else { continue };
            let param = weights.get(&path).expect("listed path");
            if param.frozen {
                continue;
            }
            assert_eq!(g.shape(), param.value.shape(), "gradient shape for '{path}'");
            let shape = param.value.raw_dim();
            let mo = weights.moments.entry(path.clone()).or_insert_with(|| Moments {
                m: ArrayD::zeros(shape.clone()),
                v: ArrayD::zeros(shape),
            });
            ndarray::Zip::from(&mut mo.m)
                .and(&mut mo.v)
                .and(g)
                .for_each(|m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                });
            let (m, v) = (mo.m.clone(), mo.v.clone());
            let p = weights.get_mut(&path).expect("listed path");
            ndarray::Zip::from(&mut p.value).and(&m).and(&v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}

/// Parameter gradients of a graph converted to double precision.
pub fn grad_map<F: Real>(grads: &Gradients<F>) -> GradMap {
    grads
        .params()
        .map(|(p, g)| (p.to_string(), g.mapv(|v| v.to_f64_lossy())))
        .collect()
}
