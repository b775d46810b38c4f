//! Parameter initializers and forward helpers for common layers.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelWeights;
use crate::autograd::{Conv2dSpec, Graph, Var};
use crate::{Real, Result};

pub const NORM_EPS: f64 = 1e-5;

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..=bound))
}

/// Normal samples with `std`, redrawn outside two standard deviations.
pub fn truncated_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Uniform `±1/sqrt(fan_in)` kernel, zero bias.
pub fn init_conv(
    w: &mut ModelWeights,
    path: &str,
    cin_per_group: usize,
    cout: usize,
    kernel: usize,
    bias: bool,
    rng: &mut impl Rng,
) {
    let fan_in = (cin_per_group * kernel * kernel) as f64;
    w.insert(
        format!("{path}.weight"),
        uniform(rng, &[cout, cin_per_group, kernel, kernel], 1.0 / fan_in.sqrt()),
        false,
    );
    if bias {
        w.insert(format!("{path}.bias"), ArrayD::zeros(IxDyn(&[cout])), false);
    }
}

pub fn conv<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    path: &str,
    x: Var<'g, F>,
    spec: Conv2dSpec,
) -> Result<Var<'g, F>> {
    let weight = w.var(g, &format!("{path}.weight"))?;
    let bias_path = format!("{path}.bias");
    let bias = if w.contains(&bias_path) {
        Some(w.var(g, &bias_path)?)
    } else {
        None
    };
    Ok(x.conv2d(weight, bias, spec))
}

pub fn init_linear(w: &mut ModelWeights, path: &str, din: usize, dout: usize, rng: &mut impl Rng) {
    w.insert(
        format!("{path}.weight"),
        uniform(rng, &[dout, din], 1.0 / (din as f64).sqrt()),
        false,
    );
    w.insert(format!("{path}.bias"), ArrayD::zeros(IxDyn(&[dout])), false);
}

pub fn linear<'g, F: Real>(g: &'g Graph<F>, w: &ModelWeights, path: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let weight = w.var(g, &format!("{path}.weight"))?;
    let bias = w.var(g, &format!("{path}.bias"))?;
    Ok(x.linear(weight, Some(bias)))
}

/// Unit scale, zero shift.
pub fn init_affine(w: &mut ModelWeights, path: &str, channels: usize) {
    w.insert(format!("{path}.weight"), ArrayD::ones(IxDyn(&[channels])), false);
    w.insert(format!("{path}.bias"), ArrayD::zeros(IxDyn(&[channels])), false);
}

/// Instance normalization of NCHW input, with a learnable per-channel affine
/// when `path` is given.
pub fn instance_norm<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    path: Option<&str>,
    x: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let shape = x.shape();
    let (c, h, wd) = (shape[1], shape[2], shape[3]);
    let y = x.normalize_groups(h * wd, F::lit(NORM_EPS));
    match path {
        None => Ok(y),
        Some(p) => {
            let gamma = w.var(g, &format!("{p}.weight"))?.reshape(&[1, c, 1, 1]);
            let beta = w.var(g, &format!("{p}.bias"))?.reshape(&[1, c, 1, 1]);
            Ok(y.mul(gamma).add(beta))
        }
    }
}

/// Layer normalization over the last axis with learnable affine.
pub fn layer_norm<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    path: &str,
    x: Var<'g, F>,
    eps: f64,
) -> Result<Var<'g, F>> {
    let d = *x.shape().last().expect("rank >= 1");
    let y = x.normalize_groups(d, F::lit(eps));
    let gamma = w.var(g, &format!("{path}.weight"))?;
    let beta = w.var(g, &format!("{path}.bias"))?;
    Ok(y.mul(gamma).add(beta))
}

/// 3×3 depthwise kernel followed by a biased 1×1 pointwise mix.
pub fn init_ds_conv(w: &mut ModelWeights, path: &str, cin: usize, cout: usize, rng: &mut impl Rng) {
    init_conv(w, &format!("{path}.dw"), 1, cin, 3, false, rng);
    init_conv(w, &format!("{path}.pw"), cin, cout, 1, true, rng);
}

pub fn ds_conv<'g, F: Real>(g: &'g Graph<F>, w: &ModelWeights, path: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let c = x.shape()[1];
    let dw = conv(g, w, &format!("{path}.dw"), x, Conv2dSpec::depthwise3x3(c))?;
    conv(g, w, &format!("{path}.pw"), dw, Conv2dSpec::default())
}
