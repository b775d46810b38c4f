//! Unrolled k-space cascades with learned sensitivity estimation.
//!
//! Each cascade applies `k <- k - mu_t M (k - k~) + G(k)` with
//! `G = F E D R F^-1`, and the final estimate is coil-combined by RSS.

mod sme;
mod train;

pub use sme::{estimate_sensitivities, sme_forward, SmeConfig, SME_PREFIX};
pub use train::{EpochRecord, Sample, Schedule, TrainProgress, Trainer};

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{complex_to_real, real_to_complex, Graph, Var};
use crate::denoiser::Denoiser;
use crate::nn::unet::init_unet;
use crate::nn::ModelWeights;
use crate::physics::{ifft2c_coils, rss, MultiCoilKSpace, SamplingMask, SensitivityMaps};
use crate::{Error, Real, Result};

/// Path of the per-cascade step sizes `[T]`.
pub const MU_PATH: &str = "recon.mu";

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub cascades: usize,
    pub denoiser: Denoiser,
    /// One denoiser for all cascades instead of one per cascade.
    pub shared_denoiser: bool,
    pub sme: SmeConfig,
}

impl ReconConfig {
    pub fn new(cascades: usize, denoiser: Denoiser) -> Self {
        Self {
            cascades,
            denoiser,
            shared_denoiser: true,
            sme: SmeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cascades == 0 {
            return Err(Error::config("at least one cascade is required"));
        }
        self.sme.validate()?;
        self.denoiser.validate()
    }

    /// Weight prefix of the denoiser used by cascade `t`.
    pub fn denoiser_prefix(&self, t: usize) -> String {
        if self.shared_denoiser {
            "denoiser".to_string()
        } else {
            format!("denoiser{t}")
        }
    }

    /// Fresh weights: unit step sizes, an identity sensitivity refinement and
    /// seeded denoiser parameters.
    pub fn init_weights(&self, seed: u64) -> ModelWeights {
        let mut w = ModelWeights::new();
        w.insert(MU_PATH, ArrayD::ones(IxDyn(&[self.cascades])), false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_unet(&mut w, &format!("{SME_PREFIX}.unet"), &self.sme.unet(), true, &mut rng);
        let instances = if self.shared_denoiser { 1 } else { self.cascades };
        for t in 0..instances {
            self.denoiser
                .init(&mut w, &self.denoiser_prefix(t), seed.wrapping_add(1 + t as u64));
        }
        w
    }
}

/// Column mask `[1, W, 1]` broadcastable against `[N, H, W, 2]`.
pub(crate) fn column_tensor<F: Real>(weights: &[f64]) -> ArrayD<F> {
    ArrayD::from_shape_vec(
        IxDyn(&[1, weights.len(), 1]),
        weights.iter().map(|&v| F::lit(v)).collect(),
    )
    .expect("column vector")
}

/// `F E D R F^-1` applied to multi-coil k-space `[N, H, W, 2]`.
pub fn regularizer_var<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    denoiser: &Denoiser,
    prefix: &str,
    k: Var<'g, F>,
    sens: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let shape = k.shape();
    if shape.len() != 4 || shape[3] != 2 || sens.shape() != shape {
        return Err(Error::shape(format!("k-space {shape:?} vs maps {:?}", sens.shape())));
    }
    let combined = sens.cmul_conj(k.ifft2c()).sum_axis(0).reshape(&shape[1..]);
    let denoised = denoiser.forward(g, w, prefix, combined)?;
    Ok(sens.cmul(denoised).fft2c())
}

/// One cascade update with a scalar step size `mu`.
#[allow(clippy::too_many_arguments)]
pub fn cascade_step_var<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    denoiser: &Denoiser,
    prefix: &str,
    k: Var<'g, F>,
    k_tilde: Var<'g, F>,
    mask: &SamplingMask,
    mu: Var<'g, F>,
    sens: Var<'g, F>,
) -> Result<Var<'g, F>> {
    if k.shape() != k_tilde.shape() || k.shape()[2] != mask.width() {
        return Err(Error::shape(format!(
            "cascade inputs {:?} / {:?} with mask width {}",
            k.shape(),
            k_tilde.shape(),
            mask.width()
        )));
    }
    let dc = k.sub(k_tilde).mul_const(column_tensor(&mask.weights())).mul(mu);
    let reg = regularizer_var(g, w, denoiser, prefix, k, sens)?;
    Ok(k.sub(dc).add(reg))
}

/// Full model: sensitivity estimation, `T` cascades and RSS, giving `[H, W]`.
pub fn forward<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    cfg: &ReconConfig,
    masked: &MultiCoilKSpace,
    mask: &SamplingMask,
) -> Result<Var<'g, F>> {
    if masked.width() != mask.width() {
        return Err(Error::shape(format!(
            "k-space width {} vs mask width {}",
            masked.width(),
            mask.width()
        )));
    }
    let k_tilde = g.constant(complex_to_real(masked.data()));
    let sens = sme_forward(g, w, &cfg.sme, k_tilde, mask)?;
    let mu = w.var(g, MU_PATH)?;
    if mu.shape() != [cfg.cascades] {
        return Err(Error::shape(format!(
            "{MU_PATH} has shape {:?}, expected [{}]",
            mu.shape(),
            cfg.cascades
        )));
    }
    let mut k = k_tilde;
    for t in 0..cfg.cascades {
        let prefix = cfg.denoiser_prefix(t);
        k = cascade_step_var(g, w, &cfg.denoiser, &prefix, k, k_tilde, mask, mu.select(0, t), sens)?;
    }
    Ok(k.ifft2c().rss())
}

/// Reconstructed magnitude image in element precision `F`.
pub fn reconstruct<F: Real>(
    masked: &MultiCoilKSpace,
    mask: &SamplingMask,
    w: &ModelWeights,
    cfg: &ReconConfig,
) -> Result<Array2<f64>> {
    let g = Graph::<F>::inference();
    let out = forward(&g, w, cfg, masked, mask)?;
    let v = out.value();
    Ok(v.mapv(|x| x.to_f64_lossy()).into_dimensionality().expect("rank 2"))
}

/// RSS of the inverse transform of the measured data.
pub fn zero_filled(masked: &MultiCoilKSpace) -> Array2<f64> {
    rss(&ifft2c_coils(masked))
}

fn maps_var<'g, F: Real>(g: &'g Graph<F>, sens: &SensitivityMaps) -> Var<'g, F> {
    g.constant(complex_to_real(sens.data()))
}

fn to_kspace<F: Real>(v: Var<'_, F>) -> Result<MultiCoilKSpace> {
    let c = real_to_complex(&v.value());
    MultiCoilKSpace::new(c.into_dimensionality().expect("rank 3"))
}

/// Double-precision evaluation of the regularizer for fixed maps.
pub fn regularizer_g(
    k: &MultiCoilKSpace,
    sens: &SensitivityMaps,
    denoiser: &Denoiser,
    w: &ModelWeights,
    prefix: &str,
) -> Result<MultiCoilKSpace> {
    let g = Graph::<f64>::inference();
    let kv = g.constant(complex_to_real(k.data()));
    to_kspace(regularizer_var(&g, w, denoiser, prefix, kv, maps_var(&g, sens))?)
}

/// Double-precision single cascade update for fixed maps.
#[allow(clippy::too_many_arguments)]
pub fn cascade_step(
    k_t: &MultiCoilKSpace,
    k_tilde: &MultiCoilKSpace,
    mask: &SamplingMask,
    mu: f64,
    sens: &SensitivityMaps,
    denoiser: &Denoiser,
    w: &ModelWeights,
    prefix: &str,
) -> Result<MultiCoilKSpace> {
    let g = Graph::<f64>::inference();
    let k = g.constant(complex_to_real(k_t.data()));
    let kt = g.constant(complex_to_real(k_tilde.data()));
    let mu = g.scalar(mu);
    to_kspace(cascade_step_var(
        &g,
        w,
        denoiser,
        prefix,
        k,
        kt,
        mask,
        mu,
        maps_var(&g, sens),
    )?)
}
