use ndarray::{Axis, IxDyn};

use super::column_tensor;
use crate::autograd::{complex_to_real, real_to_complex, Graph, Var};
use crate::nn::unet::unet;
use crate::nn::{ModelWeights, UnetConfig};
use crate::physics::{MultiCoilKSpace, SamplingMask, SensitivityMaps, SUPPORT_THRESHOLD};
use crate::{Error, Real, Result};

/// Weight-path prefix of the sensitivity estimator.
pub const SME_PREFIX: &str = "sme";
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmeConfig {
    pub pools: usize,
    pub chans: usize,
}

impl Default for SmeConfig {
    fn default() -> Self {
        Self { pools: 4, chans: 8 }
    }
}

impl SmeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pools == 0 || self.chans == 0 {
            return Err(Error::config(
                "sensitivity estimator needs at least one pool and one channel",
            ));
        }
        Ok(())
    }

    pub(crate) fn unet(&self) -> UnetConfig {
        UnetConfig {
            in_chans: 2,
            out_chans: 2,
            chans: self.chans,
            pools: self.pools,
        }
    }
}

/// Normalized maps `[N, H, W, 2]` from measured k-space `[N, H, W, 2]`.
///
/// The ACS block is transformed per coil, refined by a residual normalized
/// U-Net over the coil batch and divided by its pixelwise RSS. Pixels with an
/// RSS at or below the support threshold are zero.
pub fn sme_forward<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    cfg: &SmeConfig,
    kspace: Var<'g, F>,
    mask: &SamplingMask,
) -> Result<Var<'g, F>> {
    if mask.acs_range().is_empty() {
        return Err(Error::config("sensitivity estimation needs a nonempty ACS block"));
    }
    let shape = kspace.shape();
    let (n, h, wd) = (shape[0], shape[1], shape[2]);
    let images = kspace.mul_const(column_tensor(&mask.acs_weights())).ifft2c();
    let planar = images.permute(&[0, 3, 1, 2]).reshape(&[n, 2 * h * wd]);
    let mean = planar.mean_axis(1);
    let centered = planar.sub(mean);
    let std = centered.square().mean_axis(1).add_scalar(F::lit(NORM_EPS)).sqrt();
    let normed = centered.div(std).reshape(&[n, 2, h, wd]);
    let refine = unet(g, w, &format!("{SME_PREFIX}.unet"), &cfg.unet(), normed)?.reshape(&[n, 2 * h * wd]);
    let refined = planar
        .add(refine.mul(std))
        .reshape(&[n, 2, h, wd])
        .permute(&[0, 2, 3, 1]);

    let norm = refined.rss();
    let support = norm.value().mapv(|r| {
        if r.to_f64_lossy() > SUPPORT_THRESHOLD {
            F::one()
        } else {
            F::zero()
        }
    });
    let outside = support.mapv(|s| F::one() - s);
    let shape4 = [1, h, wd, 1];
    let denom = norm.add_const(outside).reshape(&shape4);
    let support4 = support.into_shape_with_order(IxDyn(&shape4)).expect("support shape");
    Ok(refined.div(denom).mul_const(support4))
}

/// Double-precision sensitivity estimate.
pub fn estimate_sensitivities(
    masked: &MultiCoilKSpace,
    mask: &SamplingMask,
    w: &ModelWeights,
    cfg: &SmeConfig,
) -> Result<SensitivityMaps> {
    if masked.width() != mask.width() {
        return Err(Error::shape(format!(
            "k-space width {} vs mask width {}",
            masked.width(),
            mask.width()
        )));
    }
    let g = Graph::<f64>::inference();
    let k = g.constant(complex_to_real(masked.data()));
    let maps = sme_forward(&g, w, cfg, k, mask)?.value();
    let data = real_to_complex(&maps).into_dimensionality().expect("rank 3");
    let support = maps
        .map_axis(Axis(3), |p| p[0] * p[0] + p[1] * p[1])
        .sum_axis(Axis(0))
        .mapv(|v| v > 0.0)
        .into_dimensionality()
        .expect("rank 2");
    Ok(SensitivityMaps::from_normalized(data, support))
}
