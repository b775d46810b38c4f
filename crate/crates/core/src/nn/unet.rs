//! Plain convolutional U-Net with average pooling and bilinear upsampling.

use rand::Rng;

use super::layers::{conv, init_conv, instance_norm};
use super::ModelWeights;
use crate::autograd::{concat, Conv2dSpec, Graph, Var};
use crate::{Error, Real, Result};

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct UnetConfig {
    pub in_chans: usize,
    pub out_chans: usize,
    pub chans: usize,
    pub pools: usize,
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pools == 0 || self.chans == 0 || self.in_chans == 0 || self.out_chans == 0 {
            return Err(Error::config("U-Net needs at least one pooling layer and one channel"));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.chans << level
    }
}

fn init_block(w: &mut ModelWeights, path: &str, cin: usize, cout: usize, rng: &mut impl Rng) {
    init_conv(w, &format!("{path}.conv0"), cin, cout, 3, false, rng);
    init_conv(w, &format!("{path}.conv1"), cout, cout, 3, false, rng);
}

fn block<'g, F: Real>(g: &'g Graph<F>, w: &ModelWeights, path: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let mut x = x;
    for i in 0..2 {
        x = conv(g, w, &format!("{path}.conv{i}"), x, Conv2dSpec::same3x3())?;
        x = instance_norm(g, w, None, x)?.leaky_relu(F::lit(LEAK));
    }
    Ok(x)
}

/// Initializes all U-Net tensors under `prefix`. With `zero_output` the final
/// 1×1 projection starts at zero, so the network initially outputs zeros.
pub fn init_unet(w: &mut ModelWeights, prefix: &str, cfg: &UnetConfig, zero_output: bool, rng: &mut impl Rng) {
    init_block(w, &format!("{prefix}.down.0"), cfg.in_chans, cfg.width(0), rng);
    for l in 1..cfg.pools {
        init_block(w, &format!("{prefix}.down.{l}"), cfg.width(l - 1), cfg.width(l), rng);
    }
    init_block(
        w,
        &format!("{prefix}.bottom"),
        cfg.width(cfg.pools - 1),
        cfg.width(cfg.pools),
        rng,
    );
    for l in (0..cfg.pools).rev() {
        init_conv(
            w,
            &format!("{prefix}.up.{l}.conv"),
            cfg.width(l + 1),
            cfg.width(l),
            3,
            false,
            rng,
        );
        init_block(
            w,
            &format!("{prefix}.up.{l}.block"),
            2 * cfg.width(l),
            cfg.width(l),
            rng,
        );
    }
    init_conv(w, &format!("{prefix}.final"), cfg.width(0), cfg.out_chans, 1, true, rng);
    if zero_output {
        let t = w.get_mut(&format!("{prefix}.final.weight")).expect("just inserted");
        t.value.fill(0.0);
    }
}

/// `[B, in, H, W] -> [B, out, H, W]`; H and W must be divisible by `2^pools`.
pub fn unet<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &UnetConfig,
    x: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let shape = x.shape();
    let div = 1usize << cfg.pools;
    if shape.len() != 4 || shape[1] != cfg.in_chans {
        return Err(Error::shape(format!(
            "U-Net expects [B, {}, H, W], got {:?}",
            cfg.in_chans, shape
        )));
    }
    if !shape[2].is_multiple_of(div) || !shape[3].is_multiple_of(div) {
        return Err(Error::shape(format!(
            "U-Net with {} pools needs H, W divisible by {div}, got {}x{}",
            cfg.pools, shape[2], shape[3]
        )));
    }
    let mut skips = Vec::with_capacity(cfg.pools);
    let mut h = x;
    for l in 0..cfg.pools {
        h = block(g, w, &format!("{prefix}.down.{l}"), h)?;
        skips.push(h);
        h = h.avg_pool2();
    }
    h = block(g, w, &format!("{prefix}.bottom"), h)?;
    for l in (0..cfg.pools).rev() {
        let skip = skips.pop().expect("one skip per level");
        let s = skip.shape();
        h = h.resize_bilinear(s[2], s[3]);
        h = conv(g, w, &format!("{prefix}.up.{l}.conv"), h, Conv2dSpec::same3x3())?;
        h = instance_norm(g, w, None, h)?.leaky_relu(F::lit(LEAK));
        h = block(g, w, &format!("{prefix}.up.{l}.block"), concat(&[h, skip], 1))?;
    }
    conv(g, w, &format!("{prefix}.final"), h, Conv2dSpec::default())
}
