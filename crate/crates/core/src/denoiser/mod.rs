//! Image-domain denoisers used inside the unrolled cascades.
//!
//! The main variant feeds a percentile-normalized magnitude image through a
//! frozen ViT, fuses the first six token layers with learned softmax weights,
//! and decodes them with a convolutional upsampling path that also sees the
//! complex input directly. A plain normalized U-Net serves as the baseline.

use ndarray::{Array1, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{complex_to_real, concat, Conv2dSpec, Graph, Var};
use crate::nn::layers::{conv, ds_conv, init_affine, init_conv, init_ds_conv, instance_norm, layer_norm};
use crate::nn::unet::{init_unet, unet};
use crate::nn::vit::init_vit;
use crate::nn::{vit_encode_layers, ModelWeights, UnetConfig, VitConfig};
use crate::physics::ComplexImage;
use crate::{Error, Real, Result};

/// Number of encoder layers combined by the fusion step.
pub const FUSED_LAYERS: usize = 6;
/// Weight-path prefix of the frozen encoder, shared by every denoiser instance.
pub const ENCODER_PREFIX: &str = "encoder";
const FUSION_LN_EPS: f64 = 1e-5;
const INPUT_SKIP_CHANNELS: usize = 8;
const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub encoder: VitConfig,
    /// Seed of the frozen encoder initialization when no weight file is given.
    pub encoder_seed: u64,
    pub working_size: usize,
    /// 1-based indices into the fused layers, one per decoder stage from the coarsest.
    pub skip_layers: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub percentile_bounds: (f64, f64),
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    /// Add the input to the network output.
    pub residual: bool,
}

impl DenoiserConfig {
    /// Defaults for an encoder geometry; the working size equals the encoder input.
    pub fn for_encoder(encoder: VitConfig) -> Self {
        let working_size = encoder.input_size;
        let stages = stage_count(working_size, encoder.grid()).unwrap_or(1);
        Self {
            encoder,
            encoder_seed: 0,
            working_size,
            skip_layers: vec![5, 4, 3],
            decoder_channels: default_channels(stages),
            percentile_bounds: (1.0, 99.0),
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
            residual: false,
        }
    }

    pub fn desk() -> Self {
        Self::for_encoder(VitConfig::desk())
    }

    pub fn stages(&self) -> usize {
        stage_count(self.working_size, self.encoder.grid()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let stages = stage_count(self.working_size, self.encoder.grid()).ok_or_else(|| {
            Error::config(format!(
                "working size {} must be the {}-token grid times a power of two",
                self.working_size,
                self.encoder.grid()
            ))
        })?;
        if self.decoder_channels.len() != stages || self.decoder_channels.contains(&0) {
            return Err(Error::config(format!(
                "expected {stages} positive decoder channel counts, got {:?}",
                self.decoder_channels
            )));
        }
        if self.skip_layers.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config(format!(
                "skip layers must be strictly decreasing: {:?}",
                self.skip_layers
            )));
        }
        if self
            .skip_layers
            .iter()
            .any(|&l| l == 0 || l > FUSED_LAYERS.min(self.encoder.num_layers))
        {
            return Err(Error::config(format!(
                "skip layers must lie in 1..={FUSED_LAYERS}: {:?}",
                self.skip_layers
            )));
        }
        let (lo, hi) = self.percentile_bounds;
        if !(0.0..100.0).contains(&lo) || !(lo < hi && hi <= 100.0) {
            return Err(Error::config(format!("invalid percentile bounds ({lo}, {hi})")));
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("standardization deviations must be positive"));
        }
        Ok(())
    }
}

fn stage_count(working: usize, grid: usize) -> Option<usize> {
    if grid == 0 || !working.is_multiple_of(grid) {
        return None;
    }
    let ratio = working / grid;
    (ratio >= 2 && ratio.is_power_of_two()).then(|| ratio.trailing_zeros() as usize)
}

/// Channel widths halving towards the output, ending at 8.
pub fn default_channels(stages: usize) -> Vec<usize> {
    (0..stages).map(|s| 8 << (stages - 1 - s)).collect()
}

/// Interchangeable regularizers for the cascade.
#[derive(Clone, Debug, PartialEq)]
pub enum Denoiser {
    VitFusion(DenoiserConfig),
    /// Normalized U-Net on the two real channels.
    Cnn(UnetConfig),
    Identity,
    Zero,
}

impl Denoiser {
    pub fn baseline_cnn() -> Self {
        Denoiser::Cnn(UnetConfig {
            in_chans: 2,
            out_chans: 2,
            chans: 16,
            pools: 3,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Denoiser::VitFusion(_) => "vit-fusion",
            Denoiser::Cnn(_) => "baseline-cnn",
            Denoiser::Identity => "identity",
            Denoiser::Zero => "zero",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Denoiser::VitFusion(cfg) => cfg.validate(),
            Denoiser::Cnn(cfg) => {
                cfg.validate()?;
                if cfg.in_chans != 2 || cfg.out_chans != 2 {
                    return Err(Error::config("the CNN denoiser maps 2 channels to 2 channels"));
                }
                Ok(())
            }
            Denoiser::Identity | Denoiser::Zero => Ok(()),
        }
    }

    /// Inserts this denoiser's tensors under `prefix`. The frozen encoder is
    /// created once under [`ENCODER_PREFIX`].
    pub fn init(&self, w: &mut ModelWeights, prefix: &str, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Denoiser::VitFusion(cfg) => {
                if !w.contains(&format!("{ENCODER_PREFIX}.cls_token")) {
                    init_vit(w, ENCODER_PREFIX, &cfg.encoder, cfg.encoder_seed);
                }
                init_vit_fusion(w, prefix, cfg, &mut rng);
            }
            Denoiser::Cnn(cfg) => init_unet(w, &format!("{prefix}.unet"), cfg, false, &mut rng),
            Denoiser::Identity | Denoiser::Zero => {}
        }
    }

    /// Maps a complex image `[H, W, 2]` to a complex image of the same shape.
    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        w: &ModelWeights,
        prefix: &str,
        x: Var<'g, F>,
    ) -> Result<Var<'g, F>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::shape(format!("denoiser expects [H, W, 2], got {shape:?}")));
        }
        match self {
            Denoiser::VitFusion(cfg) => vit_fusion(g, w, prefix, cfg, x),
            Denoiser::Cnn(cfg) => norm_unet(g, w, &format!("{prefix}.unet"), cfg, x),
            Denoiser::Identity => Ok(x),
            Denoiser::Zero => Ok(x.scale(F::zero())),
        }
    }
}

fn init_vit_fusion(w: &mut ModelWeights, prefix: &str, cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) {
    let d = cfg.encoder.embed_dim;
    w.insert(
        format!("{prefix}.fusion.logits"),
        ArrayD::zeros(IxDyn(&[FUSED_LAYERS])),
        false,
    );
    for i in 0..FUSED_LAYERS {
        init_affine(w, &format!("{prefix}.fusion.norm{i}"), d);
    }
    let stages = cfg.decoder_channels.len();
    let mut cin = d;
    for (s, &c) in cfg.decoder_channels.iter().enumerate() {
        let p = format!("{prefix}.decoder.stage{s}");
        init_ds_conv(w, &format!("{p}.up"), cin, c, rng);
        init_affine(w, &format!("{p}.up_norm"), c);
        let mut fuse_in = c;
        if s < cfg.skip_layers.len() {
            init_conv(w, &format!("{p}.skip"), d, c, 1, true, rng);
            fuse_in += c;
        }
        if s + 1 == stages {
            fuse_in += INPUT_SKIP_CHANNELS;
        }
        init_conv(w, &format!("{p}.fuse"), fuse_in, c, 3, true, rng);
        init_affine(w, &format!("{p}.fuse_norm"), c);
        cin = c;
    }
    init_conv(w, &format!("{prefix}.input_skip"), 2, INPUT_SKIP_CHANNELS, 3, true, rng);
    init_conv(w, &format!("{prefix}.head"), cin, 2, 1, true, rng);
    let head = w.get_mut(&format!("{prefix}.head.weight")).expect("just inserted");
    head.value.mapv_inplace(|v| v * HEAD_INIT_SCALE);
}

/// Encoder input `[3, S, S]` from a complex image `[H, W, 2]`.
pub fn preprocess_var<'g, F: Real>(x: Var<'g, F>, cfg: &DenoiserConfig) -> Var<'g, F> {
    let shape = x.shape();
    let (h, w) = (shape[0], shape[1]);
    let s = cfg.encoder.input_size;
    let (lo, hi) = cfg.percentile_bounds;
    let scaled = x.cabs().percentile_scale(lo, hi).reshape(&[1, h, w]);
    let rgb = concat(&[scaled, scaled, scaled], 0).resize_bilinear(s, s);
    let inv_std = Array1::from_iter(cfg.norm_std.iter().map(|&v| F::lit(1.0 / v)));
    let shift = Array1::from_iter(cfg.norm_mean.iter().zip(&cfg.norm_std).map(|(&m, &v)| F::lit(-m / v)));
    rgb.mul_const(inv_std.into_shape_with_order(IxDyn(&[3, 1, 1])).expect("channel axis"))
        .add_const(shift.into_shape_with_order(IxDyn(&[3, 1, 1])).expect("channel axis"))
}

/// Standardized encoder input for a complex image.
pub fn preprocess(x: &ComplexImage, cfg: &DenoiserConfig) -> Array3<f64> {
    let g = Graph::<f64>::inference();
    let v = g.constant(complex_to_real(x.data()));
    let out = preprocess_var(v, cfg).value();
    out.as_ref().clone().into_dimensionality().expect("rank 3")
}

/// Softmax of the fusion logits.
pub fn fusion_weights(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn tokens_to_map<'g, F: Real>(tokens: Var<'g, F>, grid: usize) -> Var<'g, F> {
    let shape = tokens.shape();
    let (t, d) = (shape[0], shape[1]);
    tokens.slice_axis(0, 1..t).transpose_last().reshape(&[1, d, grid, grid])
}

/// Per-layer normalized token maps `[1, D, g, g]` and their softmax-weighted sum.
pub fn fuse_layers<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    layers: &[Var<'g, F>],
    grid: usize,
) -> Result<(Var<'g, F>, Vec<Var<'g, F>>)> {
    if layers.len() != FUSED_LAYERS {
        return Err(Error::shape(format!(
            "fusion needs {FUSED_LAYERS} token sets, got {}",
            layers.len()
        )));
    }
    let shape = layers[0].shape();
    if layers.iter().any(|l| l.shape() != shape) || shape.len() != 2 || shape[0] != grid * grid + 1 {
        return Err(Error::shape(format!(
            "token sets must all be [{}, D], got {shape:?}",
            grid * grid + 1
        )));
    }
    let weights = w.var(g, &format!("{prefix}.fusion.logits"))?.softmax();
    let mut normed = Vec::with_capacity(FUSED_LAYERS);
    let mut fused: Option<Var<'g, F>> = None;
    for (i, &tokens) in layers.iter().enumerate() {
        let n = layer_norm(g, w, &format!("{prefix}.fusion.norm{i}"), tokens, FUSION_LN_EPS)?;
        let term = n.mul(weights.select(0, i));
        fused = Some(match fused {
            None => term,
            Some(acc) => acc.add(term),
        });
        normed.push(tokens_to_map(n, grid));
    }
    Ok((tokens_to_map(fused.expect("six layers"), grid), normed))
}

/// Decoder from the fused map `[1, D, g, g]` to `[H, W, 2]`.
pub fn decode<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &DenoiserConfig,
    fused: Var<'g, F>,
    skips: &[Var<'g, F>],
    input: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let grid = cfg.encoder.grid();
    let fshape = fused.shape();
    if fshape != [1, cfg.encoder.embed_dim, grid, grid] {
        return Err(Error::shape(format!("fused map has shape {fshape:?}")));
    }
    if skips.len() < cfg.skip_layers.len().min(cfg.decoder_channels.len()) {
        return Err(Error::shape(format!(
            "decoder needs {} skip maps",
            cfg.skip_layers.len()
        )));
    }
    let ishape = input.shape();
    if ishape.len() != 3 || ishape[2] != 2 {
        return Err(Error::shape(format!("input skip expects [H, W, 2], got {ishape:?}")));
    }
    let (h, wd) = (ishape[0], ishape[1]);
    let stages = cfg.decoder_channels.len();
    let mut x = fused;
    let mut size = grid;
    for s in 0..stages {
        let p = format!("{prefix}.decoder.stage{s}");
        size *= 2;
        x = x.resize_bilinear(size, size);
        x = ds_conv(g, w, &format!("{p}.up"), x)?;
        x = instance_norm(g, w, Some(&format!("{p}.up_norm")), x)?.relu();
        let mut parts = vec![x];
        if s < cfg.skip_layers.len() {
            let proj = conv(g, w, &format!("{p}.skip"), skips[s], Conv2dSpec::default())?;
            parts.push(proj.resize_bilinear(size, size));
        }
        if s + 1 == stages {
            let planar = input
                .permute(&[2, 0, 1])
                .reshape(&[1, 2, h, wd])
                .resize_bilinear(size, size);
            parts.push(conv(
                g,
                w,
                &format!("{prefix}.input_skip"),
                planar,
                Conv2dSpec::same3x3(),
            )?);
        }
        x = conv(g, w, &format!("{p}.fuse"), concat(&parts, 1), Conv2dSpec::same3x3())?;
        x = instance_norm(g, w, Some(&format!("{p}.fuse_norm")), x)?.relu();
    }
    let out = conv(g, w, &format!("{prefix}.head"), x, Conv2dSpec::default())?.resize_bilinear(h, wd);
    Ok(out.reshape(&[2, h, wd]).permute(&[1, 2, 0]))
}

fn vit_fusion<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &DenoiserConfig,
    x: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let image = preprocess_var(x, cfg);
    let layers = vit_encode_layers(g, w, ENCODER_PREFIX, &cfg.encoder, image, FUSED_LAYERS)?;
    let (fused, normed) = fuse_layers(g, w, prefix, &layers, cfg.encoder.grid())?;
    let skips: Vec<_> = cfg.skip_layers.iter().map(|&l| normed[l - 1]).collect();
    let out = decode(g, w, prefix, cfg, fused, &skips, x)?;
    Ok(if cfg.residual { out.add(x) } else { out })
}

fn norm_unet<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &UnetConfig,
    x: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let shape = x.shape();
    let (h, wd) = (shape[0], shape[1]);
    let planar = x.permute(&[2, 0, 1]).reshape(&[1, 2, h * wd]);
    let mean = planar.mean_axis(2);
    let centered = planar.sub(mean);
    let std = centered.square().mean_axis(2).add_scalar(F::lit(1e-12)).sqrt();
    let normed = centered.div(std).reshape(&[1, 2, h, wd]);
    let y = unet(g, w, prefix, cfg, normed)?.reshape(&[1, 2, h * wd]);
    Ok(y.mul(std).add(mean).reshape(&[2, h, wd]).permute(&[1, 2, 0]))
}

/// Runs the denoiser on one complex image in double precision.
pub fn denoise(x: &ComplexImage, denoiser: &Denoiser, w: &ModelWeights, prefix: &str) -> Result<ComplexImage> {
    let g = Graph::<f64>::inference();
    let v = g.constant(complex_to_real(x.data()));
    let out = denoiser.forward(&g, w, prefix, v)?.value();
    let c = crate::autograd::real_to_complex(&out);
    ComplexImage::new(c.into_dimensionality().expect("rank 2"))
}
