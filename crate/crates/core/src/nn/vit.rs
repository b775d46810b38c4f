//! Pre-norm Vision Transformer encoder that exposes every block's tokens.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{layer_norm, linear, truncated_normal};
use super::ModelWeights;
use crate::autograd::{concat, Graph, Var};
use crate::{Error, Real, Result};

/// LayerNorm epsilon used throughout the encoder.
pub const VIT_LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct VitConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// LayerNorm on the embedded sequence before the first block.
    pub pre_norm: bool,
}

impl VitConfig {
    /// Desk-scale default: 64 px input, 8 px patches, 64-dim, 8 blocks, 4 heads.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            patch_size: 8,
            embed_dim: 64,
            num_layers: 8,
            num_heads: 4,
            mlp_ratio: 4,
            pre_norm: false,
        }
    }

    /// ViT-B/16 geometry.
    pub fn vit_b16() -> Self {
        Self {
            input_size: 224,
            patch_size: 16,
            embed_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_ratio: 4,
            pre_norm: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "vit-b16" => Ok(Self::vit_b16()),
            other => Err(Error::config(format!("unknown encoder preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.input_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "input size {} is not divisible by patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if self.num_layers < 6 {
            return Err(Error::config(format!(
                "encoder needs at least 6 layers, got {}",
                self.num_layers
            )));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp ratio must be positive"));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Sequence length including the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }
}

/// Seeded truncated-normal (std 0.02) initialization; every tensor is frozen.
pub fn init_vit(weights: &mut ModelWeights, prefix: &str, cfg: &VitConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.embed_dim;
    let p = cfg.patch_size;
    let hidden = d * cfg.mlp_ratio;
    let put = |w: &mut ModelWeights, name: String, value: ArrayD<f64>| w.insert(name, value, true);
    let zeros = |n: usize| ArrayD::zeros(IxDyn(&[n]));
    let ones = |n: usize| ArrayD::ones(IxDyn(&[n]));

    put(
        weights,
        format!("{prefix}.patch_embed.weight"),
        truncated_normal(&mut rng, &[d, 3, p, p], 0.02),
    );
    put(weights, format!("{prefix}.patch_embed.bias"), zeros(d));
    put(
        weights,
        format!("{prefix}.cls_token"),
        truncated_normal(&mut rng, &[1, d], 0.02),
    );
    put(
        weights,
        format!("{prefix}.pos_embed"),
        truncated_normal(&mut rng, &[cfg.num_tokens(), d], 0.02),
    );
    if cfg.pre_norm {
        put(weights, format!("{prefix}.norm_pre.weight"), ones(d));
        put(weights, format!("{prefix}.norm_pre.bias"), zeros(d));
    }
    for i in 0..cfg.num_layers {
        let b = format!("{prefix}.blocks.{i}");
        for ln in ["norm1", "norm2"] {
            put(weights, format!("{b}.{ln}.weight"), ones(d));
            put(weights, format!("{b}.{ln}.bias"), zeros(d));
        }
        for (name, dout, din) in [
            ("attn.qkv", 3 * d, d),
            ("attn.proj", d, d),
            ("mlp.fc1", hidden, d),
            ("mlp.fc2", d, hidden),
        ] {
            put(
                weights,
                format!("{b}.{name}.weight"),
                truncated_normal(&mut rng, &[dout, din], 0.02),
            );
            put(weights, format!("{b}.{name}.bias"), zeros(dout));
        }
    }
}

fn attention<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    path: &str,
    x: Var<'g, F>,
    cfg: &VitConfig,
) -> Result<Var<'g, F>> {
    let t = x.shape()[0];
    let d = cfg.embed_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let qkv = linear(g, w, &format!("{path}.qkv"), x)?
        .reshape(&[t, 3, heads, dh])
        .permute(&[1, 2, 0, 3]);
    let q = qkv.select(0, 0);
    let k = qkv.select(0, 1);
    let v = qkv.select(0, 2);
    let scores = q.bmm(k.transpose_last()).scale(F::lit(1.0 / (dh as f64).sqrt()));
    let ctx = scores.softmax().bmm(v).permute(&[1, 0, 2]).reshape(&[t, d]);
    linear(g, w, &format!("{path}.proj"), ctx)
}

fn block<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    path: &str,
    x: Var<'g, F>,
    cfg: &VitConfig,
) -> Result<Var<'g, F>> {
    let h = layer_norm(g, w, &format!("{path}.norm1"), x, VIT_LN_EPS)?;
    let x = x.add(attention(g, w, &format!("{path}.attn"), h, cfg)?);
    let h = layer_norm(g, w, &format!("{path}.norm2"), x, VIT_LN_EPS)?;
    let h = linear(g, w, &format!("{path}.mlp.fc1"), h)?.gelu();
    let h = linear(g, w, &format!("{path}.mlp.fc2"), h)?;
    Ok(x.add(h))
}

/// Token sequences `[1 + patches, embed]` after each of the first `layers` blocks.
/// Index 0 of each sequence is the class token.
pub fn vit_encode_layers<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &VitConfig,
    image: Var<'g, F>,
    layers: usize,
) -> Result<Vec<Var<'g, F>>> {
    cfg.validate()?;
    let s = cfg.input_size;
    if image.shape() != [3, s, s] {
        return Err(Error::shape(format!(
            "encoder expects [3, {s}, {s}], got {:?}",
            image.shape()
        )));
    }
    if layers > cfg.num_layers {
        return Err(Error::config(format!(
            "requested {layers} layers of a {}-layer encoder",
            cfg.num_layers
        )));
    }
    let (p, grid, d) = (cfg.patch_size, cfg.grid(), cfg.embed_dim);
    // [3, gy, p, gx, p] -> [gy, gx, 3, p, p] -> [patches, 3 p p]
    let patches = image
        .reshape(&[3, grid, p, grid, p])
        .permute(&[1, 3, 0, 2, 4])
        .reshape(&[grid * grid, 3 * p * p]);
    let proj = w
        .var(g, &format!("{prefix}.patch_embed.weight"))?
        .reshape(&[d, 3 * p * p]);
    let bias = w.var(g, &format!("{prefix}.patch_embed.bias"))?;
    let tokens = patches.linear(proj, Some(bias));
    let cls = w.var(g, &format!("{prefix}.cls_token"))?;
    let mut x = concat(&[cls, tokens], 0).add(w.var(g, &format!("{prefix}.pos_embed"))?);
    if cfg.pre_norm {
        x = layer_norm(g, w, &format!("{prefix}.norm_pre"), x, VIT_LN_EPS)?;
    }
    let mut out = Vec::with_capacity(layers);
    for i in 0..layers {
        x = block(g, w, &format!("{prefix}.blocks.{i}"), x, cfg)?;
        out.push(x);
    }
    Ok(out)
}

/// Token sequences after every block of the encoder.
pub fn vit_encode<'g, F: Real>(
    g: &'g Graph<F>,
    w: &ModelWeights,
    prefix: &str,
    cfg: &VitConfig,
    image: Var<'g, F>,
) -> Result<Vec<Var<'g, F>>> {
    vit_encode_layers(g, w, prefix, cfg, image, cfg.num_layers)
}
