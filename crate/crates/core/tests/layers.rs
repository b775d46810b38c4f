use ndarray::{Array4, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umri::autograd::{Conv2dSpec, Graph};
use umri::nn::layers::{ds_conv, init_affine, init_ds_conv, instance_norm, layer_norm};
use umri::nn::vit::init_vit;
use umri::nn::{vit_encode, vit_encode_layers, ModelWeights, VitConfig};

fn random(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

fn max_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Direct nested-loop cross-correlation with zero padding.
fn conv_oracle(x: &ArrayD<f64>, k: &ArrayD<f64>, stride: usize, pad: usize, groups: usize) -> ArrayD<f64> {
    let x = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let k = k.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let (n, cin, h, w) = x.dim();
    let (cout, cpg, kh, kw) = k.dim();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let opg = cout / groups;
    assert_eq!(cpg * groups, cin);
    let mut out = Array4::<f64>::zeros((n, cout, oh, ow));
    for b in 0..n {
        for o in 0..cout {
            let grp = o / opg;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cpg {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (y, z) = (
                                    (i * stride + u) as isize - pad as isize,
                                    (j * stride + v) as isize - pad as isize,
                                );
                                if y >= 0 && z >= 0 && (y as usize) < h && (z as usize) < w {
                                    acc += x[[b, grp * cpg + c, y as usize, z as usize]] * k[[o, c, u, v]];
                                }
                            }
                        }
                    }
                    out[[b, o, i, j]] = acc;
                }
            }
        }
    }
    out.into_dyn()
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let cases = [(1, 1, 1), (1, 0, 1), (2, 1, 1), (1, 1, 2), (2, 2, 3)];
    for (seed, &(stride, pad, groups)) in cases.iter().enumerate() {
        let x = random(&[2, 6, 7, 5], seed as u64);
        let k = random(&[6, 6 / groups, 3, 3], 100 + seed as u64);
        let g = Graph::<f64>::inference();
        let spec = Conv2dSpec {
            stride,
            padding: pad,
            groups,
        };
        let y = g.constant(x.clone()).conv2d(g.constant(k.clone()), None, spec).value();
        let oracle = conv_oracle(&x, &k, stride, pad, groups);
        assert_eq!(y.shape()[2], (7 + 2 * pad - 3) / stride + 1);
        assert!(max_diff(&y, &oracle) < 1e-12, "case {cases:?}[{seed}]");
    }
}

#[test]
fn identity_and_averaging_kernels() {
    let x = random(&[1, 3, 5, 4], 1);
    let g = Graph::<f64>::inference();
    let eye = ArrayD::from_shape_fn(IxDyn(&[3, 3, 1, 1]), |i| (i[0] == i[1]) as u8 as f64);
    let y = g
        .constant(x.clone())
        .conv2d(g.constant(eye), None, Conv2dSpec::default())
        .value();
    assert_eq!(*y, x);

    let c = ArrayD::from_elem(IxDyn(&[1, 1, 5, 6]), 2.0);
    let avg = ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), 1.0 / 9.0);
    let y = g
        .constant(c)
        .conv2d(g.constant(avg), None, Conv2dSpec::same3x3())
        .value();
    for i in 0..5 {
        for j in 0..6 {
            let rows = 3 - (i == 0) as usize - (i == 4) as usize;
            let cols = 3 - (j == 0) as usize - (j == 5) as usize;
            let expected = 2.0 * (rows * cols) as f64 / 9.0;
            assert!((y[[0, 0, i, j]] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn depthwise_separable_equals_composed_kernel() {
    let mut w = ModelWeights::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    init_ds_conv(&mut w, "ds", 2, 3, &mut rng);
    let dw = w.get("ds.dw.weight").unwrap().value.clone();
    let pw = w.get("ds.pw.weight").unwrap().value.clone();
    let bias = w.get("ds.pw.bias").unwrap().value.clone();
    assert_eq!(dw.len() + pw.len(), 2 * 9 + 2 * 3);
    assert!(dw.len() + pw.len() < 2 * 3 * 9);

    let composed = ArrayD::from_shape_fn(IxDyn(&[3, 2, 3, 3]), |i| {
        pw[[i[0], i[1], 0, 0]] * dw[[i[1], 0, i[2], i[3]]]
    });
    let x = random(&[1, 2, 6, 6], 4);
    let g = Graph::<f64>::inference();
    let y = ds_conv(&g, &w, "ds", g.constant(x.clone())).unwrap().value();
    let mut oracle = conv_oracle(&x, &composed, 1, 1, 1);
    for (mut plane, b) in oracle.axis_iter_mut(Axis(1)).zip(bias.iter()) {
        plane += *b;
    }
    assert!(max_diff(&y, &oracle) < 1e-12);

    let mut id = ModelWeights::new();
    let center = ArrayD::from_shape_fn(IxDyn(&[2, 1, 3, 3]), |i| (i[2] == 1 && i[3] == 1) as u8 as f64);
    id.insert("ds.dw.weight", center, false);
    id.insert(
        "ds.pw.weight",
        ArrayD::from_shape_fn(IxDyn(&[2, 2, 1, 1]), |i| (i[0] == i[1]) as u8 as f64),
        false,
    );
    id.insert("ds.pw.bias", ArrayD::zeros(IxDyn(&[2])), false);
    let g = Graph::<f64>::inference();
    let y = ds_conv(&g, &id, "ds", g.constant(x.clone())).unwrap().value();
    assert!(max_diff(&y, &x) < 1e-15);
}

fn two_pass(x: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + eps).sqrt()).collect()
}

#[test]
fn instance_norm_statistics_and_oracle() {
    let x = random(&[2, 3, 4, 4], 5).mapv(|v| 3.0 * v + 1.5);
    let g = Graph::<f64>::inference();
    let mut w = ModelWeights::new();
    init_affine(&mut w, "in", 3);
    let y = instance_norm(&g, &w, Some("in"), g.constant(x.clone()))
        .unwrap()
        .value();
    for b in 0..2 {
        for c in 0..3 {
            let plane: Vec<f64> = x
                .index_axis(Axis(0), b)
                .index_axis(Axis(0), c)
                .iter()
                .copied()
                .collect();
            let got: Vec<f64> = y
                .index_axis(Axis(0), b)
                .index_axis(Axis(0), c)
                .iter()
                .copied()
                .collect();
            let mean = got.iter().sum::<f64>() / 16.0;
            let var = got.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
            let oracle = two_pass(&plane, 1e-5);
            assert!(got.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
    let c = ArrayD::from_elem(IxDyn(&[1, 2, 3, 3]), 4.2);
    let y = instance_norm(&g, &w, None, g.constant(c)).unwrap().value();
    assert!(y.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn layer_norm_statistics_and_oracle() {
    let x = random(&[5, 8], 6).mapv(|v| 2.0 * v - 0.7);
    let g = Graph::<f64>::inference();
    let mut w = ModelWeights::new();
    init_affine(&mut w, "ln", 8);
    let y = layer_norm(&g, &w, "ln", g.constant(x.clone()), 1e-6).unwrap().value();
    for (row, out) in x.rows().into_iter().zip(y.rows()) {
        let oracle = two_pass(&row.to_vec(), 1e-6);
        assert!(out.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
        let mean = out.sum() / 8.0;
        assert!(mean.abs() < 1e-6);
    }
    let y = layer_norm(&g, &w, "ln", g.constant(ArrayD::from_elem(IxDyn(&[2, 8]), -3.0)), 1e-6)
        .unwrap()
        .value();
    assert!(y.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn bilinear_resize_oracles() {
    let g = Graph::<f64>::inference();
    let x = random(&[2, 5, 7], 7);
    assert_eq!(*g.constant(x.clone()).resize_bilinear(5, 7).value(), x);
    let c = g
        .constant(ArrayD::from_elem(IxDyn(&[1, 3, 4]), 0.3))
        .resize_bilinear(7, 9)
        .value();
    assert!(c.iter().all(|v| (v - 0.3).abs() < 1e-15));

    // Rows [0, 0] and [1, 1]; align-corners-false sampling of a 2x2 grid at 4x4.
    let step = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let up = g.constant(step).resize_bilinear(4, 4).value();
    let expected_rows = [0.0, 0.25, 0.75, 1.0];
    for (i, e) in expected_rows.iter().enumerate() {
        for j in 0..4 {
            assert!((up[[i, j]] - e).abs() < 1e-15);
        }
    }
}

fn small_vit(input: usize, patch: usize, layers: usize) -> VitConfig {
    VitConfig {
        input_size: input,
        patch_size: patch,
        embed_dim: 8,
        num_layers: layers,
        num_heads: 2,
        mlp_ratio: 2,
        pre_norm: true,
    }
}

#[test]
fn vit_token_counts_and_determinism() {
    let cfg = small_vit(64, 8, 6);
    let mut w = ModelWeights::new();
    init_vit(&mut w, "vit", &cfg, 1);
    let image = random(&[3, 64, 64], 8);
    let g = Graph::<f64>::inference();
    let a = vit_encode(&g, &w, "vit", &cfg, g.constant(image.clone())).unwrap();
    assert_eq!(a.len(), 6);
    assert!(a.iter().all(|t| t.shape() == vec![65, 8]));
    let h = Graph::<f64>::inference();
    let b = vit_encode(&h, &w, "vit", &cfg, h.constant(image)).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| *x.value() == *y.value()));
    let wrong = g.constant(random(&[3, 32, 32], 9));
    assert!(vit_encode(&g, &w, "vit", &cfg, wrong).is_err());
}

#[test]
fn vit_b16_patch_geometry() {
    let b = VitConfig::vit_b16();
    assert_eq!(
        (b.input_size, b.patch_size, b.embed_dim, b.num_layers, b.num_heads),
        (224, 16, 768, 12, 12)
    );
    assert_eq!(b.num_patches(), 196);
    assert_eq!(b.num_tokens(), 197);
    b.validate().unwrap();

    // Full ViT-B geometry with a narrow embedding keeps the run cheap.
    let cfg = small_vit(224, 16, 6);
    let mut w = ModelWeights::new();
    init_vit(&mut w, "vit", &cfg, 2);
    let g = Graph::<f32>::inference();
    let img = g.constant(random(&[3, 224, 224], 10).mapv(|v| v as f32));
    let layers = vit_encode_layers(&g, &w, "vit", &cfg, img, 6).unwrap();
    assert_eq!(layers.len(), 6);
    assert!(layers.iter().all(|t| t.shape() == vec![197, 8]));

    let d = VitConfig::desk();
    assert_eq!(
        (
            d.input_size,
            d.patch_size,
            d.embed_dim,
            d.num_layers,
            d.num_heads,
            d.mlp_ratio
        ),
        (64, 8, 64, 8, 4, 4)
    );
    assert_eq!(d.num_patches(), 64);
}

#[test]
fn vit_config_invariants() {
    assert!(small_vit(64, 7, 6).validate().is_err());
    assert!(small_vit(64, 8, 5).validate().is_err());
    let mut c = small_vit(64, 8, 6);
    c.num_heads = 3;
    assert!(c.validate().is_err());
    assert!(VitConfig::preset("vit-b16").is_ok());
    assert!(VitConfig::preset("vit-h14").is_err());
}
