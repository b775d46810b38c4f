use super::*;
use crate::physics::{ifft2c_coils, rss, ComplexImage, MultiCoilKSpace};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use proptest::prelude::*;
use std::io::Write;

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn phantoms_are_deterministic_bounded_and_complex() {
    for family in Family::ALL {
        let spec = PhantomSpec::new(family, 64, 42);
        let a = generate_phantom(&spec);
        assert_eq!(a, generate_phantom(&spec));
        let mag = a.magnitude();
        assert!(mag.iter().all(|&m| (0.0..=1.0 + 1e-12).contains(&m)));
        assert!(mag.iter().any(|&m| m > 0.2));
        let phases: Vec<f64> = a.data().iter().filter(|v| v.norm() > 0.1).map(|v| v.arg()).collect();
        let spread = phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - phases.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread > 0.05, "family {family} phase spread {spread}");
        assert_ne!(a, generate_phantom(&PhantomSpec::new(family, 64, 43)));
    }
}

#[test]
fn families_differ_for_the_same_seed() {
    for seed in 0..5 {
        let a = generate_phantom(&PhantomSpec::new(Family::A, 64, seed)).magnitude();
        let b = generate_phantom(&PhantomSpec::new(Family::B, 64, seed)).magnitude();
        let c = generate_phantom(&PhantomSpec::new(Family::C, 64, seed)).magnitude();
        assert!(max_abs(&a, &b) > 0.1);
        assert!(max_abs(&a, &c) > 0.1);
        assert!(max_abs(&b, &c) > 0.1);
    }
}

/// Mean power in radial frequency bands of the centered spectrum.
fn radial_profile(family: Family, seeds: std::ops::Range<u64>) -> Vec<f64> {
    let bands = 8;
    let mut acc = vec![0.0; bands];
    for seed in seeds {
        let img = generate_phantom(&PhantomSpec::new(family, 64, seed));
        let k = crate::physics::fft2c(&ComplexImage::new(img.magnitude().mapv(|m| Complex64::new(m, 0.0))).unwrap());
        for ((r, c), v) in k.data().indexed_iter() {
            let d = ((r as f64 - 32.0).powi(2) + (c as f64 - 32.0).powi(2)).sqrt();
            let b = ((d / 32.0 * bands as f64) as usize).min(bands - 1);
            acc[b] += v.norm_sqr();
        }
    }
    let total: f64 = acc.iter().sum();
    acc.iter().map(|v| v / total).collect()
}

#[test]
fn families_have_distinct_radial_spectra() {
    let profiles: Vec<Vec<f64>> = Family::ALL.iter().map(|&f| radial_profile(f, 0..10)).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let dist: f64 = profiles[i]
                .iter()
                .zip(&profiles[j])
                .map(|(a, b)| (a.ln() - b.ln()).abs())
                .sum();
            assert!(dist > 0.5, "families {i} and {j}: {dist}");
        }
    }
}

#[test]
fn simulated_coils_are_normalized_and_distinct() {
    let s = simulate_coils(4, 32, 32).unwrap();
    assert!(s.normalization_error() < 1e-6);
    assert!(s.support().iter().all(|&v| v));
    for i in 0..4 {
        for j in i + 1..4 {
            let d: f64 = (&s.data().index_axis(Axis(0), i) - &s.data().index_axis(Axis(0), j))
                .iter()
                .map(|v| v.norm_sqr())
                .sum();
            assert!(d > 1e-3);
        }
    }
    let one = simulate_coils(1, 16, 16).unwrap();
    assert!(one.data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    assert!(simulate_coils(0, 8, 8).is_err());
}

#[test]
fn noiseless_synthesis_round_trips_through_rss() {
    let x = generate_phantom(&PhantomSpec::new(Family::C, 32, 3));
    let s = simulate_coils(4, 32, 32).unwrap();
    let k = synthesize_kspace(&x, &s, 0.0, 0).unwrap();
    let r = rss(&ifft2c_coils(&k));
    assert!(max_abs(&r, &x.magnitude()) < 1e-9);
}

#[test]
fn noise_has_the_requested_variance() {
    let x = ComplexImage::zeros(50, 50);
    let s = simulate_coils(4, 50, 50).unwrap();
    let sigma = 0.01;
    let k = synthesize_kspace(&x, &s, sigma, 9).unwrap();
    let n = k.data().len() as f64;
    assert!(n >= 1e4);
    let var = k.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "{var}");
    let other = synthesize_kspace(&x, &s, sigma, 10).unwrap();
    assert_ne!(k, other);
    assert!(synthesize_kspace(&x, &s, -1.0, 0).is_err());
}

#[test]
fn manifest_split_sizes_and_determinism() {
    let fr = SplitFractions::new(0.7, 0.1, 0.2).unwrap();
    let m = build_manifest(&[(Family::A, 100)], fr, 5).unwrap();
    assert_eq!(
        (m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)),
        (70, 10, 20)
    );
    assert_eq!(m, build_manifest(&[(Family::A, 100)], fr, 5).unwrap());
    assert_ne!(m, build_manifest(&[(Family::A, 100)], fr, 6).unwrap());
    let ids: std::collections::BTreeSet<_> = m.entries.iter().map(|e| &e.id).collect();
    assert_eq!(ids.len(), 100);
    assert!(SplitFractions::new(0.7, 0.2, 0.2).is_err());
    assert!(SplitFractions::new(-0.1, 0.6, 0.5).is_err());

    let desk = build_manifest(&[(Family::A, 320)], SplitFractions::new(0.625, 0.125, 0.25).unwrap(), 0).unwrap();
    assert_eq!(
        (
            desk.count(Split::Train),
            desk.count(Split::Val),
            desk.count(Split::Test)
        ),
        (200, 40, 80)
    );

    let strat = build_manifest(&[(Family::B, 10), (Family::C, 20)], fr, 1).unwrap();
    let b_train = strat.split(Split::Train).filter(|e| e.family == Family::B).count();
    let c_train = strat.split(Split::Train).filter(|e| e.family == Family::C).count();
    assert_eq!((b_train, c_train), (7, 14));
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn f32_kspace(n: usize, h: usize, w: usize, vals: &[f32]) -> MultiCoilKSpace {
    let mut it = vals.iter().cycle();
    MultiCoilKSpace::new(Array3::from_shape_fn((n, h, w), |_| {
        Complex64::new(*it.next().unwrap() as f64, *it.next().unwrap() as f64)
    }))
    .unwrap()
}

#[test]
fn volume_round_trip_and_errors() {
    let dir = tmp();
    let path = dir.path().join("v.umrik");
    let k = f32_kspace(3, 4, 5, &[0.5, -1.25, 3.0e-7, 1.0e5, -0.0]);
    let mut meta = Metadata::new();
    meta.insert("family".into(), "B".into());
    meta.insert("seed".into(), "17".into());
    meta.insert("noise_std".into(), "0.002".into());
    write_volume(&path, &k, &meta).unwrap();
    let (back, meta_back) = read_volume(&path).unwrap();
    assert_eq!(back, k);
    assert_eq!(meta_back, meta);

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.umrik");
    std::fs::write(&cut, &bytes[..40]).unwrap();
    match read_volume(&cut) {
        Err(crate::Error::Format { offset, .. }) => assert_eq!(offset, 40),
        other => panic!("expected format error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&cut, &bad).unwrap();
    assert!(matches!(read_volume(&cut), Err(crate::Error::Format { offset: 0, .. })));
    let mut trailing = bytes;
    trailing.push(0);
    std::fs::write(&cut, &trailing).unwrap();
    assert!(matches!(read_volume(&cut), Err(crate::Error::Format { .. })));

    let mut evil = Metadata::new();
    evil.insert("a=b".into(), "x".into());
    assert!(write_volume(&path, &k, &evil).is_err());
}

/// Writes the documented layout byte by byte, as an external converter would.
fn converter_fixture(path: &std::path::Path, coils: u32, h: u32, w: u32, f64_samples: bool) {
    let mut f = std::fs::File::create(path).unwrap();
    f.write_all(b"UMRIK1").unwrap();
    for d in [coils, h, w] {
        f.write_all(&d.to_le_bytes()).unwrap();
    }
    f.write_all(&[if f64_samples { 2 } else { 1 }]).unwrap();
    for i in 0..coils * h * w {
        let (re, im) = (i as f64 * 0.5, -(i as f64));
        if f64_samples {
            f.write_all(&re.to_le_bytes()).unwrap();
            f.write_all(&im.to_le_bytes()).unwrap();
        } else {
            f.write_all(&(re as f32).to_le_bytes()).unwrap();
            f.write_all(&(im as f32).to_le_bytes()).unwrap();
        }
    }
    let meta = b"family=external\nsource=converter\n";
    f.write_all(&(meta.len() as u32).to_le_bytes()).unwrap();
    f.write_all(meta).unwrap();
}

#[test]
fn converter_layout_loads() {
    let dir = tmp();
    for wide in [false, true] {
        let path = dir.path().join(format!("ext{wide}.umrik"));
        converter_fixture(&path, 6, 3, 4, wide);
        let (k, meta) = read_volume(&path).unwrap();
        assert_eq!(k.dim(), (6, 3, 4));
        assert_eq!(k.data()[(1, 0, 0)], Complex64::new(6.0, -12.0));
        assert_eq!(meta["source"], "converter");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn volumes_round_trip_bitwise(
        n in 1usize..4, h in 1usize..6, w in 1usize..6,
        vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 2..64),
        seed in any::<u64>(),
    ) {
        let dir = tmp();
        let path = dir.path().join("p.umrik");
        let k = f32_kspace(n, h, w, &vals);
        let mut meta = Metadata::new();
        meta.insert("seed".into(), seed.to_string());
        write_volume(&path, &k, &meta).unwrap();
        let (back, m) = read_volume(&path).unwrap();
        prop_assert!(back.data().iter().zip(k.data()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
        prop_assert_eq!(m, meta);
    }
}
