use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::physics::ComplexImage;
use crate::{Error, Result};

/// Anatomy families: A is in-distribution, B and C are held out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Stacked ellipses around an annular ventricle.
    A,
    /// Oblique layered bands with a wedge.
    B,
    /// Concentric shells with interior blobs.
    C,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::A, Family::B, Family::C];

    pub fn tag(self) -> u64 {
        match self {
            Family::A => 0xA,
            Family::B => 0xB,
            Family::C => 0xC,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::A => "A",
            Family::B => "B",
            Family::C => "C",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            "C" | "c" => Ok(Family::C),
            other => Err(Error::config(format!("unknown phantom family '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Bound on the phase gradient magnitude, radians per unit of normalized
    /// coordinate (the image spans `[-1, 1]`).
    pub max_phase_slope: f64,
}

impl PhantomSpec {
    pub fn new(family: Family, size: usize, seed: u64) -> Self {
        Self {
            family,
            height: size,
            width: size,
            seed,
            max_phase_slope: 1.5,
        }
    }
}

struct Canvas {
    h: usize,
    w: usize,
    img: Array2<f64>,
}

impl Canvas {
    fn coords(&self, r: usize, c: usize) -> (f64, f64) {
        (
            (c as f64 + 0.5) / self.w as f64 * 2.0 - 1.0,
            (r as f64 + 0.5) / self.h as f64 * 2.0 - 1.0,
        )
    }

    fn paint(&mut self, f: impl Fn(f64, f64, f64) -> f64) {
        for r in 0..self.h {
            for c in 0..self.w {
                let (x, y) = self.coords(r, c);
                let v = self.img[(r, c)];
                self.img[(r, c)] = f(x, y, v);
            }
        }
    }
}

/// Squared normalized radius of a rotated ellipse.
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    (u / a).powi(2) + (v / b).powi(2)
}

/// Indicator with a one-pixel-wide linear ramp at the boundary `q = 1`.
fn soft_inside(q: f64, edge: f64) -> f64 {
    ((1.0 - q) / edge + 0.5).clamp(0.0, 1.0)
}

fn family_a(cv: &mut Canvas, rng: &mut ChaCha8Rng, edge: f64) {
    let body_a = rng.random_range(0.70..0.85);
    let body_b = rng.random_range(0.55..0.75);
    let body_t = rng.random_range(-0.3..0.3);
    let body_level = rng.random_range(0.35..0.5);
    cv.paint(|x, y, _| body_level * soft_inside(ellipse(x, y, 0.0, 0.0, body_a, body_b, body_t), edge));
    for _ in 0..rng.random_range(3..6) {
        let (cx, cy) = (rng.random_range(-0.45..0.45), rng.random_range(-0.35..0.35));
        let (a, b) = (rng.random_range(0.08..0.25), rng.random_range(0.06..0.2));
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let level = rng.random_range(0.1..0.7);
        cv.paint(|x, y, v| {
            let m = soft_inside(ellipse(x, y, cx, cy, a, b, t), edge);
            v * (1.0 - m) + level * m
        });
    }
    let (cx, cy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let outer = rng.random_range(0.22..0.32);
    let inner = outer * rng.random_range(0.55..0.75);
    let (wall, pool) = (rng.random_range(0.55..0.75), rng.random_range(0.85..1.0));
    cv.paint(|x, y, v| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let ring = soft_inside(d / outer * (d / outer), edge);
        let core = soft_inside(d / inner * (d / inner), edge);
        let v = v * (1.0 - ring) + wall * ring;
        v * (1.0 - core) + pool * core
    });
}

fn family_b(cv: &mut Canvas, rng: &mut ChaCha8Rng, edge: f64) {
    let angle = rng.random_range(0.3..1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (s, c) = f64::sin_cos(angle);
    let bands = rng.random_range(4..7);
    let levels: Vec<f64> = (0..bands).map(|_| rng.random_range(0.15..0.95)).collect();
    let width = rng.random_range(0.75..0.9);
    let height = rng.random_range(0.75..0.9);
    cv.paint(|x, y, _| {
        let inside = soft_inside((x / width).powi(4) + (y / height).powi(4), edge);
        let t = (x * c + y * s + 1.5) / 3.0;
        let idx = ((t * bands as f64).floor().max(0.0) as usize).min(bands - 1);
        inside * levels[idx]
    });
    let apex = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let half = rng.random_range(0.2..0.45);
    let reach = rng.random_range(0.35..0.6);
    let level = rng.random_range(0.0..0.3);
    cv.paint(|x, y, v| {
        let (dx, dy) = (x - apex.0, y - apex.1);
        let r = (dx * dx + dy * dy).sqrt();
        let mut off = (dy.atan2(dx) - dir).rem_euclid(std::f64::consts::TAU);
        if off > std::f64::consts::PI {
            off = std::f64::consts::TAU - off;
        }
        if v <= 0.0 {
            return v;
        }
        let inside = soft_inside((off / half).max(r / reach), edge);
        v * (1.0 - inside) + level * inside
    });
}

fn family_c(cv: &mut Canvas, rng: &mut ChaCha8Rng, edge: f64) {
    let a = rng.random_range(0.7..0.85);
    let b = rng.random_range(0.8..0.92);
    let shells = rng.random_range(3..5);
    let mut levels = Vec::with_capacity(shells);
    for k in 0..shells {
        levels.push(if k % 2 == 0 {
            rng.random_range(0.7..1.0)
        } else {
            rng.random_range(0.2..0.45)
        });
    }
    cv.paint(|x, y, _| {
        let q = ellipse(x, y, 0.0, 0.0, a, b, 0.0).sqrt();
        let mut v = 0.0;
        for (k, &level) in levels.iter().enumerate() {
            let scale = 1.0 - 0.12 * k as f64;
            let m = soft_inside((q / scale).powi(2), edge);
            v = v * (1.0 - m) + level * m;
        }
        v
    });
    let interior = 1.0 - 0.12 * shells as f64;
    for _ in 0..rng.random_range(3..7) {
        let r = rng.random_range(0.0..interior * 0.8);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let (cx, cy) = (r * a * t.cos(), r * b * t.sin());
        let sigma = rng.random_range(0.04..0.1);
        let amp = rng.random_range(-0.3..0.4);
        cv.paint(|x, y, v| {
            if v <= 0.0 {
                return v;
            }
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            (v + amp * (-d2 / (2.0 * sigma * sigma)).exp()).clamp(0.0, 1.0)
        });
    }
}

/// Deterministic complex phantom with magnitude in `[0, 1]` and a smooth
/// quadratic phase.
pub fn generate_phantom(spec: &PhantomSpec) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (spec.family.tag() << 56));
    let mut cv = Canvas {
        h: spec.height.max(1),
        w: spec.width.max(1),
        img: Array2::zeros((spec.height.max(1), spec.width.max(1))),
    };
    let edge = 2.0 / cv.h.min(cv.w) as f64;
    match spec.family {
        Family::A => family_a(&mut cv, &mut rng, edge),
        Family::B => family_b(&mut cv, &mut rng, edge),
        Family::C => family_c(&mut cv, &mut rng, edge),
    }
    // slowly varying intensity modulation
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    cv.paint(|x, y, v| (v * (1.0 + gx * x + gy * y)).clamp(0.0, 1.0));

    // smooth quadratic phase; coefficients scale with the slope bound
    let slope = spec.max_phase_slope;
    let g = (
        rng.random_range(-1.0..1.0) * slope * 0.5,
        rng.random_range(-1.0..1.0) * slope * 0.5,
    );
    let curv = slope * 0.5 / std::f64::consts::SQRT_2;
    let (pxx, pyy, pxy) = (
        rng.random_range(-1.0..1.0) * curv / 2.0,
        rng.random_range(-1.0..1.0) * curv / 2.0,
        rng.random_range(-1.0..1.0) * curv / 2.0,
    );
    let offset = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut data = Array2::<Complex64>::zeros(cv.img.raw_dim());
    for r in 0..cv.h {
        for c in 0..cv.w {
            let (x, y) = cv.coords(r, c);
            let phase = offset + g.0 * x + g.1 * y + 0.5 * (pxx * x * x + pyy * y * y) + pxy * x * y;
            data[(r, c)] = Complex64::from_polar(cv.img[(r, c)], phase);
        }
    }
    ComplexImage::new(data).expect("finite phantom")
}
