//! Image quality metrics on real magnitude images and the SSIM training loss.

use ndarray::{Array2, ArrayD, Zip};

use crate::autograd::{box_valid_matrix, Graph, Var};
use crate::{Error, Real, Result};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config(format!(
                "SSIM window must be at least 2, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::config("SSIM constants must be positive"));
        }
        Ok(())
    }

    fn check(&self, shape: &[usize], data_range: f64) -> Result<()> {
        self.validate()?;
        if !(data_range > 0.0) || !data_range.is_finite() {
            return Err(Error::InvalidData(format!(
                "SSIM data range must be positive, got {data_range}"
            )));
        }
        if shape.len() != 2 || shape[0] < self.window || shape[1] < self.window {
            return Err(Error::shape(format!(
                "SSIM needs a 2D image of at least {w}x{w}, got {shape:?}",
                w = self.window
            )));
        }
        Ok(())
    }

    fn constants(&self, data_range: f64) -> (f64, f64, f64) {
        let np = (self.window * self.window) as f64;
        let c1 = (self.k1 * data_range).powi(2);
        let c2 = (self.k2 * data_range).powi(2);
        (c1, c2, np / (np - 1.0))
    }
}

fn same_shape(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::shape(format!(
            "image shapes differ: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

fn box_filter(x: &Array2<f64>, rows: &Array2<f64>, cols: &Array2<f64>) -> Array2<f64> {
    rows.dot(x).dot(&cols.t())
}

/// Mean SSIM over all valid uniform windows.
pub fn ssim_with(x: &Array2<f64>, y: &Array2<f64>, data_range: f64, params: &SsimParams) -> Result<f64> {
    same_shape(x, y)?;
    params.check(x.shape(), data_range)?;
    let (c1, c2, cov) = params.constants(data_range);
    let rows = box_valid_matrix::<f64>(x.nrows(), params.window);
    let cols = box_valid_matrix::<f64>(x.ncols(), params.window);
    let ux = box_filter(x, &rows, &cols);
    let uy = box_filter(y, &rows, &cols);
    let uxx = box_filter(&(x * x), &rows, &cols);
    let uyy = box_filter(&(y * y), &rows, &cols);
    let uxy = box_filter(&(x * y), &rows, &cols);
    let mut total = 0.0;
    Zip::from(&ux)
        .and(&uy)
        .and(&uxx)
        .and(&uyy)
        .and(&uxy)
        .for_each(|&mx, &my, &sxx, &syy, &sxy| {
            let vx = cov * (sxx - mx * mx);
            let vy = cov * (syy - my * my);
            let vxy = cov * (sxy - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
        });
    Ok(total / ux.len() as f64)
}

/// SSIM with the default 7×7 window and constants.
pub fn ssim(x: &Array2<f64>, y: &Array2<f64>, data_range: f64) -> Result<f64> {
    ssim_with(x, y, data_range, &SsimParams::default())
}

fn mse(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    Zip::from(x).and(y).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)) / x.len() as f64
}

/// `10 log10(max_val^2 / MSE)`; infinite when the images are identical.
pub fn psnr(x: &Array2<f64>, y: &Array2<f64>, max_val: f64) -> Result<f64> {
    same_shape(x, y)?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidData(format!("PSNR peak must be positive, got {max_val}")));
    }
    let e = mse(x, y);
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / e).log10()
    })
}

/// Replaces non-finite PSNR values by [`PSNR_CAP`].
pub fn cap_psnr(value: f64) -> f64 {
    if value.is_finite() {
        value.min(PSNR_CAP)
    } else {
        PSNR_CAP
    }
}

/// `||recon - target||^2 / ||target||^2`.
pub fn nmse(recon: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    same_shape(recon, target)?;
    let t2: f64 = target.iter().map(|v| v * v).sum();
    if t2 == 0.0 {
        return Err(Error::InvalidData("NMSE target has zero energy".into()));
    }
    let d2 = Zip::from(recon)
        .and(target)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(d2 / t2)
}

fn max_of(x: &Array2<f64>) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub ssim: f64,
    pub psnr: f64,
    pub nmse: f64,
}

impl SampleMetrics {
    /// All three metrics with the target maximum as data range and peak.
    pub fn evaluate(recon: &Array2<f64>, target: &Array2<f64>) -> Result<Self> {
        let peak = max_of(target);
        Ok(Self {
            ssim: ssim(recon, target, peak)?,
            psnr: psnr(recon, target, peak)?,
            nmse: nmse(recon, target)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-sample metrics and their aggregates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, m: SampleMetrics) {
        self.samples.push(m);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ssim(&self) -> MeanStd {
        MeanStd::of(self.samples.iter().map(|s| s.ssim))
    }

    /// Aggregated over capped per-sample values.
    pub fn psnr(&self) -> MeanStd {
        MeanStd::of(self.samples.iter().map(|s| cap_psnr(s.psnr)))
    }

    pub fn nmse(&self) -> MeanStd {
        MeanStd::of(self.samples.iter().map(|s| s.nmse))
    }
}

/// Differentiable `1 - SSIM(recon, target)` for `[H, W]` tensors; the data
/// range is the target maximum.
pub fn ssim_loss<'g, F: Real>(recon: Var<'g, F>, target: &Array2<f64>, params: &SsimParams) -> Result<Var<'g, F>> {
    let g: &'g Graph<F> = recon.graph();
    let shape = recon.shape();
    if shape != [target.nrows(), target.ncols()] {
        return Err(Error::shape(format!("recon {shape:?} vs target {:?}", target.dim())));
    }
    let range = max_of(target);
    params.check(&shape, range)?;
    let (c1, c2, cov) = params.constants(range);
    let rows = box_valid_matrix::<F>(shape[0], params.window);
    let cols = box_valid_matrix::<F>(shape[1], params.window);
    let filt = |v: Var<'g, F>| v.separable(rows.clone(), cols.clone());
    let filt_const = |a: &Array2<f64>| -> ArrayD<F> {
        let r = box_valid_matrix::<f64>(shape[0], params.window);
        let c = box_valid_matrix::<f64>(shape[1], params.window);
        r.dot(a).dot(&c.t()).mapv(F::lit).into_dyn()
    };

    let y = target.mapv(F::lit).into_dyn();
    let uy = filt_const(target);
    let uyy = filt_const(&(target * target));
    let vy = (&uyy - &(&uy * &uy)) * F::lit(cov);

    let x = recon;
    let ux = filt(x);
    let uxx = filt(x.square());
    let uxy = filt(x.mul_const(y));
    let vx = uxx.sub(ux.square()).scale(F::lit(cov));
    let vxy = uxy.sub(ux.mul_const(uy.clone())).scale(F::lit(cov));

    let num = ux
        .mul_const(uy.mapv(|v| v * F::lit(2.0)))
        .add_scalar(F::lit(c1))
        .mul(vxy.scale(F::lit(2.0)).add_scalar(F::lit(c2)));
    let den = ux
        .square()
        .add_const(uy.mapv(|v| v * v + F::lit(c1)))
        .mul(vx.add_const(vy.mapv(|v| v + F::lit(c2))));
    let s = num.div(den).mean();
    Ok(g.scalar(F::one()).sub(s))
}
