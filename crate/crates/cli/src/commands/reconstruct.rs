use std::path::{Path, PathBuf};

use ndarray::Array2;
use umri::data::read_volume;
use umri::metrics::{cap_psnr, SampleMetrics};
use umri::nn::load_weights;
use umri::physics::{apply_mask, make_equispaced_mask, AcsSpec};
use umri::recon::{reconstruct as run_model, zero_filled, Sample};

use crate::config::RunConfig;
use crate::error::Result;
use crate::output::{pgm_bytes, raw_f32_bytes, write_atomic, OutputDir};

#[derive(Clone, Debug)]
pub struct ReconstructRequest {
    pub checkpoint: PathBuf,
    pub volume: PathBuf,
    pub acceleration: usize,
    pub acs: AcsSpec,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct ReconstructOutput {
    pub image: Array2<f64>,
    pub metrics: SampleMetrics,
    pub pgm: PathBuf,
    pub raw: PathBuf,
}

impl ReconstructOutput {
    pub fn metric_line(&self) -> String {
        format!(
            "ssim={:.6} psnr={:.4} nmse={:.6e}",
            self.metrics.ssim,
            cap_psnr(self.metrics.psnr),
            self.metrics.nmse
        )
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recon".into())
}

/// Undersamples a fully sampled volume, reconstructs it and writes
/// `<stem>.pgm` and `<stem>.f32` into the output directory. A mask that keeps
/// every column needs no model and returns the coil-combined measurement.
pub fn reconstruct(cfg: &RunConfig, req: &ReconstructRequest) -> Result<ReconstructOutput> {
    let recon_cfg = cfg.model.recon_config()?;
    let weights = load_weights(&req.checkpoint)?;
    let (kspace, _) = read_volume(&req.volume)?;
    let mask = make_equispaced_mask(kspace.width(), req.acceleration, req.acs)?;
    let sample = Sample::new(stem(&req.volume), kspace);
    let masked = apply_mask(&sample.kspace, &mask)?;
    let image = if mask.sampled_count() == mask.width() {
        zero_filled(&masked)
    } else {
        run_model::<f32>(&masked, &mask, &weights, &recon_cfg)?
    };
    let metrics = SampleMetrics::evaluate(&image, &sample.target)?;

    let out = OutputDir::create(&req.out)?;
    let pgm = out.join(format!("{}.pgm", sample.id));
    let raw = out.join(format!("{}.f32", sample.id));
    write_atomic(&pgm, &pgm_bytes(&image))?;
    write_atomic(&raw, &raw_f32_bytes(&image))?;
    cfg.write_to_dir(out.path())?;
    out.finish()?;
    Ok(ReconstructOutput {
        image,
        metrics,
        pgm,
        raw,
    })
}
