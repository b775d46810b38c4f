//! CSV schemas of the training log and evaluation reports.
//!
//! Every row starts with `schema_version`. Floats are written in Rust's
//! shortest round-trip form, so identical values give identical bytes.

use std::path::Path;

use umri::metrics::{cap_psnr, MeanStd, MetricReport, SampleMetrics};
use umri::recon::EpochRecord;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAIN_LOG_HEADER: [&str; 6] = ["schema_version", "epoch", "train_loss", "val_ssim", "lr", "improved"];

pub const EVAL_HEADER: [&str; 17] = [
    "schema_version",
    "variant",
    "kind",
    "cell",
    "family",
    "R",
    "acs",
    "sample",
    "ssim",
    "ssim_std",
    "psnr",
    "psnr_std",
    "nmse",
    "nmse_std",
    "delta_ssim",
    "delta_psnr",
    "delta_nmse",
];

pub const BASELINE_VARIANT: &str = "zero-filled";

pub fn train_log_record(r: &EpochRecord) -> [String; 6] {
    [
        SCHEMA_VERSION.to_string(),
        r.epoch.to_string(),
        r.train_loss.to_string(),
        r.val_ssim.to_string(),
        r.lr.to_string(),
        r.improved.to_string(),
    ]
}

pub fn parse_train_log_record(path: &Path, rec: &csv::StringRecord) -> Result<EpochRecord> {
    let bad = |what: &str| CliError::malformed(path, format!("bad {what} in {rec:?}"));
    if rec.len() != TRAIN_LOG_HEADER.len() || rec[0] != *SCHEMA_VERSION.to_string() {
        return Err(bad("row"));
    }
    Ok(EpochRecord {
        epoch: rec[1].parse().map_err(|_| bad("epoch"))?,
        train_loss: rec[2].parse().map_err(|_| bad("train_loss"))?,
        val_ssim: rec[3].parse().map_err(|_| bad("val_ssim"))?,
        lr: rec[4].parse().map_err(|_| bad("lr"))?,
        improved: rec[5].parse().map_err(|_| bad("improved"))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Sample,
    Aggregate,
    Baseline,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Sample => "sample",
            RowKind::Aggregate => "aggregate",
            RowKind::Baseline => "baseline",
        }
    }
}

/// One evaluation CSV row. Sample rows leave the std and delta columns empty;
/// baseline rows leave the deltas empty.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub kind: RowKind,
    pub cell: String,
    pub family: String,
    pub acceleration: usize,
    pub acs: String,
    pub sample: String,
    pub ssim: MeanStd,
    pub psnr: MeanStd,
    pub nmse: MeanStd,
    pub delta: Option<[f64; 3]>,
}

impl EvalRow {
    pub fn sample_metrics(m: &SampleMetrics) -> [MeanStd; 3] {
        [
            MeanStd { mean: m.ssim, std: 0.0 },
            MeanStd {
                mean: cap_psnr(m.psnr),
                std: 0.0,
            },
            MeanStd { mean: m.nmse, std: 0.0 },
        ]
    }

    pub fn aggregate_metrics(r: &MetricReport) -> [MeanStd; 3] {
        [r.ssim(), r.psnr(), r.nmse()]
    }

    pub fn record(&self) -> Vec<String> {
        let aggregate = self.kind != RowKind::Sample;
        let std = |m: &MeanStd| if aggregate { m.std.to_string() } else { String::new() };
        let mut out = vec![
            SCHEMA_VERSION.to_string(),
            self.variant.clone(),
            self.kind.as_str().to_string(),
            self.cell.clone(),
            self.family.clone(),
            self.acceleration.to_string(),
            self.acs.clone(),
            self.sample.clone(),
            self.ssim.mean.to_string(),
            std(&self.ssim),
            self.psnr.mean.to_string(),
            std(&self.psnr),
            self.nmse.mean.to_string(),
            std(&self.nmse),
        ];
        match self.delta {
            Some(d) => out.extend(d.iter().map(f64::to_string)),
            None => out.extend(std::iter::repeat_n(String::new(), 3)),
        }
        out
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    out.write_record(EVAL_HEADER).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        out.write_record(row.record()).map_err(|e| CliError::csv(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}
