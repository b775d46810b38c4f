use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use umri::data::{Family, Split};
use umri::metrics::{MetricReport, SampleMetrics};
use umri::nn::{load_weights, ModelWeights};
use umri::physics::{apply_mask, make_equispaced_mask};
use umri::recon::{reconstruct, zero_filled, ReconConfig, Sample};

use crate::config::{format_acs, EvalCell, RunConfig};
use crate::dataset::{load_samples, read_manifest, select};
use crate::error::{CliError, Result};
use crate::output::OutputDir;
use crate::report::{write_eval_csv, EvalRow, RowKind, BASELINE_VARIANT};

pub const EVAL_FILE: &str = "eval.csv";

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
}

struct CellContext<'a> {
    variant: String,
    recon: &'a ReconConfig,
    weights: &'a ModelWeights,
}

fn cell_rows(ctx: &CellContext<'_>, cell: &EvalCell, samples: &[Sample]) -> Result<Vec<EvalRow>> {
    let width = samples[0].kspace.width();
    let mask = make_equispaced_mask(width, cell.acceleration, cell.acs)?;
    let scored = samples
        .par_iter()
        .map(|s| {
            let masked = apply_mask(&s.kspace, &mask)?;
            let model = reconstruct::<f32>(&masked, &mask, ctx.weights, ctx.recon)?;
            let model = SampleMetrics::evaluate(&model, &s.target)?;
            let baseline = SampleMetrics::evaluate(&zero_filled(&masked), &s.target)?;
            Ok((model, baseline))
        })
        .collect::<Result<Vec<_>>>()?;

    let row = |variant: &str, kind, sample: &str, m: [umri::metrics::MeanStd; 3], delta| EvalRow {
        variant: variant.to_string(),
        kind,
        cell: cell.label(),
        family: cell.family.to_string(),
        acceleration: cell.acceleration,
        acs: format_acs(&cell.acs),
        sample: sample.to_string(),
        ssim: m[0],
        psnr: m[1],
        nmse: m[2],
        delta,
    };
    let mut rows = Vec::with_capacity(samples.len() + 2);
    let (mut model, mut baseline) = (MetricReport::default(), MetricReport::default());
    for (s, (m, b)) in samples.iter().zip(&scored) {
        rows.push(row(
            &ctx.variant,
            RowKind::Sample,
            &s.id,
            EvalRow::sample_metrics(m),
            None,
        ));
        model.push(*m);
        baseline.push(*b);
    }
    let agg = EvalRow::aggregate_metrics(&model);
    let base = EvalRow::aggregate_metrics(&baseline);
    let delta = [
        agg[0].mean - base[0].mean,
        agg[1].mean - base[1].mean,
        agg[2].mean - base[2].mean,
    ];
    rows.push(row(&ctx.variant, RowKind::Aggregate, "", agg, Some(delta)));
    rows.push(row(BASELINE_VARIANT, RowKind::Baseline, "", base, None));
    Ok(rows)
}

/// Evaluates a checkpoint and the zero-filled baseline on every grid cell.
/// Cells run in parallel; rows are merged in grid order.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<EvalRow>> {
    let recon = cfg.model.recon_config()?;
    let weights = load_weights(checkpoint)?;
    let manifest = read_manifest(&cfg.data.dir)?;
    let mut families: Vec<Family> = cfg.eval.cells.iter().map(|c| c.family).collect();
    families.sort();
    families.dedup();
    let mut sets = BTreeMap::new();
    for family in families {
        let mut rows = select(&manifest, Some(family), Split::Test);
        if cfg.eval.limit > 0 {
            rows.truncate(cfg.eval.limit);
        }
        if rows.is_empty() {
            return Err(CliError::config(format!(
                "no test samples of family {family} in {}",
                cfg.data.dir.display()
            )));
        }
        sets.insert(family, load_samples(&cfg.data.dir, &rows)?);
    }
    let ctx = CellContext {
        variant: cfg.model.variant.to_string(),
        recon: &recon,
        weights: &weights,
    };
    let per_cell = cfg
        .eval
        .cells
        .par_iter()
        .map(|cell| cell_rows(&ctx, cell, &sets[&cell.family]))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Runs [`evaluate`] and writes `eval.csv` and `run.cfg` into `req.out`.
pub fn eval(cfg: &RunConfig, req: &EvalRequest) -> Result<Vec<EvalRow>> {
    let rows = evaluate(cfg, &req.checkpoint)?;
    let out = OutputDir::create(&req.out)?;
    write_eval_csv(&out.join(EVAL_FILE), &rows)?;
    cfg.write_to_dir(out.path())?;
    out.finish()?;
    Ok(rows)
}
