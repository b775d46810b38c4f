use std::path::Path;

use ini::Ini;
use umri::data::Split;
use umri::nn::{load_weights, save_weights, ModelWeights};
use umri::recon::{EpochRecord, Schedule, TrainProgress, Trainer};

use crate::config::{RunConfig, CONFIG_FILE};
use crate::dataset::{load_samples, read_manifest, select};
use crate::error::{CliError, Result};
use crate::output::{tmp_path, write_atomic, OutputDir};
use crate::report::{parse_train_log_record, train_log_record, TRAIN_LOG_HEADER};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const LAST_WEIGHTS: &str = "last.umriw";
pub const LAST_OPTIMIZER: &str = "last_optimizer.umriw";
pub const BEST_WEIGHTS: &str = "best.umriw";
pub const STATE_FILE: &str = "state.ini";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop after this many epochs in this invocation; the run stays resumable.
    pub max_epochs: Option<usize>,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub log: Vec<EpochRecord>,
    pub best_val_ssim: f64,
    pub best_epoch: Option<usize>,
    pub finished: bool,
}

fn save_atomic(w: &ModelWeights, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    save_weights(w, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(TRAIN_LOG_HEADER).map_err(|e| CliError::csv(path, e))?;
    for r in log {
        out.write_record(train_log_record(r))
            .map_err(|e| CliError::csv(path, e))?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header = reader.headers().map_err(|e| CliError::csv(path, e))?;
    if header.iter().ne(TRAIN_LOG_HEADER) {
        return Err(CliError::malformed(path, format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|rec| parse_train_log_record(path, &rec.map_err(|e| CliError::csv(path, e))?))
        .collect()
}

fn write_state(path: &Path, p: &TrainProgress) -> Result<()> {
    let mut ini = Ini::new();
    ini.with_section(Some("progress"))
        .set("next_epoch", p.next_epoch.to_string())
        .set("best_val_ssim", p.best_val_ssim.to_string())
        .set("best_epoch", p.best_epoch.map(|e| e.to_string()).unwrap_or_default())
        .set("stale_epochs", p.stale_epochs.to_string())
        .set("stopped", p.stopped.to_string());
    let mut buf = Vec::new();
    ini.write_to(&mut buf).map_err(|e| CliError::io(path, e))?;
    write_atomic(path, &buf)
}

fn read_state(path: &Path) -> Result<TrainProgress> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let ini = Ini::load_from_str(&text).map_err(|e| CliError::malformed(path, e.to_string()))?;
    let sec = ini
        .section(Some("progress"))
        .ok_or_else(|| CliError::malformed(path, "missing [progress]"))?;
    let field = |k: &str| {
        sec.get(k)
            .ok_or_else(|| CliError::malformed(path, format!("missing {k}")))
    };
    let bad = |k: &str| CliError::malformed(path, format!("bad {k}"));
    let best_epoch = field("best_epoch")?;
    Ok(TrainProgress {
        next_epoch: field("next_epoch")?.parse().map_err(|_| bad("next_epoch"))?,
        best_val_ssim: field("best_val_ssim")?.parse().map_err(|_| bad("best_val_ssim"))?,
        best_epoch: if best_epoch.is_empty() {
            None
        } else {
            Some(best_epoch.parse().map_err(|_| bad("best_epoch"))?)
        },
        stale_epochs: field("stale_epochs")?.parse().map_err(|_| bad("stale_epochs"))?,
        stopped: field("stopped")?.parse().map_err(|_| bad("stopped"))?,
        best_weights: None,
    })
}

fn save_epoch(out: &OutputDir, log: &[EpochRecord], w: &ModelWeights, p: &TrainProgress, quiet: bool) -> Result<()> {
    let record = log.last().expect("record pushed before saving");
    if !quiet {
        eprintln!(
            "epoch {} loss {:.6} val_ssim {:.6} lr {:e}{}",
            record.epoch,
            record.train_loss,
            record.val_ssim,
            record.lr,
            if record.improved { " *" } else { "" }
        );
    }
    write_log(&out.join(TRAIN_LOG), log)?;
    if record.improved {
        save_atomic(w, &out.join(BEST_WEIGHTS))?;
    }
    save_atomic(w, &out.join(LAST_WEIGHTS))?;
    save_atomic(&w.optimizer_state(), &out.join(LAST_OPTIMIZER))?;
    write_state(&out.join(STATE_FILE), p)
}

struct Checkpoint {
    weights: ModelWeights,
    progress: TrainProgress,
    log: Vec<EpochRecord>,
}

fn restore(cfg: &RunConfig, out: &OutputDir) -> Result<Checkpoint> {
    let stored = out.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&stored).map_err(|e| CliError::io(&stored, e))?;
    if text != cfg.to_ini_string() {
        return Err(CliError::config(format!(
            "cannot resume: {} differs from the current configuration",
            stored.display()
        )));
    }
    let mut progress = read_state(&out.join(STATE_FILE))?;
    let mut weights = load_weights(&out.join(LAST_WEIGHTS))?;
    weights.restore_optimizer_state(&load_weights(&out.join(LAST_OPTIMIZER))?)?;
    if progress.best_epoch.is_some() {
        progress.best_weights = Some(load_weights(&out.join(BEST_WEIGHTS))?);
    }
    let mut log = read_log(&out.join(TRAIN_LOG))?;
    log.retain(|r| r.epoch < progress.next_epoch);
    Ok(Checkpoint { weights, progress, log })
}

fn fresh(cfg: &RunConfig) -> Result<Checkpoint> {
    let recon = cfg.model.recon_config()?;
    let mut weights = recon.init_weights(cfg.schedule.seed);
    if let Some(path) = &cfg.model.encoder_weights {
        weights.load_matching(path)?;
    }
    Ok(Checkpoint {
        weights,
        progress: TrainProgress::default(),
        log: Vec::new(),
    })
}

/// Trains on the train split of `data.dir`, checkpointing after every epoch
/// into `run.out`. The `.incomplete` marker stays until the schedule is done.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let recon = cfg.model.recon_config()?;
    let mask = cfg.mask.build(cfg.data.size)?;
    let rows = read_manifest(&cfg.data.dir)?;
    let train_set = load_samples(&cfg.data.dir, &select(&rows, None, Split::Train))?;
    let val_set = load_samples(&cfg.data.dir, &select(&rows, None, Split::Val))?;
    if let Some(s) = train_set
        .iter()
        .chain(&val_set)
        .find(|s| s.kspace.width() != cfg.data.size)
    {
        return Err(CliError::config(format!(
            "sample {} is {} wide but data.size is {}",
            s.id,
            s.kspace.width(),
            cfg.data.size
        )));
    }

    let out = OutputDir::create(&cfg.run.out)?;
    let Checkpoint {
        mut weights,
        mut progress,
        mut log,
    } = if opts.resume { restore(cfg, &out)? } else { fresh(cfg)? };
    cfg.write_to_dir(out.path())?;

    let schedule = Schedule {
        epochs: opts.max_epochs.map_or(cfg.schedule.epochs, |n| {
            cfg.schedule.epochs.min(progress.next_epoch + n)
        }),
        ..cfg.schedule.clone()
    };
    let mut trainer = Trainer::new(&recon, &schedule, &mask, &train_set, &val_set);
    trainer.fast = !cfg.run.deterministic;
    let mut failure = None;
    let result = trainer.run(&mut weights, &mut progress, |record, w, p| {
        log.push(record.clone());
        save_epoch(&out, &log, w, p, opts.quiet).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            umri::Error::Contract(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;

    let finished = progress.finished(&cfg.schedule);
    if finished {
        out.finish()?;
    }
    Ok(TrainSummary {
        log,
        best_val_ssim: progress.best_val_ssim,
        best_epoch: progress.best_epoch,
        finished,
    })
}
