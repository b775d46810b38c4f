use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{forward, reconstruct, ReconConfig};
use crate::autograd::Graph;
use crate::metrics::{ssim, ssim_loss, SsimParams};
use crate::nn::{grad_map, Adam, GradMap, ModelWeights};
use crate::physics::{apply_mask, ifft2c_coils, rss, MultiCoilKSpace, SamplingMask};
use crate::{Error, Result};

/// A fully sampled acquisition and its coil-combined reference.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub kspace: MultiCoilKSpace,
    pub target: Array2<f64>,
}

impl Sample {
    /// The target is the RSS of the fully sampled coil images.
    pub fn new(id: impl Into<String>, kspace: MultiCoilKSpace) -> Self {
        let target = rss(&ifft2c_coils(&kspace));
        Self {
            id: id.into(),
            kspace,
            target,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_epoch` epochs.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay_epoch: 40,
            decay_factor: 0.1,
            epochs: 50,
            patience: 5,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.decay_epoch == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("decay epoch, batch size and patience must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }

    /// Learning rate of 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powi((epoch / self.decay_epoch) as i32)
    }

    pub(crate) fn order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        idx.shuffle(&mut rng);
        idx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ssim: f64,
    pub lr: f64,
    pub improved: bool,
}

/// Resumable training state.
#[derive(Clone, Debug)]
pub struct TrainProgress {
    pub next_epoch: usize,
    pub best_val_ssim: f64,
    pub best_epoch: Option<usize>,
    pub stale_epochs: usize,
    pub stopped: bool,
    pub best_weights: Option<ModelWeights>,
}

impl Default for TrainProgress {
    fn default() -> Self {
        Self {
            next_epoch: 0,
            best_val_ssim: f64::NEG_INFINITY,
            best_epoch: None,
            stale_epochs: 0,
            stopped: false,
            best_weights: None,
        }
    }
}

impl TrainProgress {
    pub fn finished(&self, schedule: &Schedule) -> bool {
        self.stopped || self.next_epoch >= schedule.epochs
    }

    /// Records the validation score of `epoch`; returns whether it improved
    /// on the best so far. After `patience` consecutive non-improving epochs
    /// the run is marked stopped.
    pub fn observe(&mut self, epoch: usize, val_ssim: f64, patience: usize, w: &ModelWeights) -> bool {
        let improved = val_ssim > self.best_val_ssim;
        if improved {
            self.best_val_ssim = val_ssim;
            self.best_epoch = Some(epoch);
            self.stale_epochs = 0;
            self.best_weights = Some(w.clone());
        } else {
            self.stale_epochs += 1;
            self.stopped = self.stale_epochs >= patience;
        }
        self.next_epoch = epoch + 1;
        improved
    }
}

fn merge((la, mut ga): (f64, GradMap), (lb, gb): (f64, GradMap)) -> (f64, GradMap) {
    for (path, gv) in gb {
        match ga.get_mut(&path) {
            Some(acc) => *acc += &gv,
            None => {
                ga.insert(path, gv);
            }
        }
    }
    (la + lb, ga)
}

/// Mini-batch Adam on `1 - SSIM` with step decay and early stopping on the
/// validation SSIM.
pub struct Trainer<'a> {
    pub cfg: &'a ReconConfig,
    pub schedule: &'a Schedule,
    pub mask: &'a SamplingMask,
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub ssim: SsimParams,
    /// Sums batch gradients with a parallel tree reduction whose order may
    /// vary between runs, instead of sequentially in batch order.
    pub fast: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &'a ReconConfig,
        schedule: &'a Schedule,
        mask: &'a SamplingMask,
        train: &'a [Sample],
        val: &'a [Sample],
    ) -> Self {
        Self {
            cfg,
            schedule,
            mask,
            train,
            val,
            ssim: SsimParams::default(),
            fast: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.schedule.validate()?;
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::InvalidData(
                "training and validation sets must be nonempty".into(),
            ));
        }
        Ok(())
    }

    /// Loss and parameter gradients of one sample, in single precision.
    pub fn sample_gradient(&self, w: &ModelWeights, sample: &Sample) -> Result<(f64, GradMap)> {
        let masked = apply_mask(&sample.kspace, self.mask)?;
        let g = Graph::<f32>::new();
        let recon = forward(&g, w, self.cfg, &masked, self.mask)?;
        let loss = ssim_loss(recon, &sample.target, &self.ssim)?;
        let value = loss.item() as f64;
        if !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss on sample '{}'", sample.id)));
        }
        let grads = grad_map(&g.backward(loss)?);
        if let Some((path, _)) = grads.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Divergence(format!(
                "non-finite gradient for '{path}' on sample '{}'",
                sample.id
            )));
        }
        Ok((value, grads))
    }

    /// Mean SSIM of single-precision reconstructions over `samples`.
    pub fn evaluate(&self, w: &ModelWeights, samples: &[Sample]) -> Result<f64> {
        let scores = samples
            .par_iter()
            .map(|s| {
                let masked = apply_mask(&s.kspace, self.mask)?;
                let recon = reconstruct::<f32>(&masked, self.mask, w, self.cfg)?;
                let peak = s.target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ssim(&recon, &s.target, peak)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// One pass over the shuffled training set; returns the mean loss.
    pub fn train_epoch(&self, w: &mut ModelWeights, epoch: usize) -> Result<f64> {
        let adam = Adam::with_lr(self.schedule.lr_at(epoch));
        let order = self.schedule.order(self.train.len(), epoch);
        let mut total = 0.0;
        for batch in order.chunks(self.schedule.batch_size) {
            let (loss, mut summed) = if self.fast {
                batch
                    .par_iter()
                    .map(|&i| self.sample_gradient(w, &self.train[i]))
                    .try_reduce(|| (0.0, GradMap::new()), |a, b| Ok(merge(a, b)))?
            } else {
                batch
                    .par_iter()
                    .map(|&i| self.sample_gradient(w, &self.train[i]))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold((0.0, GradMap::new()), merge)
            };
            total += loss;
            let scale = 1.0 / batch.len() as f64;
            summed.values_mut().for_each(|g: &mut ArrayD<f64>| *g *= scale);
            adam.step(w, &summed);
        }
        Ok(total / self.train.len() as f64)
    }

    /// Trains until the epoch budget is spent or validation SSIM has not
    /// improved for `patience` consecutive epochs. `on_epoch` sees every
    /// record together with the current weights and progress.
    pub fn run(
        &self,
        w: &mut ModelWeights,
        progress: &mut TrainProgress,
        mut on_epoch: impl FnMut(&EpochRecord, &ModelWeights, &TrainProgress) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        self.validate()?;
        let mut log = Vec::new();
        while !progress.finished(self.schedule) {
            let epoch = progress.next_epoch;
            let train_loss = self.train_epoch(w, epoch)?;
            let val_ssim = self.evaluate(w, self.val)?;
            if !val_ssim.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite validation SSIM after epoch {epoch}"
                )));
            }
            let improved = progress.observe(epoch, val_ssim, self.schedule.patience, w);
            let record = EpochRecord {
                epoch,
                train_loss,
                val_ssim,
                lr: self.schedule.lr_at(epoch),
                improved,
            };
            on_epoch(&record, w, progress)?;
            log.push(record);
        }
        Ok(log)
    }
}
