//! Minibatch training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::layers::{Batch, Model, ModelSpec, WeightMode};
use crate::optim::{adam_step_in_place, AdamConfig, AdamState};
use crate::pileup::{encode, split, Dataset};
use crate::rng::{self, purpose};
use crate::variational::{elbo_minibatch, GaussianPrior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub prior_sigma: f64,
    pub train_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 42,
            prior_sigma: 1.0,
            train_fraction: 0.8,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie in (0, 1)");
        }
        if !(self.prior_sigma > 0.0) {
            return bad("prior_sigma", "must be positive");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        Ok(())
    }
}

/// Per-epoch means over minibatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    pub train_accuracy: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,nll,kl,total,train_accuracy\n");
    for e in log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.nll, e.kl, e.total, e.train_accuracy
        ));
    }
    s
}

/// The train/test partition every command derives from `seed`.
pub fn train_test_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split(ds, train_fraction, &mut rng::stream(seed, purpose::SPLIT, 0))
}

/// Encodes examples `idx` of `ds` into a time-major batch.
pub fn make_batch(ds: &Dataset, idx: &[usize]) -> Result<Batch> {
    let xs: Vec<_> = idx.iter().map(|&i| encode(&ds.examples[i].matrix)).collect();
    let refs: Vec<_> = xs.iter().collect();
    let labels: Vec<u8> = idx.iter().map(|&i| ds.examples[i].label).collect();
    Batch::from_sequences(&refs, &labels)
}

/// Trains a fresh model of shape `spec` on `train`.
///
/// Standard heads minimize the batch cross-entropy; variational heads the
/// minibatch negative ELBO with one Flipout draw per step and KL weight
/// `1 / M`. Epoch `e` shuffles with stream `(seed, SHUFFLE, e)` and draws
/// weight noise from `(seed, TRAIN_NOISE, e)`.
pub fn train_model(
    spec: ModelSpec,
    train: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model, Vec<EpochLog>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    if train.depth != spec.depth || train.width != spec.width {
        return Err(Error::dim(format!(
            "dataset is {}x{}, model expects {}x{}",
            train.depth, train.width, spec.depth, spec.width
        )));
    }
    let prior = GaussianPrior::new(cfg.prior_sigma)?;
    let mut model = Model::init(spec, &mut rng::stream(cfg.seed, purpose::INIT, 0))?;
    let mut state = AdamState::new(&model.params, cfg.adam);
    let num_batches = train.len().div_ceil(cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, purpose::SHUFFLE, epoch as u64));
        let mut noise = rng::stream(cfg.seed, purpose::TRAIN_NOISE, epoch as u64);
        let (mut nll, mut kl, mut total) = (0.0, 0.0, 0.0);
        let mut correct = 0usize;

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = make_batch(train, idx)?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mut mode = if model.spec.head.is_variational() {
                WeightMode::Flipout(&mut noise)
            } else {
                WeightMode::Mean
            };
            let obj =
                elbo_minibatch(&mut tape, &model, &bound, &batch, num_batches, &prior, &mut mode)?;
            let report = obj.report;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            correct += count_correct(tape.value(obj.logits), &batch.labels);
            let grads = tape.backward(obj.total)?.into_named();
            adam_step_in_place(&mut model.params, &grads, &mut state)?;
            nll += report.nll;
            kl += report.kl;
            total += report.total;
        }

        let m = num_batches as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            nll: nll / m,
            kl: kl / m,
            total: total / m,
            train_accuracy: correct as f64 / train.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((model, log))
}

fn count_correct(logits: &crate::tensor::Tensor, labels: &[u8]) -> usize {
    logits
        .data()
        .chunks_exact(2)
        .zip(labels)
        .filter(|(z, &y)| u8::from(z[1] > z[0]) == y)
        .count()
}
