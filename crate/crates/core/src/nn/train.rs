use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, argmax, AdamConfig, AdamState, Mode, PolicyModel, Real};
use crate::dataset::{label_to_class, Dataset, Normalization};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub bn_momentum: f64,
    pub seed: u64,
    /// Inverse-frequency class weights in the loss.
    pub class_weights: bool,
    /// Random subset of the training set visited per epoch.
    pub max_examples_per_epoch: Option<usize>,
    /// Evenly spaced subset of the validation set used for scoring.
    pub max_val_examples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            adam: AdamConfig::default(),
            bn_momentum: 0.1,
            seed: 0,
            class_weights: false,
            max_examples_per_epoch: None,
            max_val_examples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_acc).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn fill_batch<F: Real>(ds: &Dataset, idx: &[usize], norm: &Normalization) -> (Array2<F>, Vec<i8>) {
    let d = ds.window_len();
    let mut x = Array2::zeros((idx.len(), d));
    for (mut row, &i) in x.rows_mut().into_iter().zip(idx) {
        for (dst, &v) in row.iter_mut().zip(ds.window(i)) {
            *dst = F::lit(norm.apply(v));
        }
    }
    (x, idx.iter().map(|&i| ds.labels()[i]).collect())
}

/// Eval-mode mean cross-entropy and accuracy over (a subset of) a dataset.
pub fn evaluate<F: Real>(model: &PolicyModel<F>, ds: &Dataset, limit: Option<usize>) -> Result<(f64, f64)> {
    if ds.window_len() != model.spec.input_dim {
        return Err(Error::ShapeMismatch {
            expected: model.spec.input_dim,
            got: ds.window_len(),
        });
    }
    let n = ds.len();
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let idx: Vec<usize> = match limit {
        Some(k) if k < n && k > 0 => (0..k).map(|j| j * n / k).collect(),
        _ => (0..n).collect(),
    };
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(512) {
        let (x, labels) = fill_batch::<F>(ds, chunk, &model.normalization);
        let p = model.forward(x.view(), Mode::Eval)?;
        for (row, &l) in p.rows().into_iter().zip(&labels) {
            let c = label_to_class(l)?;
            loss -= row[c].to_f64().unwrap().max(1e-300).ln();
            if argmax(row) == c {
                correct += 1;
            }
        }
    }
    Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
}

/// Mini-batch Adam training. Returns the parameters of the epoch with the best
/// validation accuracy (the first such epoch on ties).
pub fn train<F: Real>(
    model: &PolicyModel<F>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(PolicyModel<F>, History)> {
    let d = model.spec.input_dim;
    for ds in [train_ds, val_ds] {
        if ds.window_len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: ds.window_len(),
            });
        }
    }
    if cfg.epochs == 0 {
        return Ok((model.clone(), History::default()));
    }
    if train_ds.len() < 2 || val_ds.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least 2 training examples and 1 validation example".into(),
        ));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidArgument("batch size must be >= 2".into()));
    }

    let mut model = model.clone();
    model.normalization = train_ds.normalization;
    let weights = cfg.class_weights.then(|| train_ds.class_weights());
    let mut adam = AdamState::new(&mut model, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, PolicyModel<F>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let visit = cfg
            .max_examples_per_epoch
            .map_or(order.len(), |k| k.min(order.len()));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order[..visit].chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, labels) = fill_batch::<F>(train_ds, chunk, &model.normalization);
            let (loss, grads, (stats, probs)) =
                model.loss_grad_stats(x.view(), &labels, weights.as_ref(), Mode::Train)?;
            adam_step(&mut model, &grads, &mut adam)?;
            model.update_running_stats(&stats, cfg.bn_momentum);
            loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
            seen += chunk.len();
            for (row, &l) in probs.rows().into_iter().zip(&labels) {
                if argmax(row) == label_to_class(l)? {
                    correct += 1;
                }
            }
        }
        let (val_loss, val_acc) = evaluate(&model, val_ds, cfg.max_val_examples)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            best = Some((val_acc, model.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    Ok((best.map(|b| b.1).unwrap_or(model), history))
}
