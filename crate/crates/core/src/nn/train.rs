//! Mini-batch training with Adam and best-snapshot retention.
//!
//! Samples within a batch are independent through forward and backward, so
//! they may run on any number of workers; their gradients are summed in
//! sample-index order so the result does not depend on the worker count.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::loss::{error_sums, weight_sum, weighted_mse_normalized};
use super::sample::TrainSample;
use super::tensor::Scalar;
use super::unet::{Gradients, UNet};
use crate::error::{Error, Result};
use crate::par::map_ordered;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` without validation data or with an all-zero validation weight.
    pub val_loss: Option<f64>,
    pub val_mae_m: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Snapshot with the lowest validation loss (training loss when there is
    /// no usable validation set).
    pub best: UNet<T>,
    pub best_epoch: usize,
    pub last: UNet<T>,
    pub history: Vec<EpochRecord>,
}

/// Weighted error totals over a set of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalSums {
    pub sq: f64,
    pub abs: f64,
    pub weight: f64,
}

impl EvalSums {
    pub fn loss(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| self.sq / self.weight)
    }
    pub fn mae_m(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| 100.0 * self.abs / self.weight)
    }
}

/// Weighted squared and absolute error of `model` over `samples`.
pub fn evaluate<T: Scalar>(model: &UNet<T>, samples: &[TrainSample<T>]) -> Result<EvalSums> {
    let per_sample = map_ordered(samples, |s| -> Result<EvalSums> {
        let pred = model.forward(&s.image)?;
        let (sq, abs, weight) = error_sums(&pred, &s.target, &s.weight);
        Ok(EvalSums { sq, abs, weight })
    });
    let mut total = EvalSums::default();
    for s in per_sample {
        let s = s?;
        total.sq += s.sq;
        total.abs += s.abs;
        total.weight += s.weight;
    }
    Ok(total)
}

/// Loss and summed gradients for one mini-batch, normalized by the batch's
/// total weight. Returns `(Σ w·(p−t)², Σ w, gradients)`.
pub fn batch_gradients<T: Scalar>(model: &UNet<T>, batch: &[&TrainSample<T>]) -> Result<(f64, f64, Gradients<T>)> {
    let norm: f64 = batch.iter().map(|s| weight_sum(&s.weight)).sum();
    let per_sample = map_ordered(batch, |s| -> Result<(f64, Gradients<T>)> {
        let cache = model.forward_train(&s.image)?;
        let (loss, grad) = weighted_mse_normalized(cache.prediction(), &s.target, &s.weight, norm);
        Ok((loss * norm, model.backward(&cache, &grad)?))
    });
    let mut grads = Gradients::zeros_like(model);
    let mut sq = 0.0;
    for r in per_sample {
        let (s, g) = r?;
        sq += s;
        grads.add_assign(&g);
    }
    Ok((sq, norm, grads))
}

pub fn train<T: Scalar>(
    model: UNet<T>,
    train_set: &[TrainSample<T>],
    val_set: &[TrainSample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_callback(model, train_set, val_set, cfg, |_| ControlFlow::Continue(()))
}

/// Like [`train`], calling `on_epoch` after every epoch; returning
/// `ControlFlow::Break` ends training after that epoch.
pub fn train_with_callback<T: Scalar>(
    mut model: UNet<T>,
    train_set: &[TrainSample<T>],
    val_set: &[TrainSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::<T>::new(cfg.adam, model.named_params().iter().map(|(_, p)| p.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNet<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sq, mut norm) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (bsq, bnorm, grads) = batch_gradients(&model, &batch)?;
            if !bsq.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sq += bsq;
            norm += bnorm;
            adam.step(&mut model.params_mut(), &grads.tensors(), &name_refs)?;
        }
        let train_loss = if norm > 0.0 { sq / norm } else { 0.0 };
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let val = if val_set.is_empty() {
            EvalSums::default()
        } else {
            evaluate(&model, val_set)?
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss(),
            val_mae_m: val.mae_m(),
        };
        if record.val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let flow = on_epoch(&record);

        let score = record.val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
        history.push(record);
        if flow.is_break() {
            break;
        }
    }

    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use crate::nn::unet::UNetConfig;

    fn sample(v: f32, weight: f32) -> TrainSample<f32> {
        TrainSample::new(
            Tensor::filled([1, 4, 8, 8], v),
            Tensor::filled([1, 1, 8, 8], 0.3),
            Tensor::filled([1, 1, 8, 8], weight),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_dataset_leaves_model_unchanged() {
        let model = UNet::<f32>::new(UNetConfig::new(2, 2), 1).unwrap();
        let data: Vec<_> = (0..5).map(|i| sample(i as f32 * 0.1, 0.0)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let out = train(model.clone(), &data, &[], &cfg).unwrap();
        assert_eq!(out.last, model);
        assert!(out.history.iter().all(|r| r.train_loss == 0.0));
    }

    #[test]
    fn empty_training_set() {
        let model = UNet::<f32>::new(UNetConfig::new(1, 2), 1).unwrap();
        assert!(train(model, &[], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_reproducible_and_keeps_best() {
        let model = UNet::<f32>::new(UNetConfig::new(2, 2), 9).unwrap();
        let data: Vec<_> = (0..6).map(|i| sample(i as f32 * 0.15, 1.0)).collect();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            seed: 3,
        };
        let a = train(model.clone(), &data[..4], &data[4..], &cfg).unwrap();
        let b = train(model, &data[..4], &data[4..], &cfg).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.history, b.history);
        let best = a
            .history
            .iter()
            .min_by(|x, y| x.val_loss.unwrap().total_cmp(&y.val_loss.unwrap()))
            .unwrap();
        assert_eq!(a.best_epoch, best.epoch);
    }
}
