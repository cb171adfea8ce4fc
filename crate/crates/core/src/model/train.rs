//! Joint classification + scale-regression training with Adam.

use std::sync::Arc;
use std::time::Instant;

use rand_pcg::Pcg32;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::network::{argmax, image_tensor, Network};
use crate::data::mnist_scale::{shuffle, PCG_STREAM};
use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::nn::loss::softmax_cross_entropy;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Batch-averaged `cross_entropy + λ·(pred − true)²`.
pub fn joint_loss<T: Scalar>(
    logits: &[Vec<T>],
    labels: &[usize],
    scale_pred: &[T],
    scale_true: &[T],
    lambda: T,
) -> Result<T> {
    let n = logits.len();
    if n == 0 || labels.len() != n || scale_pred.len() != n || scale_true.len() != n {
        return Err(Error::config("joint loss needs equally sized, non-empty batches"));
    }
    if lambda < T::zero() {
        return Err(Error::config("lambda must be non-negative"));
    }
    let mut total = T::zero();
    for i in 0..n {
        let d = scale_pred[i] - scale_true[i];
        total = total + softmax_cross_entropy(&logits[i], labels[i])? + lambda * d * d;
    }
    Ok(total / T::of(n as f64))
}

/// Records the per-sample joint loss on `tape`.
pub fn record_sample_loss<T: Scalar>(
    net: &Network<T>,
    tape: &mut Tape<T>,
    record: &SampleRecord,
    lambda: f64,
) -> Result<(Var, Vec<Var>)> {
    let x = tape.constant(image_tensor(&record.image, net.config.input_side)?);
    let out = net.forward(tape, x)?;
    let ce = tape.softmax_cross_entropy(out.logits, record.label as usize)?;
    let se = tape.squared_error(out.scale, T::of(record.scale as f64))?;
    let weighted = tape.scale(se, T::of(lambda));
    let loss = tape.add(ce, weighted)?;
    Ok((loss, out.params))
}

/// Mean loss and mean gradient over `records`.
///
/// The batch is cut into `shards` contiguous chunks. Each chunk sums its
/// samples in order; chunk sums are then added in chunk order, so the
/// result depends on the shard count but not on thread scheduling.
pub fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    records: &[&SampleRecord],
    lambda: f64,
    shards: usize,
) -> Result<(T, Vec<Tensor<T>>)> {
    if records.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let per = records.len().div_ceil(shards.max(1));
    let partials: Vec<Result<(T, Vec<Tensor<T>>)>> = records
        .par_chunks(per)
        .map(|chunk| {
            let mut acc: Vec<Tensor<T>> = net.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            let mut loss_sum = T::zero();
            for rec in chunk {
                let mut tape = Tape::new();
                let (loss, params) = record_sample_loss(net, &mut tape, rec, lambda)?;
                loss_sum = loss_sum + tape.value(loss).data()[0];
                let mut grads = tape.backward(loss)?;
                for (a, &v) in acc.iter_mut().zip(&params) {
                    if let Some(g) = grads.take(v) {
                        a.add_assign(&g);
                    }
                }
            }
            Ok((loss_sum, acc))
        })
        .collect();

    let mut total = T::zero();
    let mut sum: Option<Vec<Tensor<T>>> = None;
    for part in partials {
        let (l, g) = part?;
        total = total + l;
        match sum.as_mut() {
            None => sum = Some(g),
            Some(s) => s.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let inv = T::one() / T::of(records.len() as f64);
    let grads = sum
        .expect("at least one shard")
        .into_iter()
        .map(|g| g.map(|x| x * inv))
        .collect();
    Ok((total * inv, grads))
}

pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Network<T>, cfg: &TrainConfig) -> Self {
        let zeros = || net.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, net: &mut Network<T>, grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        for (i, p) in net.params.iter_mut().enumerate() {
            let w = Arc::make_mut(&mut p.value).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                w[j] = w[j] - step_size * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classification_error_pct: f64,
    pub scale_rmse: f64,
    pub n: usize,
}

pub fn evaluate<T: Scalar>(net: &Network<T>, records: &[SampleRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty split".into()));
    }
    let outcomes: Vec<Result<(bool, f64)>> = records
        .par_iter()
        .map(|r| {
            let (logits, scale) = net.predict(&r.image)?;
            let wrong = argmax(&logits) != r.label as usize;
            let d = scale.as_f64() - r.scale as f64;
            Ok((wrong, d * d))
        })
        .collect();
    let mut wrong = 0usize;
    let mut se = 0.0;
    for o in outcomes {
        let (w, s) = o?;
        wrong += w as usize;
        se += s;
    }
    let n = records.len();
    Ok(Metrics {
        classification_error_pct: 100.0 * wrong as f64 / n as f64,
        scale_rmse: (se / n as f64).sqrt(),
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error_pct: f64,
    pub val_scale_rmse: f64,
    pub wall_seconds: f64,
}

pub struct TrainOutcome<T> {
    /// Snapshot with the lowest validation error (earliest on ties).
    pub best: Network<T>,
    pub best_epoch: usize,
    pub last: Network<T>,
    pub history: Vec<EpochRecord>,
}

pub fn train<T: Scalar>(
    mut net: Network<T>,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let train_set = &train_set[..cfg.limit_train.unwrap_or(train_set.len()).min(train_set.len())];
    let val_set = &val_set[..cfg.limit_val.unwrap_or(val_set.len()).min(val_set.len())];
    if train_set.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let shards = cfg.shard_count();
    let mut adam = Adam::new(&net, cfg);
    let mut rng = Pcg32::new(cfg.seed, PCG_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<T>)> = None;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&SampleRecord> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradients(&net, &batch, cfg.lambda, shards).map_err(|e| match e {
                Error::Numeric(msg) => Error::numeric(format!(
                    "training diverged at epoch {}, batch {b}: {msg}",
                    epoch + 1
                )),
                other => other,
            })?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged at epoch {}, batch {b}: loss {loss}",
                    epoch + 1
                )));
            }
            if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| !g.all_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for {} at epoch {}, batch {b}",
                    net.params[i].name,
                    epoch + 1
                )));
            }
            loss_sum += loss * batch.len() as f64;
            adam.update(&mut net, &grads, lr);
        }
        let (val_err, val_rmse) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate(&net, val_set)?;
            (m.classification_error_pct, m.scale_rmse)
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            val_error_pct: val_err,
            val_scale_rmse: val_rmse,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
        let better = match &best {
            None => true,
            Some((e, _, _)) => val_err < *e,
        };
        if better || val_set.is_empty() {
            best = Some((val_err, epoch + 1, net.clone()));
        }
    }
    let (best_net, best_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        last: net,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_loss_terms() {
        let logits = vec![vec![0.0f64; 10], vec![0.0; 10]];
        let ln10 = 10f64.ln();
        // λ = 0: pure classification
        let l0 = joint_loss(&logits, &[1, 2], &[0.9, 0.1], &[0.5, 0.5], 0.0).unwrap();
        assert!((l0 - ln10).abs() < 1e-15);
        // perfect scale predictions add nothing
        let lp = joint_loss(&logits, &[1, 2], &[0.5, 0.7], &[0.5, 0.7], 1.0).unwrap();
        assert!((lp - ln10).abs() < 1e-15);
        assert!(joint_loss(&logits, &[1], &[0.5], &[0.5], 1.0).is_err());
    }
}
