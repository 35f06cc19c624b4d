//! Mini-batch training with Adam and early stopping on validation loss.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};
use crate::preprocess::Samples;
use crate::tensor::{Element, FlushSubnormals, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without a strict validation-loss improvement before stopping.
    pub patience: usize,
    pub shuffle_seed: u64,
    /// Batch size for scoring passes; predictions do not depend on it.
    pub eval_batch_size: usize,
    /// Worker threads for scoring passes; results do not depend on it.
    #[serde(skip, default = "one")]
    pub eval_threads: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            patience: 10,
            shuffle_seed: 0,
            eval_batch_size: 16,
            eval_threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Input("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Input("Adam epsilon must be positive".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.eval_batch_size == 0 || self.eval_threads == 0 {
            return Err(Error::Input("patience, batch size and threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self {
            m: model.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            v: model.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step<'a, T: Element>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[&[T]],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let corr1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let mut count = 0;
    for (i, param) in params.into_iter().enumerate() {
        let grad = grads.get(i).ok_or_else(|| Error::dim("adam_step", "fewer gradients than parameters"))?;
        if grad.len() != param.len() || state.m.get(i).map(Vec::len) != Some(param.len()) {
            return Err(Error::dim(
                "adam_step",
                format!("parameter {i} has {} values, gradient {}", param.len(), grad.len()),
            ));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((theta, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * g;
            *vi = b2 * *vi + one_b2 * g * g;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        count += 1;
    }
    if count != grads.len() || count != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            format!("{count} parameters, {} gradients, {} moment slots", grads.len(), state.m.len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_ms
            );
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Loss, accuracy and per-sample predictions over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

fn row_cross_entropy<T: Element>(row: &[T], label: usize) -> f64 {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.to_f64() - max).exp()).sum::<f64>().ln() + max;
    lse - row[label].to_f64()
}

fn score_batch<T: Element>(model: &Model<T>, set: &Samples<T>, rows: &[usize]) -> Result<(f64, Vec<usize>)> {
    let _ftz = FlushSubnormals::enable();
    let batch = set.gather(rows);
    let logits = model.logits(&batch.patches)?;
    let k = model.config().classes;
    let loss = logits
        .data()
        .chunks_exact(k)
        .zip(&batch.labels)
        .map(|(row, &l)| row_cross_entropy(row, l))
        .sum();
    Ok((loss, argmax_rows(&crate::tensor::softmax(&logits))))
}

/// Mean cross-entropy, accuracy and predictions (in input order).
///
/// Batches are fanned out over `threads` workers; every batch is scored the
/// same way regardless of the thread count and results are reduced in order.
pub fn evaluate<T: Element>(model: &Model<T>, set: &Samples<T>, batch_size: usize, threads: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Input("cannot evaluate an empty sample set".into()));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= model.config().classes) {
        return Err(Error::Input(format!("label {bad} out of range for {} classes", model.config().classes)));
    }
    let rows: Vec<usize> = (0..set.len()).collect();
    let batches: Vec<&[usize]> = rows.chunks(batch_size.max(1)).collect();
    let threads = threads.clamp(1, batches.len());
    let results: Vec<Result<(f64, Vec<usize>)>> = if threads == 1 {
        batches.iter().map(|b| score_batch(model, set, b)).collect()
    } else {
        let per = batches.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|b| score_batch(model, set, b)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(set.len());
    for r in results {
        let (l, p) = r?;
        loss += l;
        predictions.extend(p);
    }
    let correct = predictions.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss / set.len() as f64,
        accuracy: correct as f64 / set.len() as f64,
        predictions,
    })
}

/// Trains a copy of `model` and returns it with the best-validation-loss weights restored.
pub fn fit<T: Element>(model: &Model<T>, train: &Samples<T>, val: &Samples<T>, cfg: &TrainConfig) -> Result<(Model<T>, TrainLog)> {
    fit_with_hook(model, train, val, cfg, |_| {})
}

/// [`fit`] with a callback that may rewrite every batch's gradients before the update.
pub fn fit_with_hook<T: Element>(
    model: &Model<T>,
    train: &Samples<T>,
    val: &Samples<T>,
    cfg: &TrainConfig,
    mut grad_hook: impl FnMut(&mut [Vec<T>]),
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    let _ftz = FlushSubnormals::enable();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    let mut model = model.clone();
    let mut state = AdamState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Model<T>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.gather(rows);
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let x = g.constant(batch.patches);
            let logits = model.forward(&mut g, &vars, &x)?;
            let (loss, _) = g.softmax_cross_entropy(&logits, &batch.labels)?;
            g.backward(&loss)?;

            loss_sum += loss.value().data()[0].to_f64() * rows.len() as f64;
            correct += argmax_rows(logits.value())
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();

            let mut grads: Vec<Vec<T>> = vars
                .all
                .iter()
                .map(|v| g.grad(v).map_or_else(|| vec![T::zero(); v.value().len()], <[T]>::to_vec))
                .collect();
            drop(g);
            grad_hook(&mut grads);
            let views: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(model.params_mut().iter_mut().map(|p| &mut p.value), &views, &mut state, cfg)?;
        }
        let val_eval = evaluate(&model, val, cfg.eval_batch_size, cfg.eval_threads)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        log.epochs.push(record);

        let improved = best.as_ref().map_or(true, |(b, _)| val_eval.loss < *b);
        if improved {
            best = Some((val_eval.loss, model.clone()));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::<f32>::from_fn(&[3], |i| i as f32 - 1.0)];
        let before = p.clone();
        let mut state = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(p.iter_mut(), &[&[0.0; 3]], &mut state, &cfg).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step(), 5);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut state = AdamState::new(&p);
        adam_step(p.iter_mut(), &[&[1.0]], &mut state, &cfg).unwrap();
        let expected = -1e-3 / (1.0 + 1e-7);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);

        let mut p = vec![Tensor::<f32>::scalar(0.0)];
        let mut state = AdamState::new(&p);
        adam_step(p.iter_mut(), &[&[1.0]], &mut state, &cfg).unwrap();
        assert!((p[0].data()[0] - -9.999999e-4).abs() < 1e-10);
    }

    #[test]
    fn identical_gradients_update_identically() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::<f32>::full(&[2], 0.3), Tensor::full(&[2], 0.3)];
        let mut state = AdamState::new(&p);
        let g = [0.7f32, -0.2];
        adam_step(p.iter_mut(), &[&g, &g], &mut state, &cfg).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn mismatched_gradient_is_a_dimension_error() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::<f32>::zeros(&[3])];
        let mut state = AdamState::new(&p);
        assert!(matches!(
            adam_step(p.iter_mut(), &[&[0.0; 2]], &mut state, &cfg),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn descends_on_a_quadratic() {
        let cfg = TrainConfig { lr: 1e-2, ..TrainConfig::default() };
        let mut p = vec![Tensor::<f64>::scalar(1.5)];
        let mut state = AdamState::new(&p);
        let before = 0.5 * 1.5f64 * 1.5;
        let grad = [p[0].data()[0]];
        adam_step(p.iter_mut(), &[&grad], &mut state, &cfg).unwrap();
        let theta = p[0].data()[0];
        assert!(0.5 * theta * theta < before);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn csv_layout() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.25,
                val_loss: 0.75,
                val_acc: 1.0,
                wall_ms: 12,
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        assert_eq!(log.to_csv(), "epoch,train_loss,train_acc,val_loss,val_acc,wall_ms\n1,0.5,0.25,0.75,1,12\n");
    }
}
