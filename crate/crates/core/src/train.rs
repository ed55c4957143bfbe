//! Loss, Adam, the warm-up/cosine schedule and the mini-batch training loop.

use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_batch, SequenceRegressor};
use crate::nn::{logcosh, Tape, Tensor};
use crate::par::{map_range, Parallelism};
use crate::preprocess::{bucket_batches, pad_batch, Batch, NormRun};
use crate::seed::SeedStream;

/// Mean log-cosh error, evaluated in the overflow-safe form.
pub fn logcosh_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("log-cosh of empty vectors".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| logcosh(p - t)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub floor_lr: f64,
}

impl ScheduleConfig {
    /// Warm-up over `warmup_frac` of `total_steps` (at least one step).
    pub fn new(peak_lr: f64, floor_lr: f64, total_steps: usize, warmup_frac: f64) -> Result<Self> {
        let total_steps = total_steps.max(2);
        let warmup_steps = ((warmup_frac * total_steps as f64).round() as usize).clamp(1, total_steps - 1);
        let s = Self {
            peak_lr,
            warmup_steps,
            total_steps,
            floor_lr,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps > 0 && self.warmup_steps < self.total_steps) {
            return Err(Error::Config(format!(
                "need 0 < warmup ({}) < total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak learning rate must be positive, got {}", self.peak_lr)));
        }
        if !(0.0..=self.peak_lr).contains(&self.floor_lr) {
            return Err(Error::Config(format!("floor lr {} must lie in [0, peak]", self.floor_lr)));
        }
        Ok(())
    }
}

/// Linear warm-up to the peak, then cosine decay to the floor.
pub fn lr_at(step: usize, s: &ScheduleConfig) -> Result<f64> {
    s.validate()?;
    if step > s.total_steps {
        return Err(Error::Config(format!("step {step} beyond schedule end {}", s.total_steps)));
    }
    if step < s.warmup_steps {
        return Ok(s.peak_lr * step as f64 / s.warmup_steps as f64);
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    Ok(s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// parameter is touched.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!("parameter {i}: {} values, {} gradients", p.len(), g.len())));
        }
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i} element {j} is {}", g[j])));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_frac: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            peak_lr: 1e-5,
            floor_lr: 0.0,
            warmup_frac: 0.05,
            patience: 20,
            clip_norm: Some(1.0),
            seed: 0,
            parallelism: Parallelism::Rayon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub val_mae: Option<f64>,
    pub lr: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Learning rate of every optimizer step.
    pub lr_trace: Vec<f64>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

impl TrainLog {
    fn empty() -> Self {
        Self {
            epochs: Vec::new(),
            lr_trace: Vec::new(),
            steps: 0,
            best_epoch: None,
            best_val_mae: None,
            stopped_early: false,
            wall_time_s: 0.0,
        }
    }
}

/// Splits off roughly `frac` of `runs` (at least one when `frac > 0` and
/// there are two or more runs) as an early-stopping holdout.
pub fn holdout(runs: Vec<NormRun>, frac: f64, stream: SeedStream) -> (Vec<NormRun>, Vec<NormRun>) {
    use rand::seq::SliceRandom;
    let n = runs.len();
    let k = if frac <= 0.0 || n < 2 { 0 } else { ((frac * n as f64).round() as usize).clamp(1, n - 1) };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream.rng());
    let val: std::collections::BTreeSet<usize> = idx[..k].iter().copied().collect();
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, r) in runs.into_iter().enumerate() {
        if val.contains(&i) {
            va.push(r);
        } else {
            tr.push(r);
        }
    }
    (tr, va)
}

/// Predicts every run, batching in input order.
pub fn predict_runs<M: SequenceRegressor + ?Sized>(model: &M, runs: &[NormRun], batch_size: usize, par: Parallelism) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(runs.len());
    for chunk in runs.chunks(batch_size.max(1)) {
        let batch = pad_batch(&chunk.iter().collect::<Vec<_>>())?;
        out.extend(predict_batch(model, &batch, par)?);
    }
    Ok(out)
}

/// Mean log-cosh loss of one batch and its parameter gradient. Each sample
/// gets its own tape; per-sample gradients are summed in sample order.
pub fn batch_gradient<M: SequenceRegressor + ?Sized>(
    model: &M,
    batch: &Batch,
    training: bool,
    dropout: SeedStream,
    par: Parallelism,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let per_sample = map_range(par, n, |b| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let mut rng = dropout.at(b as u64).rng();
        let y = model.predict_sample(&mut tape, &p, batch.sample(b), training, &mut rng)?;
        let loss = tape.logcosh_mean(y, &[batch.labels[b]]);
        tape.check_finite()?;
        let g = tape.backward(loss)?;
        let mut grads = model.params().zeros_like();
        g.accumulate_params(&mut grads, scale);
        Ok((tape.value(loss).item(), grads))
    });
    let mut total = model.params().zeros_like();
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l * scale;
        for (t, gi) in total.iter_mut().zip(&g) {
            for (a, b) in t.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok((loss, total))
}

fn mse_mae(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let n = pred.len() as f64;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    (mse, mae)
}

/// Trains `model` in place. When `val` is non-empty the weights with the
/// lowest validation MAE are restored at the end and training stops after
/// `patience` epochs without improvement. Given the same seed, config and
/// data the log (minus wall time) and final weights are bit-identical for
/// any thread count.
pub fn train_loop<M: SequenceRegressor + ?Sized>(model: &mut M, train: &[NormRun], val: &[NormRun], cfg: &TrainConfig) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::Empty("training split has no runs".into()));
    }
    if let Some(r) = train.iter().chain(val).find(|r| r.matrix.rows() != model.width()) {
        return Err(Error::Shape(format!("run of app {} has {} metrics, model expects {}", r.app_id, r.matrix.rows(), model.width())));
    }
    if cfg.epochs == 0 {
        warn!("epochs = 0: returning the initialized weights unchanged");
        return Ok(TrainLog::empty());
    }
    let started = Instant::now();
    let root = SeedStream::root(cfg.seed);
    let lengths: Vec<usize> = train.iter().map(NormRun::len).collect();
    let per_epoch = bucket_batches(&lengths, cfg.batch_size, &mut root.named("count").rng()).len();
    let sched = ScheduleConfig::new(cfg.peak_lr, cfg.floor_lr, per_epoch * cfg.epochs, cfg.warmup_frac)?;
    let mut adam = AdamState::new(model.params().tensors());
    let mut log = TrainLog::empty();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let val_targets: Vec<f64> = val.iter().map(|r| r.label).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = root.named("shuffle").at(epoch as u64).rng();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut lr = 0.0;
        for idx in bucket_batches(&lengths, cfg.batch_size, &mut rng) {
            let batch = pad_batch(&idx.iter().map(|&i| &train[i]).collect::<Vec<_>>())?;
            let step = log.steps;
            let drop = root.named("dropout").at(step as u64);
            let (loss, mut grads) = batch_gradient(&*model, &batch, true, drop, cfg.parallelism).map_err(|e| match e {
                Error::NonFinite(m) => Error::Divergence(format!("epoch {epoch} step {step}: {m}")),
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch} step {step}: loss is {loss}")));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            lr = lr_at((step + 1).min(sched.total_steps), &sched)?;
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam, lr)
                .map_err(|e| Error::Divergence(format!("epoch {epoch} step {step}: {e}")))?;
            log.lr_trace.push(lr);
            log.steps += 1;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = loss_sum / count as f64;
        let (val_mse, val_mae) = if val.is_empty() {
            (None, None)
        } else {
            let pred = predict_runs(&*model, val, cfg.batch_size, cfg.parallelism)?;
            let (mse, mae) = mse_mae(&pred, &val_targets);
            (Some(mse), Some(mae))
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_mse,
            val_mae,
            lr,
            step: log.steps,
        });
        info!("epoch {epoch}: train loss {train_loss:.6} val mae {val_mae:?}");
        if let Some(mae) = val_mae {
            if best.as_ref().is_none_or(|(b, _)| mae < *b) {
                best = Some((mae, model.params().tensors().to_vec()));
                log.best_epoch = Some(epoch);
                log.best_val_mae = Some(mae);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    log.stopped_early = true;
                    info!("early stop after epoch {epoch}; best epoch {:?}", log.best_epoch);
                    break;
                }
            }
        }
    }
    if let Some((_, weights)) = best {
        model.params_mut().tensors_mut().clone_from_slice(&weights);
    }
    log.wall_time_s = started.elapsed().as_secs_f64();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logcosh_values() {
        assert_eq!(logcosh_loss(&[0.3], &[0.3]).unwrap(), 0.0);
        assert!((logcosh_loss(&[1.0], &[0.0]).unwrap() - 0.433781).abs() < 1e-6);
        assert!((logcosh_loss(&[10.0], &[0.0]).unwrap() - 9.306853).abs() < 1e-6);
        assert!(logcosh_loss(&[], &[]).is_err());
        assert!(logcosh_loss(&[1.0], &[]).is_err());
        for e in [-3.0, -0.2, 0.0, 0.5, 7.0, 700.0] {
            let l = logcosh(e);
            assert!(l >= 0.0 && l <= 0.5 * e * e + 1e-15);
            assert_eq!(l, logcosh(-e));
        }
    }

    #[test]
    fn schedule_shape() {
        let s = ScheduleConfig {
            peak_lr: 1e-5,
            warmup_steps: 10,
            total_steps: 110,
            floor_lr: 1e-7,
        };
        assert_eq!(lr_at(0, &s).unwrap(), 0.0);
        assert_eq!(lr_at(10, &s).unwrap(), 1e-5);
        assert!((lr_at(60, &s).unwrap() - (1e-7 + 0.5 * (1e-5 - 1e-7))).abs() < 1e-18);
        assert!((lr_at(9, &s).unwrap() - 0.9e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for step in 10..=110 {
            let l = lr_at(step, &s).unwrap();
            assert!(l <= prev);
            prev = l;
        }
        assert!((prev - 1e-7).abs() < 1e-20);
        assert!(lr_at(111, &s).is_err());
        assert!(lr_at(0, &ScheduleConfig { warmup_steps: 0, ..s }).is_err());
        assert!(lr_at(0, &ScheduleConfig { floor_lr: 1.0, ..s }).is_err());
    }

    #[test]
    fn adam_first_step_and_quadratic() {
        let mut p = vec![Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.3, -7.0, 1e-3]], &mut st, 0.01).unwrap();
        let d = p[0].data();
        assert!((d[0] - 0.99).abs() < 1e-6 && (d[1] + 1.99).abs() < 1e-6 && (d[2] - 0.49).abs() < 1e-4);

        let mut th = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&th);
        for _ in 0..200 {
            let g = 2.0 * th[0].item();
            adam_step(&mut th, &[vec![g]], &mut st, 0.1).unwrap();
        }
        assert!(th[0].item().abs() < 1e-2, "{}", th[0].item());
    }

    #[test]
    fn adam_zero_lr_and_zero_grad_are_identity() {
        let orig = vec![Tensor::from_vec(1, 2, vec![0.1234, -5.5]).unwrap()];
        let mut p = orig.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![3.0, -1.0]], &mut st, 0.0).unwrap();
        assert_eq!(p, orig);
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.0, 0.0]], &mut st, 0.0).unwrap();
        }
        let mut q = orig.clone();
        let mut st = AdamState::new(&q);
        for _ in 0..5 {
            adam_step(&mut q, &[vec![0.0, 0.0]], &mut st, 0.1).unwrap();
        }
        assert_eq!(q, orig);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &[vec![f64::NAN]], &mut st, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut h = vec![vec![0.3]];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h[0][0], 0.3);
    }
}
