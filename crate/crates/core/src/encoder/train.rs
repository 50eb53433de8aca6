//! Training loop: shuffled microbatches, gradient accumulation, AdamW under
//! the warmup schedule, and a per-step trace.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::model::{evaluate, loss_and_grad, BatchStats, EncodedExample, Gradients, TrainMode};
use crate::encoder::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::encoder::schedule::lr_at;
use crate::encoder::{AdapterSet, EncoderConfig, EncoderParams, TensorKind};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub per_device_batch: usize,
    pub grad_accum_steps: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            per_device_batch: 1,
            grad_accum_steps: 8,
            base_lr: 2e-4,
            warmup_ratio: 0.03,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_device_batch == 0 || self.grad_accum_steps == 0 {
            return Err(Error::InvalidArgument("batch size and accumulation steps must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::InvalidArgument("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidArgument("warmup_ratio must lie in [0, 1)".into()));
        }
        self.optimizer.validate()
    }

    /// Optimizer updates in one epoch over `n` examples. A trailing partial
    /// group of microbatches still gets its own update.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.per_device_batch).div_ceil(self.grad_accum_steps)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * self.steps_per_epoch(n)
    }
}

/// One row per optimizer update. Validation columns are filled on the last
/// update of each epoch when an evaluation set is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based count of updates applied so far.
    pub step: usize,
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the examples of this update.
    pub loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "epoch", "lr", "loss", "train_acc", "val_loss", "val_acc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.lr.to_string(),
            r.loss.to_string(),
            r.train_acc.to_string(),
            opt(r.val_loss),
            opt(r.val_acc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<EpochSummary>,
    pub total_steps: usize,
}

/// Collects `(kind, tensor)` pairs for the trainable set, in the same order
/// as [`gradient_tensors`].
fn trainable<'a>(
    params: &'a mut EncoderParams,
    adapters: Option<&'a mut AdapterSet>,
    mode: TrainMode,
) -> Vec<(TensorKind, &'a mut Matrix)> {
    let mut out = Vec::new();
    if mode == TrainMode::Full {
        out.extend(params.tensors_mut().into_iter().map(|(_, k, t)| (k, t)));
    }
    if let Some(a) = adapters {
        out.extend(a.tensors_mut().into_iter().map(|(_, t)| (TensorKind::Weight, t)));
    }
    out
}

fn gradient_tensors(grads: &Gradients) -> Vec<&Matrix> {
    let mut out = Vec::new();
    if let Some(b) = &grads.base {
        out.extend(b.tensors().into_iter().map(|(_, _, t)| t));
    }
    if let Some(a) = &grads.adapters {
        out.extend(a.tensors().into_iter().map(|(_, t)| t));
    }
    out
}

fn accumulate(total: &mut Option<Gradients>, g: Gradients) {
    let Some(acc) = total else {
        *total = Some(g);
        return;
    };
    if let (Some(a), Some(b)) = (acc.base.as_mut(), g.base.as_ref()) {
        for ((_, _, x), (_, _, y)) in a.tensors_mut().into_iter().zip(b.tensors()) {
            x.add_assign(y);
        }
    }
    if let (Some(a), Some(b)) = (acc.adapters.as_mut(), g.adapters.as_ref()) {
        for ((_, x), (_, y)) in a.tensors_mut().into_iter().zip(b.tensors()) {
            x.add_assign(y);
        }
    }
}

fn scale(g: &mut Gradients, s: f64) {
    if let Some(b) = g.base.as_mut() {
        b.tensors_mut().into_iter().for_each(|(_, _, t)| t.scale(s));
    }
    if let Some(a) = g.adapters.as_mut() {
        a.tensors_mut().into_iter().for_each(|(_, t)| t.scale(s));
    }
}

/// Trains in place. In [`TrainMode::Peft`] the base parameters are never
/// written.
pub fn train_loop(
    train: &[EncodedExample],
    params: &mut EncoderParams,
    mut adapters: Option<&mut AdapterSet>,
    model: &EncoderConfig,
    config: &TrainConfig,
    mode: TrainMode,
    eval_set: Option<&[EncodedExample]>,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::InsufficientRecords("empty training set".into()));
    }
    config.validate()?;
    model.validate()?;
    params.check_shapes(model)?;
    if let Some(a) = adapters.as_deref() {
        a.check(params)?;
    }
    let total_steps = config.total_steps(train.len());
    let mut report = TrainReport { total_steps, ..TrainReport::default() };
    let mut state = OptimizerState::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(config.seed, "encoder.epoch", epoch as u64));
        let micro: Vec<Vec<EncodedExample>> =
            order.chunks(config.per_device_batch).map(|c| c.iter().map(|&i| train[i].clone()).collect()).collect();

        let (mut epoch_loss, mut epoch_correct) = (0.0, 0);
        let groups: Vec<&[Vec<EncodedExample>]> = micro.chunks(config.grad_accum_steps).collect();
        for (gi, group) in groups.iter().enumerate() {
            let mut acc: Option<Gradients> = None;
            let (mut loss, mut correct, mut count) = (0.0, 0, 0);
            for mb in group.iter() {
                let (BatchStats { loss: l, correct: c, count: n }, g) =
                    loss_and_grad(params, adapters.as_deref(), mb, model, mode)?;
                accumulate(&mut acc, g);
                loss += l * n as f64;
                correct += c;
                count += n;
            }
            let mut grads = acc.expect("groups are non-empty");
            scale(&mut grads, 1.0 / group.len() as f64);

            let lr = lr_at(step, total_steps, config.base_lr, config.warmup_ratio);
            {
                let mut tensors = trainable(params, adapters.as_deref_mut(), mode);
                adamw_step(&mut tensors, &gradient_tensors(&grads), &mut state, &config.optimizer, lr)?;
            }
            step += 1;
            epoch_loss += loss;
            epoch_correct += correct;
            report.trace.push(TraceRow {
                step,
                epoch: epoch + 1,
                lr,
                loss: loss / count as f64,
                train_acc: correct as f64 / count as f64,
                val_loss: None,
                val_acc: None,
            });
            if gi + 1 < groups.len() {
                continue;
            }
            let val = match eval_set {
                Some(set) if !set.is_empty() => {
                    let s = evaluate(params, adapters.as_deref(), set, model)?;
                    Some((s.loss, s.correct as f64 / s.count as f64))
                }
                _ => None,
            };
            if let (Some((vl, va)), Some(row)) = (val, report.trace.last_mut()) {
                row.val_loss = Some(vl);
                row.val_acc = Some(va);
            }
            report.epochs.push(EpochSummary {
                epoch: epoch + 1,
                train_loss: epoch_loss / train.len() as f64,
                train_acc: epoch_correct as f64 / train.len() as f64,
                val,
            });
        }
    }
    Ok(report)
}
