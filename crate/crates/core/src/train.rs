//! SGD training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use mstnet_tensor::{Float, Tensor};

use crate::checkpoint::CheckpointRecord;
use crate::config::RunConfig;
use crate::data::{Batch, TrainSet};
use crate::model::Model;
use crate::nn::{apply_bn_updates, Ctx, BN_MOMENTUM};
use crate::objective::{lambda_value, loss_var, LossBreakdown, ScheduleSpec, UalSpec};
use crate::params::{ParamId, ParamStore};
use crate::{Error, Result};

/// Stochastic gradient descent with momentum and L2 weight decay:
/// `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`, with `v` starting at the first
/// gradient.
#[derive(Clone, Debug)]
pub struct Sgd<T: Float> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: Vec<(ParamId, Tensor<T>)>, lr: f64) {
        if self.buffers.len() < store.len() {
            self.buffers.resize(store.len(), None);
        }
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        for (id, g) in grads {
            if !store.entry(id).trainable {
                continue;
            }
            let p = store.get_mut(id);
            let d: Tensor<T> = g.zip_map(p, |g, p| g + wd * p);
            let buf = match self.buffers[id.index()].take() {
                Some(mut b) => {
                    for (bv, &dv) in b.data_mut().iter_mut().zip(d.data()) {
                        *bv = mu * *bv + dv;
                    }
                    b
                }
                None => d,
            };
            for (pv, &bv) in p.data_mut().iter_mut().zip(buf.data()) {
                *pv = *pv - lr * bv;
            }
            self.buffers[id.index()] = Some(buf);
        }
    }

    /// Momentum buffers that exist, keyed by parameter.
    pub fn state(&self) -> Vec<(ParamId, &Tensor<T>)> {
        self.buffers
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|b| (i, b)))
            .map(|(i, b)| (ParamId(i), b))
            .collect()
    }

    pub fn set_state(&mut self, len: usize, state: Vec<(ParamId, Tensor<T>)>) {
        self.buffers = vec![None; len];
        for (id, t) in state {
            self.buffers[id.index()] = Some(t);
        }
    }
}

/// Linear warm-up over the first `warmup_fraction` of iterations, then
/// linear decay to zero. `it` counts from 0.
pub fn learning_rate(base: f64, warmup_fraction: f64, it: usize, total: usize) -> f64 {
    let warm = (warmup_fraction * total as f64).floor() as usize;
    if it < warm {
        base * (it + 1) as f64 / warm as f64
    } else {
        base * (total.saturating_sub(it)) as f64 / (total - warm).max(1) as f64
    }
}

/// One logged training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Forward, backward and update on one batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Float>(
    model: &mut Model<T>,
    sgd: &mut Sgd<T>,
    batch: &Batch,
    ual: &UalSpec,
    sched: &ScheduleSpec,
    it: usize,
    total: usize,
    lr: f64,
) -> Result<LossBreakdown> {
    let lambda = lambda_value(sched, it as f64, total as f64);
    let triplet = batch.triplet.cast::<T>();
    let masks = batch.masks.cast::<T>();
    let (grads, bn, bd) = {
        let ctx = Ctx::train(&model.store);
        let fwd = model.net.forward(&ctx, &triplet)?;
        let (loss, bd) = loss_var(&fwd.prob, &masks, ual, lambda);
        if !bd.total.is_finite() {
            return Err(Error::Contract(format!("non-finite loss at iteration {it}")));
        }
        let g = loss.backward();
        (ctx.param_grads(&g), ctx.take_bn_updates(), bd)
    };
    apply_bn_updates(&mut model.store, &bn, BN_MOMENTUM);
    sgd.step(&mut model.store, grads, lr);
    Ok(bd)
}

/// Where training writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch{epoch:03}.ckpt"))
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
}

pub struct TrainResult {
    pub logs: Vec<StepLog>,
    pub iterations: usize,
}

pub fn iterations_per_epoch(samples: usize, batch: usize) -> usize {
    samples / batch + usize::from(samples % batch >= 2)
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

/// Runs the configured number of epochs. With `outputs`, writes the loss log
/// and a checkpoint after every epoch.
pub fn train(cfg: &RunConfig, set: &TrainSet, model: &mut Model<f32>, outputs: Option<&TrainOutputs>) -> Result<TrainResult> {
    cfg.validate()?;
    if set.len() < 2 {
        return Err(Error::Dataset(format!("training needs at least 2 samples, found {}", set.len())));
    }
    let t = &cfg.train;
    let per_epoch = iterations_per_epoch(set.len(), t.batch_size);
    let total = per_epoch * t.epochs;
    let mut sgd = Sgd::new(t.momentum, t.weight_decay);
    let fingerprint = cfg.fingerprint();
    let mut log_file = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(io(&o.dir))?;
            let p = o.loss_log();
            let mut f = std::io::BufWriter::new(std::fs::File::create(&p).map_err(io(&p))?);
            writeln!(f, "iteration,lr,lambda,bcel,ual,total").map_err(io(&p))?;
            Some((p, f))
        }
        None => None,
    };
    let mut logs = Vec::with_capacity(total);
    let mut it = 0;
    for epoch in 0..t.epochs {
        let order = set.epoch_order(epoch);
        for chunk in order.chunks(t.batch_size) {
            if chunk.len() < 2 {
                log::debug!("epoch {epoch}: dropping a trailing batch of one sample");
                continue;
            }
            let lr = learning_rate(t.base_lr, t.warmup_fraction, it, total);
            let Some(batch) = set.batch(chunk, epoch, t.parallel_loading).filter(|b| b.masks.shape().n >= 2) else {
                log::warn!("iteration {it}: fewer than 2 samples in the batch could be loaded");
                it += 1;
                continue;
            };
            let loss = train_step(model, &mut sgd, &batch, &t.ual, &t.lambda_schedule, it, total, lr)?;
            if let Some((p, f)) = log_file.as_mut() {
                writeln!(f, "{},{},{},{},{},{}", it, lr, loss.lambda, loss.bcel, loss.ual, loss.total).map_err(io(p))?;
            }
            logs.push(StepLog { iteration: it, lr, loss });
            it += 1;
        }
        log::info!("epoch {}/{}: loss {:.5}", epoch + 1, t.epochs, logs.last().map_or(f64::NAN, |l| l.loss.total));
        if let Some(o) = outputs {
            if let Some((p, f)) = log_file.as_mut() {
                f.flush().map_err(io(p))?;
            }
            let rec = CheckpointRecord::capture(model, &sgd, epoch + 1, &fingerprint)?;
            rec.save(&o.checkpoint(epoch + 1))?;
            rec.save(&o.last_checkpoint())?;
        }
    }
    Ok(TrainResult { logs, iterations: it })
}
