use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};

use super::data::{NormStats, PreparedData, Sample};
use super::metrics::{Accumulator, MetricsReport};
use super::network::ForecastModel;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based, continuing across resumed runs.
    pub epoch: usize,
    /// Masked MAE over every training point seen during the epoch.
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

pub const TRACE_HEADER: &str = "epoch,train_loss,val_mae,val_mape,val_rmse";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let (a, b, c) = match &self.val {
            Some(v) => (format!("{:?}", v.mae), format!("{:?}", v.mape), format!("{:?}", v.rmse)),
            None => ("NaN".into(), "NaN".into(), "NaN".into()),
        };
        format!("{},{:?},{a},{b},{c}", self.epoch, self.train_loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    /// Epoch with the lowest validation MAE (train loss when there is no
    /// validation data) and the parameters at its end.
    pub best_epoch: Option<usize>,
    pub best_store: Option<ParamStore>,
}

impl TrainReport {
    /// A copy of `model` carrying the best parameters.
    pub fn best_model(&self, model: &ForecastModel) -> ForecastModel {
        let mut best = model.clone();
        if let Some(store) = &self.best_store {
            best.store = store.clone();
        }
        best
    }
}

/// Runs `model.config.epochs` further epochs of mini-batch Adam on the masked
/// MAE of de-normalised predictions. The model ends with the final
/// parameters; the best-validation parameters are in the report.
pub fn train(model: &mut ForecastModel, data: &PreparedData) -> Result<TrainReport> {
    if data.train.is_empty() {
        return Err(Error::contract("training split has no windows"));
    }
    model.norm = Some(data.stats.clone());
    let stats = data.stats.clone();
    let config = model.config.clone();
    let mut adam = Adam::new(config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut per_sample = vec![(0.0, 0usize); data.train.len()];

    for _ in 0..config.epochs {
        let epoch = model.epochs_completed + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut tape = Tape::new();
            let (pred, loss) = model.loss(&mut tape, &model.store, &batch, &stats)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {value} at epoch {epoch}, batch {bi} (windows starting at {:?}); \
                     gradient norm before this step {:.4e}",
                    batch.iter().map(|s| s.start).collect::<Vec<_>>(),
                    model.store.grad_norm()
                )));
            }
            record_per_sample(tape.value(pred).data(), &batch, chunk, &mut per_sample);
            model.store.zero_grads();
            tape.backward(loss, &mut model.store)?;
            if let Some(max) = config.clip_norm {
                let norm = clip_grad_norm(&mut model.store, max);
                if !norm.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient norm at epoch {epoch}, batch {bi}"
                    )));
                }
            }
            adam.step(&mut model.store);
        }
        let (abs, count) = per_sample
            .iter()
            .fold((0.0, 0usize), |(a, c), &(sa, sc)| (a + sa, c + sc));
        let train_loss = if count == 0 { 0.0 } else { abs / count as f64 };
        let val = if data.val.is_empty() {
            None
        } else {
            Some(evaluate(model, &data.val, &stats)?)
        };
        model.epochs_completed = epoch;
        let score = val.map_or(train_loss, |v| v.mae);
        if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, epoch, model.store.clone()));
        }
        match &val {
            Some(v) => info!("epoch {epoch}: train {train_loss:.6}  val {v}"),
            None => info!("epoch {epoch}: train {train_loss:.6}"),
        }
        trace.push(EpochRecord { epoch, train_loss, val });
    }
    let (best_epoch, best_store) = match best {
        Some((_, e, s)) => (Some(e), Some(s)),
        None => (None, None),
    };
    Ok(TrainReport {
        trace,
        best_epoch,
        best_store,
    })
}

/// Per-window sums of absolute error over nonzero truth, so the epoch loss
/// does not depend on batch composition or order.
fn record_per_sample(pred: &[f64], batch: &[&Sample], index: &[usize], out: &mut [(f64, usize)]) {
    let width = pred.len() / batch.len();
    for (k, sample) in batch.iter().enumerate() {
        let mut abs = 0.0;
        let mut count = 0;
        for (&p, &t) in pred[k * width..(k + 1) * width].iter().zip(sample.target.data()) {
            if t != 0.0 {
                abs += (p - t).abs();
                count += 1;
            }
        }
        out[index[k]] = (abs, count);
    }
}

/// Predictions `[B, N, T', C]` for consecutive chunks of `samples`, one
/// tensor per chunk.
pub fn predict_samples(model: &ForecastModel, samples: &[Sample], stats: &NormStats) -> Result<Vec<crate::tensor::Tensor>> {
    samples
        .chunks(model.config.batch_size.max(1))
        .map(|chunk| {
            let windows: Vec<_> = chunk.iter().map(|s| &s.input).collect();
            model.predict(&windows, stats)
        })
        .collect()
}

/// Metrics over every predicted step of every window.
pub fn evaluate(model: &ForecastModel, samples: &[Sample], stats: &NormStats) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let mut acc = Accumulator::default();
    for (chunk, pred) in samples
        .chunks(model.config.batch_size.max(1))
        .zip(predict_samples(model, samples, stats)?)
    {
        let width = pred.len() / chunk.len();
        for (k, s) in chunk.iter().enumerate() {
            acc.add(&pred.data()[k * width..(k + 1) * width], s.target.data());
        }
    }
    debug!("evaluated {} windows", samples.len());
    Ok(acc.finish())
}

/// Metrics at single steps ahead: horizon `h` scores output step `h - 1`.
pub fn evaluate_horizons(
    model: &ForecastModel,
    samples: &[Sample],
    stats: &NormStats,
    horizons: &[usize],
) -> Result<Vec<MetricsReport>> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let t_out = model.config.out_horizon;
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > t_out) {
        return Err(Error::contract(format!("horizon {h} outside 1..={t_out}")));
    }
    let (n, c) = (model.config.n_nodes, model.config.channels);
    let mut accs = vec![Accumulator::default(); horizons.len()];
    for (chunk, pred) in samples
        .chunks(model.config.batch_size.max(1))
        .zip(predict_samples(model, samples, stats)?)
    {
        for (k, s) in chunk.iter().enumerate() {
            for (acc, &h) in accs.iter_mut().zip(horizons) {
                let (p, t) = step_slice(pred.data(), s.target.data(), k, n, t_out, c, h - 1);
                acc.add(&p, &t);
            }
        }
    }
    Ok(accs.iter().map(Accumulator::finish).collect())
}

/// Values of window `k` at output step `step`, over all nodes and channels.
fn step_slice(
    pred: &[f64],
    truth: &[f64],
    k: usize,
    n: usize,
    t_out: usize,
    c: usize,
    step: usize,
) -> (Vec<f64>, Vec<f64>) {
    let base = k * n * t_out * c;
    let mut p = Vec::with_capacity(n * c);
    let mut t = Vec::with_capacity(n * c);
    for node in 0..n {
        let off = (node * t_out + step) * c;
        p.extend_from_slice(&pred[base + off..base + off + c]);
        t.extend_from_slice(&truth[off..off + c]);
    }
    (p, t)
}
