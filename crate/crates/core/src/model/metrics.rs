use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::data::Signal;

/// MAE, MAPE (percent) and RMSE over the points with nonzero truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub evaluated: usize,
    pub excluded_zero: usize,
}

impl MetricsReport {
    /// Scores `pred` against `truth` entry by entry; every scalar entry is one
    /// point, and points whose truth is exactly 0 are skipped by all three metrics.
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension {
                op: "metrics",
                lhs: vec![pred.len()],
                rhs: vec![truth.len()],
            });
        }
        let mut acc = Accumulator::default();
        acc.add(pred, truth);
        Ok(acc.finish())
    }
}

/// Streaming sums behind [`MetricsReport`].
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    abs: f64,
    pct: f64,
    sq: f64,
    count: usize,
    zeros: usize,
}

impl Accumulator {
    pub fn add(&mut self, pred: &[f64], truth: &[f64]) {
        for (&p, &t) in pred.iter().zip(truth) {
            if t == 0.0 {
                self.zeros += 1;
                continue;
            }
            let e = p - t;
            self.abs += e.abs();
            self.pct += (e / t).abs();
            self.sq += e * e;
            self.count += 1;
        }
    }

    pub fn finish(&self) -> MetricsReport {
        let n = self.count.max(1) as f64;
        MetricsReport {
            mae: self.abs / n,
            mape: 100.0 * self.pct / n,
            rmse: (self.sq / n).sqrt(),
            evaluated: self.count,
            excluded_zero: self.zeros,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MAE {:.4}  MAPE {:.4}%  RMSE {:.4}  (points {}, zero-excluded {})",
            self.mae, self.mape, self.rmse, self.evaluated, self.excluded_zero
        )
    }
}

/// Historical average: each requested step is predicted by the mean of the
/// values exactly `k * period` steps earlier, over every `k >= 1` in range.
/// Returns `[targets.len(), N, C]`.
pub fn ha_baseline(signal: &Signal, targets: &[usize], period: usize) -> Result<Tensor> {
    if period == 0 {
        return Err(Error::contract("historical average needs a positive period"));
    }
    let (n, c) = (signal.n_nodes(), signal.channels());
    let width = n * c;
    let mut out = Vec::with_capacity(targets.len() * width);
    for &s in targets {
        if s >= signal.n_steps() {
            return Err(Error::contract(format!("target step {s} outside the series")));
        }
        if s < period {
            return Err(Error::contract(format!(
                "step {s} has no prior week (period {period} steps)"
            )));
        }
        let mut sum = vec![0.0; width];
        let mut weeks = 0usize;
        let mut back = s;
        while back >= period {
            back -= period;
            let row = &signal.values.data()[back * width..(back + 1) * width];
            for (a, v) in sum.iter_mut().zip(row) {
                *a += v;
            }
            weeks += 1;
        }
        out.extend(sum.into_iter().map(|v| v / weeks as f64));
    }
    Tensor::new(vec![targets.len(), n, c], out)
}
