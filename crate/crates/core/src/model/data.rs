use std::ops::Range;

use crate::embedding::{Calendar, SignalWindow};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multichannel series: values `[S, N, C]` with one calendar entry per step.
#[derive(Clone, Debug)]
pub struct Signal {
    pub values: Tensor,
    pub calendar: Vec<Calendar>,
}

impl Signal {
    pub fn new(values: Tensor, calendar: Vec<Calendar>) -> Result<Self> {
        if values.rank() != 3 || values.shape()[0] != calendar.len() {
            return Err(Error::Dimension {
                op: "signal",
                lhs: values.shape().to_vec(),
                rhs: vec![calendar.len()],
            });
        }
        Ok(Self { values, calendar })
    }

    pub fn n_steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn at(&self, step: usize, node: usize, channel: usize) -> f64 {
        let (n, c) = (self.n_nodes(), self.channels());
        self.values.data()[(step * n + node) * c + channel]
    }

    /// Values of steps `range` as `[len, N, C]`.
    pub fn steps(&self, range: Range<usize>) -> Result<Tensor> {
        self.values.narrow(0, range.start, range.len())
    }
}

/// Calendar of `len` consecutive steps starting at `first`.
pub fn calendar_from(first: Calendar, len: usize, steps_per_day: usize) -> Vec<Calendar> {
    let start = first.day_of_week * steps_per_day + first.step_of_day;
    (0..len)
        .map(|k| {
            let s = start + k;
            Calendar {
                day_of_week: (s / steps_per_day) % 7,
                step_of_day: s % steps_per_day,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitPolicy {
    /// Proportions of the series, e.g. 7:1:2.
    Ratio { train: f64, val: f64, test: f64 },
    /// Whole days for each part, counted from the first step.
    Days { train: usize, val: usize, test: usize },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::Ratio {
            train: 7.0,
            val: 1.0,
            test: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous train/val/test step ranges, in that order.
pub fn split_steps(n_steps: usize, policy: SplitPolicy, steps_per_day: usize) -> Result<Splits> {
    let (a, b) = match policy {
        SplitPolicy::Ratio { train, val, test } => {
            if [train, val, test].iter().any(|r| !r.is_finite() || *r < 0.0) || train + val + test <= 0.0 {
                return Err(Error::input("split ratios must be nonnegative with a positive sum"));
            }
            let total = train + val + test;
            let a = (n_steps as f64 * train / total).floor() as usize;
            let b = a + (n_steps as f64 * val / total).floor() as usize;
            (a, b.min(n_steps))
        }
        SplitPolicy::Days { train, val, test } => {
            let needed = (train + val + test) * steps_per_day;
            if needed > n_steps {
                return Err(Error::input(format!(
                    "day split needs {needed} steps, series has {n_steps}"
                )));
            }
            (train * steps_per_day, (train + val) * steps_per_day)
        }
    };
    let end = match policy {
        SplitPolicy::Days { train, val, test } => (train + val + test) * steps_per_day,
        SplitPolicy::Ratio { .. } => n_steps,
    };
    Ok(Splits {
        train: 0..a,
        val: a..b,
        test: b..end,
    })
}

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits over every entry of `values` whose last axis is the channel.
    pub fn fit(values: &Tensor) -> Result<Self> {
        let c = *values
            .shape()
            .last()
            .ok_or_else(|| Error::contract("normalisation needs a channel axis"))?;
        let rows = values.len() / c.max(1);
        if rows == 0 {
            return Err(Error::input("cannot fit normalisation on an empty signal"));
        }
        let mut mean = vec![0.0; c];
        for row in values.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for row in values.data().chunks(c) {
            for k in 0..c {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / rows as f64).sqrt()).collect();
        if let Some(k) = std.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::input(format!("channel {k} is degenerate (zero standard deviation)")));
        }
        Ok(Self { mean, std })
    }

    fn check(&self, values: &Tensor) -> Result<usize> {
        let c = self.mean.len();
        if values.shape().last() != Some(&c) {
            return Err(Error::Dimension {
                op: "normalise",
                lhs: values.shape().to_vec(),
                rhs: vec![c],
            });
        }
        Ok(c)
    }

    pub fn apply(&self, values: &Tensor) -> Result<Tensor> {
        let c = self.check(values)?;
        let mut out = values.clone();
        for row in out.data_mut().chunks_mut(c) {
            for k in 0..c {
                row[k] = (row[k] - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, values: &Tensor) -> Result<Tensor> {
        let c = self.check(values)?;
        let mut out = values.clone();
        for row in out.data_mut().chunks_mut(c) {
            for k in 0..c {
                row[k] = row[k] * self.std[k] + self.mean[k];
            }
        }
        Ok(out)
    }
}

/// Normalises `values`, fitting the statistics first when none are given.
pub fn zscore_fit_apply(values: &Tensor, stats: Option<&NormStats>) -> Result<(Tensor, NormStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(values)?,
    };
    Ok((stats.apply(values)?, stats))
}

/// One training example: a normalised input window and the raw future values.
#[derive(Clone, Debug)]
pub struct Sample {
    /// First input step within the series.
    pub start: usize,
    pub input: SignalWindow,
    /// `[N, T', C]`, not normalised.
    pub target: Tensor,
}

/// Every stride-1 window with input and target inside `range`.
pub fn make_samples(
    signal: &Signal,
    range: Range<usize>,
    horizon: usize,
    out_horizon: usize,
    stats: &NormStats,
) -> Result<Vec<Sample>> {
    let span = horizon + out_horizon;
    if range.end > signal.n_steps() {
        return Err(Error::contract("sample range exceeds the series"));
    }
    if range.len() < span {
        return Ok(Vec::new());
    }
    (range.start..=range.end - span)
        .map(|s| {
            let input = stats.apply(&signal.steps(s..s + horizon)?)?.permute(&[1, 0, 2])?;
            let target = signal.steps(s + horizon..s + span)?.permute(&[1, 0, 2])?;
            Ok(Sample {
                start: s,
                input: SignalWindow::new(input, signal.calendar[s..s + horizon].to_vec())?,
                target,
            })
        })
        .collect()
}

/// Normalisation statistics and the windows of each split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub stats: NormStats,
    pub splits: Splits,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Fits normalisation on the training steps only and cuts windows per split.
pub fn prepare(
    signal: &Signal,
    policy: SplitPolicy,
    steps_per_day: usize,
    horizon: usize,
    out_horizon: usize,
) -> Result<PreparedData> {
    let splits = split_steps(signal.n_steps(), policy, steps_per_day)?;
    let stats = NormStats::fit(&signal.steps(splits.train.clone())?)?;
    let cut = |r: &Range<usize>| make_samples(signal, r.clone(), horizon, out_horizon, &stats);
    Ok(PreparedData {
        train: cut(&splits.train)?,
        val: cut(&splits.val)?,
        test: cut(&splits.test)?,
        stats: stats.clone(),
        splits,
    })
}
