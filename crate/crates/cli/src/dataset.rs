use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use stgatt::embedding::Calendar;
use stgatt::model::Signal;
use stgatt::tensor::Tensor;
use stgatt::{Error, Result};

const TIME_FORMATS: &[&str] = &["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
}

/// One channel read from CSV: timestamps and `[S][N]` values.
#[derive(Clone, Debug)]
pub struct ChannelTable {
    pub times: Vec<NaiveDateTime>,
    pub rows: Vec<Vec<f64>>,
}

/// Parses `timestamp,v_0,...,v_{N-1}` rows. A first row whose leading cell is
/// not a timestamp is taken as a header.
pub fn parse_channel(text: &str, origin: &str) -> Result<ChannelTable> {
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Input(format!("{origin}:{}: {msg}", lineno + 1));
        let mut cells = line.split(',');
        let first = cells.next().unwrap_or("");
        let Some(time) = parse_timestamp(first) else {
            if times.is_empty() && rows.is_empty() && lineno == 0 {
                continue;
            }
            return Err(at(format!("invalid timestamp '{first}'")));
        };
        let values = cells
            .map(|c| c.trim().parse::<f64>().map_err(|_| at(format!("invalid number '{}'", c.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(at(format!("non-finite value {v}")));
        }
        if let Some(prev) = rows.first() {
            if prev.len() != values.len() {
                return Err(at(format!("expected {} value columns, found {}", prev.len(), values.len())));
            }
        }
        times.push(time);
        rows.push(values);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Input(format!("{origin}: no data rows")));
    }
    Ok(ChannelTable { times, rows })
}

pub fn calendar_of(time: &NaiveDateTime, interval_min: usize) -> Calendar {
    let minutes = time.hour() as usize * 60 + time.minute() as usize;
    Calendar {
        day_of_week: time.weekday().num_days_from_monday() as usize,
        step_of_day: minutes / interval_min,
    }
}

/// Reads one CSV per channel into a signal `[S, N, C]`. Timestamps must be
/// identical across files and spaced exactly `interval_min` apart.
pub fn load_signal(paths: &[impl AsRef<Path>], interval_min: usize, n_nodes: Option<usize>) -> Result<(Signal, Vec<NaiveDateTime>)> {
    if paths.is_empty() {
        return Err(Error::Input("no signal file given (--signal)".into()));
    }
    let mut tables = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
        tables.push(parse_channel(&text, &p.display().to_string())?);
    }
    let first = &tables[0];
    let (steps, n) = (first.rows.len(), first.rows[0].len());
    if let Some(expected) = n_nodes {
        if n != expected {
            return Err(Error::Input(format!(
                "signal has {n} node columns, graph has {expected} nodes"
            )));
        }
    }
    let step = chrono::Duration::minutes(interval_min as i64);
    for (k, pair) in first.times.windows(2).enumerate() {
        if pair[1] - pair[0] != step {
            return Err(Error::Input(format!(
                "timestamps {} and {} (rows {} and {}) are not {interval_min} minutes apart",
                pair[0],
                pair[1],
                k + 1,
                k + 2
            )));
        }
    }
    let t0 = first.times[0];
    if t0.second() != 0 || (t0.hour() as usize * 60 + t0.minute() as usize) % interval_min != 0 {
        return Err(Error::Input(format!(
            "first timestamp {} is not aligned to the {interval_min}-minute grid",
            first.times[0]
        )));
    }
    for (c, t) in tables.iter().enumerate().skip(1) {
        if t.times != first.times || t.rows[0].len() != n {
            return Err(Error::Input(format!("channel file {c} does not share the timestamps and columns of the first")));
        }
    }
    let c = tables.len();
    let mut data = Vec::with_capacity(steps * n * c);
    for s in 0..steps {
        for node in 0..n {
            for t in &tables {
                data.push(t.rows[s][node]);
            }
        }
    }
    let calendar = first.times.iter().map(|t| calendar_of(t, interval_min)).collect();
    let signal = Signal::new(Tensor::new(vec![steps, n, c], data)?, calendar)?;
    Ok((signal, first.times.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_skipped_and_calendar_derived() {
        let text = "time,a,b\n2012-03-05 00:05:00,1,2\n2012-03-05T00:10:00,3,4\n";
        let t = parse_channel(text, "x").unwrap();
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let cal = calendar_of(&t.times[1], 5);
        assert_eq!(cal, Calendar { day_of_week: 0, step_of_day: 2 });
    }

    #[test]
    fn bad_cells_report_line_numbers() {
        let err = parse_channel("2012-03-05 00:00:00,1,x\n", "f.csv").unwrap_err();
        assert!(err.to_string().contains("f.csv:1"), "{err}");
        let err = parse_channel("2012-03-05 00:00:00,1\n2012-03-05 00:05:00,1,2\n", "f").unwrap_err();
        assert!(err.to_string().contains("f:2"), "{err}");
    }
}
