use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use stgatt::model::{ModelConfig, SplitPolicy};
use stgatt::{Error, Result};

/// Keys owned by the run rather than the model.
pub const RUN_KEYS: &[&str] = &["graph", "signal", "interval_min", "split", "out_dir", "symmetrize"];

/// Everything a command needs: model settings, input paths and output location.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub graph: Option<PathBuf>,
    /// One file per channel, sharing a timestamp column.
    pub signal: Vec<PathBuf>,
    pub interval_min: usize,
    pub split: SplitPolicy,
    pub out_dir: PathBuf,
    pub symmetrize: bool,
    explicit: HashSet<String>,
}

/// Which keys were set explicitly does not take part in equality.
impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
            && self.graph == other.graph
            && self.signal == other.signal
            && self.interval_min == other.interval_min
            && self.split == other.split
            && self.out_dir == other.out_dir
            && self.symmetrize == other.symmetrize
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            graph: None,
            signal: Vec::new(),
            interval_min: 5,
            split: SplitPolicy::default(),
            out_dir: PathBuf::from("out"),
            symmetrize: true,
            explicit: HashSet::new(),
        }
    }
}

pub fn parse_split(text: &str) -> Result<SplitPolicy> {
    let bad = || Error::Input(format!("invalid split '{text}' (expected ratio:a,b,c or days:a,b,c)"));
    let (kind, rest) = text.trim().split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    match kind.trim() {
        "ratio" => {
            let v: Vec<f64> = parts.iter().map(|p| p.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            Ok(SplitPolicy::Ratio { train: v[0], val: v[1], test: v[2] })
        }
        "days" => {
            let v: Vec<usize> = parts.iter().map(|p| p.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            Ok(SplitPolicy::Days { train: v[0], val: v[1], test: v[2] })
        }
        _ => Err(bad()),
    }
}

pub fn format_split(split: &SplitPolicy) -> String {
    match split {
        SplitPolicy::Ratio { train, val, test } => format!("ratio:{train:?},{val:?},{test:?}"),
        SplitPolicy::Days { train, val, test } => format!("days:{train},{val},{test}"),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::Input(format!("invalid value '{v}' for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "graph" => self.graph = (!value.is_empty()).then(|| PathBuf::from(value)),
            "signal" => {
                self.signal = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "interval_min" => {
                self.interval_min = value
                    .parse()
                    .ok()
                    .filter(|&m: &usize| m > 0 && 1440 % m == 0)
                    .ok_or_else(|| Error::Input(format!("interval_min '{value}' must divide 1440")))?
            }
            "split" => self.split = parse_split(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "symmetrize" => self.symmetrize = parse_bool(key, value)?,
            _ => self.model.set(key, value)?,
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "graph" => self.graph.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "signal" => self
                .signal
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
            "interval_min" => self.interval_min.to_string(),
            "split" => format_split(&self.split),
            "out_dir" => self.out_dir.display().to_string(),
            "symmetrize" => self.symmetrize.to_string(),
            _ => return self.model.get(key),
        })
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("{origin}:{}: expected 'key = value'", lineno + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Input(format!("{origin}:{}: {}", lineno + 1, strip_kind(&e))))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// Derived settings: steps per day follow the interval unless given.
    pub fn finish(&mut self) -> Result<()> {
        let per_day = 1440 / self.interval_min;
        if !self.is_explicit("steps_per_day") {
            self.model.steps_per_day = per_day;
        } else if self.model.steps_per_day != per_day && !self.signal.is_empty() {
            return Err(Error::Input(format!(
                "steps_per_day {} disagrees with interval_min {} ({per_day} steps per day)",
                self.model.steps_per_day, self.interval_min
            )));
        }
        Ok(())
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        stgatt::model::CONFIG_KEYS.iter().chain(RUN_KEYS).copied()
    }
}

/// The effective configuration, one `key = value` per line, reloadable with
/// [`RunConfig::load`].
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# effective configuration")?;
        for key in Self::keys() {
            writeln!(f, "{key} = {}", self.get(key).unwrap_or_default())?;
        }
        Ok(())
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Input(m) | Error::Contract(m) | Error::Numerical(m) => m.clone(),
        other => other.to_string(),
    }
}
