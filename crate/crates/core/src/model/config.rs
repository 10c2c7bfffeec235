use std::fmt;

use crate::error::{Error, Result};

/// Hyper-parameters and shapes of a forecaster.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// N.
    pub n_nodes: usize,
    /// T, input steps.
    pub horizon: usize,
    /// T', predicted steps.
    pub out_horizon: usize,
    /// C.
    pub channels: usize,
    /// D.
    pub d_model: usize,
    /// R, Laplacian eigenvectors in the spatial embedding.
    pub spe_rank: usize,
    /// γ, steps per day.
    pub steps_per_day: usize,
    /// H, stacked blocks.
    pub n_blocks: usize,
    /// H', attention heads.
    pub n_heads: usize,
    /// l, neighbourhood subsets per scheme.
    pub n_subsets: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_nodes: 0,
            horizon: 12,
            out_horizon: 12,
            channels: 1,
            d_model: 16,
            spe_rank: 16,
            steps_per_day: 288,
            n_blocks: 4,
            n_heads: 4,
            n_subsets: 40,
            seed: 0,
            learning_rate: 0.001,
            batch_size: 8,
            epochs: 100,
            clip_norm: Some(5.0),
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in serialisation order.
pub const CONFIG_KEYS: &[&str] = &[
    "n_nodes",
    "horizon",
    "out_horizon",
    "channels",
    "d_model",
    "spe_rank",
    "steps_per_day",
    "blocks",
    "heads",
    "subsets",
    "seed",
    "learning_rate",
    "batch_size",
    "epochs",
    "clip_norm",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("invalid value '{value}' for {key}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(msg));
        if self.horizon == 0 || self.out_horizon == 0 {
            return fail("horizon and out_horizon must be at least 1".into());
        }
        if self.channels == 0 || self.d_model == 0 {
            return fail("channels and d_model must be at least 1".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.n_heads));
        }
        if self.n_nodes == 0 || self.spe_rank == 0 || self.spe_rank >= self.n_nodes {
            return fail(format!(
                "spe_rank must satisfy 1 <= R < N (R = {}, N = {})",
                self.spe_rank, self.n_nodes
            ));
        }
        if self.n_subsets == 0 || self.n_subsets > self.n_nodes {
            return fail(format!("subsets {} must be in 1..={}", self.n_subsets, self.n_nodes));
        }
        if self.steps_per_day == 0 || self.batch_size == 0 {
            return fail("steps_per_day and batch_size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if let Some(c) = self.clip_norm {
            if !c.is_finite() || c <= 0.0 {
                return fail(format!("clip_norm {c} must be positive"));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form. Unknown keys are input errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_nodes" => self.n_nodes = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "out_horizon" => self.out_horizon = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "spe_rank" => self.spe_rank = parse(key, value)?,
            "steps_per_day" => self.steps_per_day = parse(key, value)?,
            "blocks" => self.n_blocks = parse(key, value)?,
            "heads" => self.n_heads = parse(key, value)?,
            "subsets" => self.n_subsets = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value.trim() {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Err(Error::input(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_nodes" => self.n_nodes.to_string(),
            "horizon" => self.horizon.to_string(),
            "out_horizon" => self.out_horizon.to_string(),
            "channels" => self.channels.to_string(),
            "d_model" => self.d_model.to_string(),
            "spe_rank" => self.spe_rank.to_string(),
            "steps_per_day" => self.steps_per_day.to_string(),
            "blocks" => self.n_blocks.to_string(),
            "heads" => self.n_heads.to_string(),
            "subsets" => self.n_subsets.to_string(),
            "seed" => self.seed.to_string(),
            // `{:?}` prints the shortest string that parses back to the same f64.
            "learning_rate" => format!("{:?}", self.learning_rate),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "clip_norm" => match self.clip_norm {
                Some(c) => format!("{c:?}"),
                None => "none".to_string(),
            },
            _ => return None,
        })
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        CONFIG_KEYS
            .iter()
            .map(|&k| (k.to_string(), self.get(k).expect("listed key")))
            .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        Ok(config)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
