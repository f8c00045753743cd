use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::eval::DEFAULT_NEGATIVES;

/// Which session kinds and side information a run trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Configuration {
    P,
    PStyle,
    PCart,
    PCartStyle,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [
        Configuration::P,
        Configuration::PStyle,
        Configuration::PCart,
        Configuration::PCartStyle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Configuration::P => "P",
            Configuration::PStyle => "P+Style",
            Configuration::PCart => "P+Cart",
            Configuration::PCartStyle => "P+Cart+Style",
        }
    }

    pub fn uses_cart(self) -> bool {
        matches!(self, Configuration::PCart | Configuration::PCartStyle)
    }

    pub fn uses_style(self) -> bool {
        matches!(self, Configuration::PStyle | Configuration::PCartStyle)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown configuration {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 penalty used by single runs.
    pub l2: f64,
    pub l2_grid: Vec<f64>,
    /// Feed-forward widths searched by the sweep.
    pub hidden_grid: Vec<usize>,
    pub seed: u64,
    pub configuration: Configuration,
    /// Negatives per session during validation and testing.
    pub eval_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            epochs: 20,
            l2: 1e-5,
            l2_grid: vec![0.1, 0.001, 0.0001, 0.00001],
            hidden_grid: vec![8, 16, 32, 64, 128, 256],
            seed: 0,
            configuration: Configuration::P,
            eval_negatives: DEFAULT_NEGATIVES,
        }
    }
}

const KEYS: [&str; 9] = [
    "lr",
    "batch_size",
    "epochs",
    "l2",
    "l2_grid",
    "hidden_grid",
    "seed",
    "configuration",
    "eval_negatives",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value for {key}: {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| num(key, s))
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        if self.l2_grid.is_empty() || self.hidden_grid.is_empty() {
            return Err(Error::config("sweep grids must be nonempty"));
        }
        if let Some(bad) = self
            .l2_grid
            .iter()
            .chain([&self.l2])
            .find(|l| !(**l >= 0.0 && l.is_finite()))
        {
            return Err(Error::config(format!(
                "L2 penalty must be non-negative, got {bad}"
            )));
        }
        if self.hidden_grid.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.eval_negatives == 0 {
            return Err(Error::config("eval_negatives must be positive"));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "l2" => self.l2.to_string(),
            "l2_grid" => join(&self.l2_grid),
            "hidden_grid" => join(&self.hidden_grid),
            "seed" => self.seed.to_string(),
            "configuration" => self.configuration.to_string(),
            "eval_negatives" => self.eval_negatives.to_string(),
            _ => return None,
        })
    }

    /// Sets one field from its text form. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "l2_grid" => self.l2_grid = list(key, value)?,
            "hidden_grid" => self.hidden_grid = list(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "configuration" => self.configuration = value.trim().parse()?,
            "eval_negatives" => self.eval_negatives = num(key, value)?,
            _ => return Err(Error::config(format!("unknown training setting {key:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }
}
