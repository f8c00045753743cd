use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::DEFAULT_MAX_LEN;
use crate::error::{Error, Result};
use crate::style::STYLE_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_product: usize,
    /// Width of the sinusoidal position code.
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Inner width of the position-wise feed-forward layer. `None` means
    /// four times the input width.
    pub d_ffn: Option<usize>,
    pub dropout: f64,
    pub use_style: bool,
    /// Factor applied to the standardized style vectors. `None` means
    /// `sqrt(d_product / 512)`, which gives the style block the same expected
    /// squared norm as a product embedding row.
    pub style_scale: Option<f64>,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_product: 128,
            d_model: 128,
            n_blocks: 2,
            n_heads: 2,
            d_ffn: None,
            dropout: 0.1,
            use_style: false,
            style_scale: None,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

const KEYS: [&str; 9] = [
    "d_product",
    "d_model",
    "n_blocks",
    "n_heads",
    "d_ffn",
    "dropout",
    "use_style",
    "style_scale",
    "max_len",
];

impl ModelConfig {
    /// 8 heads over 1024-wide product embeddings.
    pub fn wide() -> Self {
        ModelConfig {
            d_product: 1024,
            n_heads: 8,
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_product + self.d_model + if self.use_style { STYLE_DIM } else { 0 }
    }

    pub fn head_dim(&self) -> usize {
        self.input_dim() / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_ffn.unwrap_or(4 * self.input_dim())
    }

    pub fn style_factor(&self) -> f64 {
        self.style_scale
            .unwrap_or_else(|| (self.d_product as f64 / STYLE_DIM as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_product == 0 || self.n_blocks == 0 || self.n_heads == 0 {
            return Err(Error::config(
                "d_product, n_blocks and n_heads must be positive",
            ));
        }
        if self.d_model == 0 || self.d_model % 2 == 1 {
            return Err(Error::config(format!(
                "d_model must be a positive even number, got {}",
                self.d_model
            )));
        }
        if !self.input_dim().is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "input width {} is not divisible by {} heads",
                self.input_dim(),
                self.n_heads
            )));
        }
        if self.d_ffn == Some(0) {
            return Err(Error::config("d_ffn must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        if let Some(s) = self.style_scale.filter(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config(format!(
                "style_scale must be positive, got {s}"
            )));
        }
        if self.max_len < 2 {
            return Err(Error::config(format!(
                "max_len must be at least 2, got {}",
                self.max_len
            )));
        }
        Ok(())
    }

    /// One `key=value` line per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value, got {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut config = ModelConfig::default();
        for (k, v) in &map {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d_product" => self.d_product.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_blocks" => self.n_blocks.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "d_ffn" => self.d_ffn.map_or_else(|| "auto".into(), |v| v.to_string()),
            "dropout" => self.dropout.to_string(),
            "use_style" => self.use_style.to_string(),
            "style_scale" => self
                .style_scale
                .map_or_else(|| "auto".into(), |v| v.to_string()),
            "max_len" => self.max_len.to_string(),
            _ => return None,
        })
    }

    /// Sets one field from its text form. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "d_product" => self.d_product = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_blocks" => self.n_blocks = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "d_ffn" => {
                self.d_ffn = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "dropout" => self.dropout = num(key, value)?,
            "use_style" => self.use_style = num(key, value)?,
            "style_scale" => {
                self.style_scale = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "max_len" => self.max_len = num(key, value)?,
            _ => return Err(Error::config(format!("unknown model setting {key:?}"))),
        }
        Ok(())
    }
}
