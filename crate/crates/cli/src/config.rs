//! Run configuration: defaults, then a `key = value` file, then command-line
//! overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use seqrec::data::{MarkovOrder, SyntheticConfig, DEFAULT_MAX_LEN};
use seqrec::model::ModelConfig;
use seqrec::train::{Configuration, EvalMode, TrainConfig};
use seqrec::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub sessions: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub configurations: Vec<Configuration>,
    pub max_lens: Vec<usize>,
    pub budget: Option<usize>,
    pub mode: EvalMode,
    pub split: Split,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            configurations: Configuration::ALL.to_vec(),
            max_lens: (2..=DEFAULT_MAX_LEN).collect(),
            budget: None,
            mode: EvalMode::NegSample,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split {s:?}, expected val or test"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocess {
    pub max_len: usize,
    pub catalog_size: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synth {
    pub config: SyntheticConfig,
    /// Write one pattern image per product, textured by successor cluster.
    pub images: bool,
    pub image_side: usize,
    pub clusters: Option<usize>,
}

impl Default for Synth {
    fn default() -> Self {
        Synth {
            config: SyntheticConfig::default(),
            images: false,
            image_side: 16,
            clusters: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: Experiment,
    pub preprocess: Preprocess,
    pub synth: Synth,
    /// Catalog size for style extraction when no dataset is given.
    pub products: Option<u32>,
    pub pseudo: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            experiment: Experiment::default(),
            preprocess: Preprocess {
                max_len: DEFAULT_MAX_LEN,
                catalog_size: None,
            },
            synth: Synth::default(),
            products: None,
            pseudo: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn configurations(v: &str) -> Result<Vec<Configuration>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn order(v: &str) -> Result<MarkovOrder> {
    match v {
        "first" | "1" => Ok(MarkovOrder::First),
        "second" | "2" => Ok(MarkovOrder::Second),
        _ => Err(Error::Config(format!(
            "unknown chain order {v:?}, expected first or second"
        ))),
    }
}

fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" || v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl RunConfig {
    /// Sets one dotted key. Model and training keys use the names of their
    /// own configuration types.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = |v: &str| Some(PathBuf::from(v));
        match key {
            "seed" => self.seed = parse(key, value)?,
            "products" => self.products = optional(key, value)?,
            "pseudo" => self.pseudo = parse(key, value)?,
            "paths.sessions" => self.paths.sessions = path(value),
            "paths.data" => self.paths.data = path(value),
            "paths.style" => self.paths.style = path(value),
            "paths.checkpoint" => self.paths.checkpoint = path(value),
            "paths.features" => self.paths.features = path(value),
            "paths.images" => self.paths.images = path(value),
            "paths.out" => self.paths.out = path(value),
            "experiment.configurations" => self.experiment.configurations = configurations(value)?,
            "experiment.max_lens" => self.experiment.max_lens = list(key, value)?,
            "experiment.budget" => self.experiment.budget = optional(key, value)?,
            "experiment.mode" => self.experiment.mode = value.parse()?,
            "experiment.split" => self.experiment.split = value.parse()?,
            "preprocess.max_len" => self.preprocess.max_len = parse(key, value)?,
            "preprocess.catalog_size" => self.preprocess.catalog_size = optional(key, value)?,
            "synth.products" => self.synth.config.products = parse(key, value)?,
            "synth.sessions" => self.synth.config.sessions = parse(key, value)?,
            "synth.min_len" => self.synth.config.min_len = parse(key, value)?,
            "synth.max_len" => self.synth.config.max_len = parse(key, value)?,
            "synth.dominant_mass" => self.synth.config.dominant_mass = parse(key, value)?,
            "synth.cart_ratio" => self.synth.config.cart_ratio = parse(key, value)?,
            "synth.order" => self.synth.config.order = order(value)?,
            "synth.images" => self.synth.images = parse(key, value)?,
            "synth.image_side" => self.synth.image_side = parse(key, value)?,
            "synth.clusters" => self.synth.clusters = optional(key, value)?,
            "train.seed" => {
                return Err(Error::Config(
                    "the seed is global; set `seed` instead of `train.seed`".into(),
                ));
            }
            _ => {
                if let Some(k) = key.strip_prefix("model.") {
                    self.model.set(k, value)?;
                } else if let Some(k) = key.strip_prefix("train.") {
                    self.train.set(k, value)?;
                } else {
                    return Err(Error::Config(format!("unknown setting {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{source}:{}: expected key = value",
                    i + 1
                )));
            };
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{source}:{}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input {
            line: None,
            msg: format!("{}: {e}", path.display()),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Copies the global seed into the training configuration and checks
    /// every section.
    pub fn finish(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.synth.config.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        if self.experiment.configurations.is_empty() {
            return Err(Error::Config("experiment.configurations is empty".into()));
        }
        Ok(())
    }

    /// Every effective setting, one `key=value` per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for line in self.model.to_kv().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        for line in self
            .train
            .to_kv()
            .lines()
            .filter(|l| !l.starts_with("seed="))
        {
            let _ = writeln!(s, "train.{line}");
        }
        let labels: Vec<&str> = self
            .experiment
            .configurations
            .iter()
            .map(|c| c.label())
            .collect();
        let lens: Vec<String> = self
            .experiment
            .max_lens
            .iter()
            .map(ToString::to_string)
            .collect();
        let _ = writeln!(s, "experiment.configurations={}", labels.join(","));
        let _ = writeln!(s, "experiment.max_lens={}", lens.join(","));
        let _ = writeln!(s, "experiment.mode={}", self.experiment.mode);
        let _ = writeln!(s, "preprocess.max_len={}", self.preprocess.max_len);
        let sc = &self.synth.config;
        let _ = writeln!(
            s,
            "synth.products={}\nsynth.sessions={}\nsynth.order={:?}\nsynth.dominant_mass={}\nsynth.cart_ratio={}",
            sc.products, sc.sessions, sc.order, sc.dominant_mass, sc.cart_ratio
        );
        s
    }
}

/// Message without the "configuration error: " lead, for nesting.
pub fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Fails with an input error unless `path` exists.
pub fn require(path: Option<&Path>, what: &str) -> Result<PathBuf> {
    let Some(p) = path else {
        return Err(Error::Config(format!("no {what} given")));
    };
    if !p.exists() {
        return Err(Error::Input {
            line: None,
            msg: format!("{what} {} does not exist", p.display()),
        });
    }
    Ok(p.to_path_buf())
}
