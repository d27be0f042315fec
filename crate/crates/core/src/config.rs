//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is valid. Recognized keys (defaults in
//! parentheses):
//!
//! | key | meaning |
//! |-----|---------|
//! | `depth` (100), `width` (10) | pair-matrix geometry |
//! | `error_rate` (0.01) | per-cell sequencing error probability |
//! | `germline_het_prob` (0.01) | per-locus germline het probability |
//! | `vaf_lo` (0.1), `vaf_hi` (0.9) | somatic VAF range |
//! | `positive_fraction` (0.5) | somatic share before balancing |
//! | `coverage` (90) | mean covered reads per half |
//! | `n_examples` (8000) | examples generated by `simulate` |
//! | `balance` (false) | undersample the majority class after simulating |
//! | `seed` (42) | master seed for simulation, splitting, training, evaluation |
//! | `hidden1` (32), `hidden2` (32), `dense_units` (32) | model widths |
//! | `head` (bayes) | `standard` or `bayes` |
//! | `epochs` (10), `batch_size` (64) | training loop |
//! | `train_fraction` (0.8) | train/test split |
//! | `prior_sigma` (1.0) | Gaussian prior scale |
//! | `learning_rate` (0.001), `beta1` (0.9), `beta2` (0.999), `adam_eps` (1e-8) | Adam |
//! | `n_mc` (50) | posterior draws per prediction |
//! | `tau` (0.6) | max-probability threshold for "uncertain" |
//! | `mask_rows` (31..100) | 1-based inclusive rows blacked out by `mask-eval` |
//! | `dataset`, `checkpoint`, `report_dir` | default paths |

use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{HeadKind, ModelSpec};
use crate::optim::AdamConfig;
use crate::pileup::SimulatorConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_mc: usize,
    pub tau: f64,
    /// 1-based inclusive row range.
    pub mask_rows: (usize, usize),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_mc: 50,
            tau: 0.6,
            mask_rows: (31, 100),
        }
    }
}

impl EvalConfig {
    pub fn mask_range(&self) -> RangeInclusive<usize> {
        self.mask_rows.0..=self.mask_rows.1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Its `seed` is the master seed for the whole run.
    pub sim: SimulatorConfig,
    pub n_examples: usize,
    pub balance: bool,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dense_units: usize,
    pub head: HeadKind,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimulatorConfig::default(),
            n_examples: 8000,
            balance: false,
            hidden1: 32,
            hidden2: 32,
            dense_units: 32,
            head: HeadKind::VariationalFlipout,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{value}`"),
    })
}

/// Parses `LO..HI` (1-based, inclusive).
pub fn parse_row_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let (lo, hi) = value.split_once("..").ok_or_else(|| Error::Config {
        key: key.into(),
        message: format!("`{value}` is not of the form LO..HI"),
    })?;
    let lo: usize = parse(key, lo.trim())?;
    let hi: usize = parse(key, hi.trim().trim_start_matches('='))?;
    if lo == 0 || lo > hi {
        return Err(Error::Config {
            key: key.into(),
            message: format!("`{value}` is not a non-empty 1-based range"),
        });
    }
    Ok((lo, hi))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            message: format!("`{value}` is not a boolean"),
        }),
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.sim.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.train.seed = seed;
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "depth" => self.sim.depth = parse(key, v)?,
            "width" => self.sim.width = parse(key, v)?,
            "error_rate" => self.sim.error_rate = parse(key, v)?,
            "germline_het_prob" => self.sim.germline_het_prob = parse(key, v)?,
            "vaf_lo" => self.sim.vaf_lo = parse(key, v)?,
            "vaf_hi" => self.sim.vaf_hi = parse(key, v)?,
            "positive_fraction" => self.sim.positive_fraction = parse(key, v)?,
            "coverage" => self.sim.coverage = parse(key, v)?,
            "n_examples" => self.n_examples = parse(key, v)?,
            "balance" => self.balance = parse_bool(key, v)?,
            "seed" => self.set_seed(parse(key, v)?),
            "hidden1" => self.hidden1 = parse(key, v)?,
            "hidden2" => self.hidden2 = parse(key, v)?,
            "dense_units" => self.dense_units = parse(key, v)?,
            "head" => self.head = v.parse()?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "train_fraction" => self.train.train_fraction = parse(key, v)?,
            "prior_sigma" => self.train.prior_sigma = parse(key, v)?,
            "learning_rate" => self.train.adam.learning_rate = parse(key, v)?,
            "beta1" => self.train.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "n_mc" => self.eval.n_mc = parse(key, v)?,
            "tau" => self.eval.tau = parse(key, v)?,
            "mask_rows" => self.eval.mask_rows = parse_row_range(key, v)?,
            "dataset" => self.paths.dataset = Some(PathBuf::from(v)),
            "checkpoint" => self.paths.checkpoint = Some(PathBuf::from(v)),
            "report_dir" => self.paths.report_dir = Some(PathBuf::from(v)),
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    message: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.into(),
                message: format!("line {} is not `key = value`", lineno + 1),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides, e.g. from `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.into(),
                message: "override is not `key=value`".into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model_spec(self.head)?;
        self.train.validate()?;
        if self.eval.n_mc == 0 {
            return Err(Error::Config {
                key: "n_mc".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.eval.tau) {
            return Err(Error::Config {
                key: "tau".into(),
                message: format!("{} not in [0, 1]", self.eval.tau),
            });
        }
        Ok(())
    }

    pub fn model_spec(&self, head: HeadKind) -> Result<ModelSpec> {
        ModelSpec::new(
            self.sim.depth,
            self.sim.width,
            self.hidden1,
            self.hidden2,
            self.dense_units,
            head,
        )
        .map_err(|e| Error::Config {
            key: "hidden1".into(),
            message: e.to_string(),
        })
    }

    /// Fully resolved configuration in the same format [`RunConfig::from_text`] reads.
    pub fn to_text(&self) -> String {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.train.adam;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("depth", self.sim.depth.to_string());
        kv("width", self.sim.width.to_string());
        kv("error_rate", self.sim.error_rate.to_string());
        kv("germline_het_prob", self.sim.germline_het_prob.to_string());
        kv("vaf_lo", self.sim.vaf_lo.to_string());
        kv("vaf_hi", self.sim.vaf_hi.to_string());
        kv("positive_fraction", self.sim.positive_fraction.to_string());
        kv("coverage", self.sim.coverage.to_string());
        kv("n_examples", self.n_examples.to_string());
        kv("balance", self.balance.to_string());
        kv("seed", self.seed().to_string());
        kv("hidden1", self.hidden1.to_string());
        kv("hidden2", self.hidden2.to_string());
        kv("dense_units", self.dense_units.to_string());
        kv("head", self.head.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("train_fraction", self.train.train_fraction.to_string());
        kv("prior_sigma", self.train.prior_sigma.to_string());
        kv("learning_rate", learning_rate.to_string());
        kv("beta1", beta1.to_string());
        kv("beta2", beta2.to_string());
        kv("adam_eps", eps.to_string());
        kv("n_mc", self.eval.n_mc.to_string());
        kv("tau", self.eval.tau.to_string());
        kv(
            "mask_rows",
            format!("{}..{}", self.eval.mask_rows.0, self.eval.mask_rows.1),
        );
        for (k, p) in [
            ("dataset", &self.paths.dataset),
            ("checkpoint", &self.paths.checkpoint),
            ("report_dir", &self.paths.report_dir),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        s
    }
}
