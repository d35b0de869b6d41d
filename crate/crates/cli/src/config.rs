//! Flat key/value settings shared by every subcommand.
//!
//! Layers apply in order: built-in defaults, a config file, the
//! `KGALIGN_SEED` environment variable, then command-line flags.

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use kgalign_core::eval::Candidates;
use kgalign_core::kg::SplitRatio;
use kgalign_core::rpr::{DEFAULT_MAX_FANOUT, DEFAULT_TAU_PATH, DEFAULT_TAU_SIM};
use kgalign_core::{EncoderConfig, MineConfig, NegativeStrategy, TrainConfig};
use serde::Serialize;

pub const SEED_ENV: &str = "KGALIGN_SEED";

/// Invocation mistake: bad flag, key or value. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub split: String,

    pub tau_sim: f64,
    /// `inf` keeps no path.
    pub tau_path: String,
    pub max_fanout: usize,
    pub inverse: bool,

    pub layers: usize,
    pub heads: usize,
    pub dim: usize,

    pub gamma_rel: f64,
    pub gamma_path: f64,
    pub theta: f64,
    pub negatives: usize,
    pub strategy: String,
    pub resample_every: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub use_paths: bool,

    pub theta_inf: f64,
    pub candidates: String,
    pub harder: f64,
    pub top_k: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EncoderConfig::default();
        Self {
            seed: t.seed,
            split: SplitRatio::DEFAULT.to_string(),
            tau_sim: DEFAULT_TAU_SIM,
            tau_path: DEFAULT_TAU_PATH.to_string(),
            max_fanout: DEFAULT_MAX_FANOUT,
            inverse: false,
            layers: e.layers,
            heads: e.heads,
            dim: e.dim,
            gamma_rel: t.gamma_rel,
            gamma_path: t.gamma_path,
            theta: t.theta,
            negatives: t.negatives_per_pair,
            strategy: t.strategy.to_string(),
            resample_every: t.resample_every,
            epochs: t.epochs,
            lr: t.lr,
            eval_every: t.eval_every,
            patience: t.patience,
            use_paths: t.use_paths,
            theta_inf: t.theta_inf,
            candidates: "all".into(),
            harder: 1.0,
            top_k: 10,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "split",
    "tau_sim",
    "tau_path",
    "max_fanout",
    "inverse",
    "layers",
    "heads",
    "dim",
    "gamma_rel",
    "gamma_path",
    "theta",
    "negatives",
    "strategy",
    "resample_every",
    "epochs",
    "lr",
    "eval_every",
    "patience",
    "use_paths",
    "theta_inf",
    "candidates",
    "harder",
    "top_k",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| usage(format!("bad value {value:?} for `{key}`: {e}")))
}

fn checked<T: std::str::FromStr>(key: &str, value: &str) -> Result<String>
where
    T::Err: fmt::Display,
{
    parse::<T>(key, value)?;
    Ok(value.trim().to_owned())
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                let seed: u64 = parse(key, value)?;
                if seed > i64::MAX as u64 {
                    return Err(usage(format!("seed {seed} is above {}", i64::MAX)));
                }
                self.seed = seed;
            }
            "split" => self.split = checked::<SplitRatio>(key, value)?,
            "tau_sim" => self.tau_sim = parse(key, value)?,
            "tau_path" => {
                parse_tau_path(value)?;
                self.tau_path = value.trim().to_owned();
            }
            "max_fanout" => self.max_fanout = parse(key, value)?,
            "inverse" => self.inverse = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "gamma_rel" => self.gamma_rel = parse(key, value)?,
            "gamma_path" => self.gamma_path = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "strategy" => self.strategy = checked::<NegativeStrategy>(key, value)?,
            "resample_every" => self.resample_every = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "use_paths" => self.use_paths = parse(key, value)?,
            "theta_inf" => self.theta_inf = parse(key, value)?,
            "candidates" => self.candidates = checked::<Candidates>(key, value)?,
            "harder" => self.harder = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            other => {
                return Err(usage(format!(
                    "unknown config key `{other}`; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Value of `key` rendered as it would appear in a config file.
    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<String> {
        let table = toml::Table::try_from(self).ok()?;
        table.get(key).map(render)
    }

    /// Applies every entry of a flat TOML table.
    pub fn apply_toml(&mut self, text: &str, origin: &str) -> Result<()> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| usage(format!("{origin}: {e}")))?;
        for (key, value) in &table {
            if value.is_table() || value.is_array() {
                return Err(usage(format!("{origin}: `{key}` must be a plain value")));
            }
            self.set(key, &render(value)).with_context(|| origin.to_owned())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        self.apply_toml(&text, &path.display().to_string())
    }

    pub fn apply_env(&mut self, seed: Option<&str>) -> Result<()> {
        if let Some(v) = seed {
            self.set("seed", v).with_context(|| SEED_ENV)?;
        }
        Ok(())
    }

    /// `key=value` overrides from `--set`.
    pub fn apply_pairs(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got {p:?}")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn split_ratio(&self) -> Result<SplitRatio> {
        Ok(self.split.parse()?)
    }

    pub fn mine_config(&self) -> Result<MineConfig> {
        Ok(MineConfig {
            tau_sim: self.tau_sim,
            tau_path: parse_tau_path(&self.tau_path)?,
            max_fanout: self.max_fanout,
        })
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let e = EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
        };
        e.validate().map_err(|err| usage(err.to_string()))?;
        Ok(e)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            gamma_rel: self.gamma_rel,
            gamma_path: self.gamma_path,
            theta: self.theta,
            negatives_per_pair: self.negatives,
            strategy: self.strategy.parse()?,
            resample_every: self.resample_every,
            epochs: self.epochs,
            lr: self.lr,
            eval_every: self.eval_every,
            patience: self.patience,
            use_paths: self.use_paths,
            seed: self.seed,
            theta_inf: self.theta_inf,
        };
        t.validate().map_err(|err| usage(err.to_string()))?;
        Ok(t)
    }

    pub fn candidates(&self) -> Result<Candidates> {
        Ok(self.candidates.parse()?)
    }
}

fn render(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_tau_path(value: &str) -> Result<u64> {
    match value.trim() {
        "inf" | "max" => Ok(u64::MAX),
        v => parse("tau_path", v),
    }
}
