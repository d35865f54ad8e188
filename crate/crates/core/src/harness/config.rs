//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::envs::Family;
use crate::error::{Error, Result};
use crate::meta::{default_horizon, Algorithm, Learner, MetaConfig};

/// Every recognized key, in canonical order.
pub const KEYS: [&str; 20] = [
    "algorithm",
    "learner",
    "env",
    "phi_lo",
    "phi_hi",
    "alpha",
    "beta",
    "delta",
    "gamma",
    "m_tasks",
    "k_trajs",
    "horizon",
    "epochs",
    "seed",
    "eval_every",
    "eval_episodes",
    "conv_tau",
    "conv_window",
    "out_dir",
    "label",
];

/// Keys that name where results go rather than what is computed.
const OUTPUT_KEYS: [&str; 2] = ["out_dir", "label"];

pub const DEFAULT_TAU: f64 = 175.0;
pub const DEFAULT_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub meta: MetaConfig,
    pub eval_every: usize,
    /// Episodes per task for held-out evaluation; 0 disables it.
    pub eval_episodes: usize,
    pub conv_tau: f64,
    pub conv_window: usize,
    pub out_dir: PathBuf,
    pub label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            meta: MetaConfig::default(),
            eval_every: 1,
            eval_episodes: 0,
            conv_tau: DEFAULT_TAU,
            conv_window: DEFAULT_WINDOW,
            out_dir: PathBuf::from("runs"),
            label: "run".into(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::validation(key, format!("`{value}`: {e}")))
}

/// Accumulates key assignments; the horizon follows the environment unless set.
#[derive(Default)]
struct Builder {
    cfg: RunConfig,
    horizon_set: bool,
}

impl Builder {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cfg;
        let m = &mut c.meta;
        match key {
            "algorithm" => m.algorithm = value.parse::<Algorithm>()?,
            "learner" => m.learner = value.parse::<Learner>()?,
            "env" => m.family = value.parse::<Family>()?,
            "phi_lo" => m.phi_lo = parse_value(key, value)?,
            "phi_hi" => m.phi_hi = parse_value(key, value)?,
            "alpha" => m.alpha = parse_value(key, value)?,
            "beta" => m.beta = parse_value(key, value)?,
            "delta" => m.delta = parse_value(key, value)?,
            "gamma" => m.gamma = parse_value(key, value)?,
            "m_tasks" => m.m_tasks = parse_value(key, value)?,
            "k_trajs" => m.k_trajs = parse_value(key, value)?,
            "horizon" => {
                m.horizon = parse_value(key, value)?;
                self.horizon_set = true;
            }
            "epochs" => m.epochs = parse_value(key, value)?,
            "seed" => m.seed = parse_value(key, value)?,
            "eval_every" => c.eval_every = parse_value(key, value)?,
            "eval_episodes" => c.eval_episodes = parse_value(key, value)?,
            "conv_tau" => c.conv_tau = parse_value(key, value)?,
            "conv_window" => c.conv_window = parse_value(key, value)?,
            "out_dir" => c.out_dir = PathBuf::from(value),
            "label" => {
                if value.is_empty() || value.contains(|ch: char| ch.is_whitespace() || ch == '/') {
                    return Err(Error::validation(key, "must be non-empty, without whitespace or `/`"));
                }
                c.label = value.to_string();
            }
            other => return Err(Error::validation(other, "unknown configuration key")),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunConfig> {
        if !self.horizon_set {
            self.cfg.meta.horizon = default_horizon(self.cfg.meta.family);
        }
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

/// Splits `key = value` lines, dropping comments and blank lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("unknown key `{k}`"),
            });
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("duplicate key `{k}`"),
            });
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    /// File text merged with `overrides`, which win.
    pub fn from_sources(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut b = Builder::default();
        if let Some(text) = text {
            for (k, v) in parse_pairs(text)? {
                b.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            b.set(k, v)?;
        }
        b.finish()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_sources(Some(text), &[])
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.eval_every == 0 {
            return Err(Error::validation("eval_every", "must be at least 1"));
        }
        if self.conv_window == 0 {
            return Err(Error::validation("conv_window", "must be at least 1"));
        }
        if !self.conv_tau.is_finite() {
            return Err(Error::validation("conv_tau", "must be finite"));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let m = &self.meta;
        match key {
            "algorithm" => m.algorithm.to_string(),
            "learner" => m.learner.to_string(),
            "env" => m.family.name().to_string(),
            "phi_lo" => format!("{:?}", m.phi_lo),
            "phi_hi" => format!("{:?}", m.phi_hi),
            "alpha" => format!("{:?}", m.alpha),
            "beta" => format!("{:?}", m.beta),
            "delta" => format!("{:?}", m.delta),
            "gamma" => format!("{:?}", m.gamma),
            "m_tasks" => m.m_tasks.to_string(),
            "k_trajs" => m.k_trajs.to_string(),
            "horizon" => m.horizon.to_string(),
            "epochs" => m.epochs.to_string(),
            "seed" => m.seed.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "conv_tau" => format!("{:?}", self.conv_tau),
            "conv_window" => self.conv_window.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "label" => self.label.clone(),
            _ => unreachable!("KEYS is exhaustive"),
        }
    }

    /// `(key, value)` for every computation-relevant key, in canonical order.
    pub fn canonical_pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .filter(|k| !OUTPUT_KEYS.contains(k))
            .map(|&k| (k, self.value_of(k)))
            .collect()
    }

    /// One line per key, output keys excluded.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.canonical_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Full config file text, loadable with [`RunConfig::parse`].
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.value_of(k));
        }
        s
    }

    /// Hex SHA-256 of the canonical form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn runlog_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.runlog", self.label))
    }

    pub fn times_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.times", self.label))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.ckpt", self.label))
    }
}

/// Reads `path` (if any), applies `overrides` and validates.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    RunConfig::from_sources(text.as_deref(), overrides)
}
