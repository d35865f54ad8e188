//! Line-delimited run logs.
//!
//! ```text
//! # dmaml runlog
//! run label=<label> version=<semver> fingerprint=<sha256>
//! config algorithm=<..> learner=<..> ... conv_window=<..>
//! epoch epoch=0 eval_return=<f64> heldout_return=<f64|none> ...
//! end epochs=<n> convergence_epoch=<k|none> status=<status>
//! ```
//! Floats carry 17 significant digits, so parsing and re-serializing is
//! byte-identical. Timings vary between identical runs and live in a
//! separate `<label>.times` file with one `epoch=<i> wall_seconds=<f64>
//! eval_seconds=<f64>` line per epoch and a final `total_wall_seconds=<f64>`.

use std::fmt::Write as _;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::meta::EpochMetrics;

use super::config::RunConfig;
use super::{detect_convergence, ema_smooth, EMA_FACTOR};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MAGIC: &str = "# dmaml runlog";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// All configured epochs ran.
    Complete,
    /// Stopped once the convergence rule was met.
    Converged,
    /// Stopped before the last epoch on request.
    Interrupted,
    /// An epoch produced non-finite values at the given index.
    Diverged(usize),
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Complete => f.write_str("complete"),
            RunStatus::Converged => f.write_str("converged"),
            RunStatus::Interrupted => f.write_str("interrupted"),
            RunStatus::Diverged(e) => write!(f, "diverged@{e}"),
        }
    }
}

impl FromStr for RunStatus {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "complete" => Ok(RunStatus::Complete),
            "converged" => Ok(RunStatus::Converged),
            "interrupted" => Ok(RunStatus::Interrupted),
            other => other
                .strip_prefix("diverged@")
                .and_then(|e| e.parse().ok())
                .map(RunStatus::Diverged)
                .ok_or_else(|| format!("unknown status `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub label: String,
    pub version: String,
    pub fingerprint: String,
    /// Canonical `(key, value)` pairs of the configuration.
    pub config: Vec<(String, String)>,
    pub rows: Vec<EpochMetrics>,
    pub convergence_epoch: Option<usize>,
    pub status: RunStatus,
    /// Whole-run wall time, when known.
    pub total_wall_seconds: Option<f64>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), fmt_f64)
}

impl RunLog {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            label: cfg.label.clone(),
            version: VERSION.to_string(),
            fingerprint: cfg.fingerprint(),
            config: cfg
                .canonical_pairs()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            rows: Vec::new(),
            convergence_epoch: None,
            status: RunStatus::Interrupted,
            total_wall_seconds: None,
        }
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Algorithm name from the recorded configuration.
    pub fn algorithm(&self) -> &str {
        self.config_value("algorithm").unwrap_or("unknown")
    }

    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval_return).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        ema_smooth(&self.returns(), EMA_FACTOR)
    }

    /// Recomputes the convergence epoch from the rows.
    pub fn update_convergence(&mut self, tau: f64, window: usize) {
        self.convergence_epoch = detect_convergence(&self.smoothed(), tau, window).map(|i| self.rows[i].epoch);
    }

    pub fn push(&mut self, row: EpochMetrics) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::validation(
                    "epoch",
                    format!("rows must increase strictly: {} after {}", row.epoch, last.epoch),
                ));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Sum of per-epoch training seconds up to and including `epoch`.
    pub fn seconds_through(&self, epoch: usize) -> f64 {
        self.rows.iter().take_while(|r| r.epoch <= epoch).map(|r| r.wall_seconds).sum()
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(
            s,
            "run label={} version={} fingerprint={}",
            self.label, self.version, self.fingerprint
        );
        s.push_str("config");
        for (k, v) in &self.config {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "epoch epoch={} eval_return={} heldout_return={} grad_norm_outer={} prestep_grad_norm={} grad_calls={} hvp_calls={} rollouts={}",
                r.epoch,
                fmt_f64(r.eval_return),
                fmt_opt(r.heldout_return),
                fmt_f64(r.grad_norm_outer),
                fmt_opt(r.prestep_grad_norm),
                r.grad_calls,
                r.hvp_calls,
                r.rollouts
            );
        }
        let _ = writeln!(
            s,
            "end epochs={} convergence_epoch={} status={}",
            self.rows.len(),
            self.convergence_epoch.map_or_else(|| "none".into(), |e| e.to_string()),
            self.status
        );
        s
    }

    pub fn serialize_times(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "epoch={} wall_seconds={} eval_seconds={}",
                r.epoch,
                fmt_f64(r.wall_seconds),
                fmt_f64(r.eval_seconds)
            );
        }
        if let Some(t) = self.total_wall_seconds {
            let _ = writeln!(s, "total_wall_seconds={}", fmt_f64(t));
        }
        s
    }

    /// Parses a run log. Timings are zero until [`RunLog::apply_times`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing {what} line"),
            })
        };
        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::Parse {
                line: n,
                reason: "not a run log".into(),
            });
        }
        let (n, run) = next("run")?;
        let run = Record::parse(n, run, "run")?;
        let (n, cfg) = next("config")?;
        let cfg = Record::parse(n, cfg, "config")?;
        let mut log = RunLog {
            label: run.get("label")?.to_string(),
            version: run.get("version")?.to_string(),
            fingerprint: run.get("fingerprint")?.to_string(),
            config: cfg.fields.clone(),
            rows: Vec::new(),
            convergence_epoch: None,
            status: RunStatus::Interrupted,
            total_wall_seconds: None,
        };
        let mut ended = false;
        for (n, line) in lines {
            if ended {
                return Err(Error::Parse {
                    line: n,
                    reason: "content after end record".into(),
                });
            }
            let kind = line.split(' ').next().unwrap_or("");
            match kind {
                "epoch" => {
                    let r = Record::parse(n, line, "epoch")?;
                    let row = EpochMetrics {
                        epoch: r.num("epoch")?,
                        eval_return: r.num("eval_return")?,
                        heldout_return: r.opt("heldout_return")?,
                        wall_seconds: 0.0,
                        eval_seconds: 0.0,
                        grad_norm_outer: r.num("grad_norm_outer")?,
                        prestep_grad_norm: r.opt("prestep_grad_norm")?,
                        grad_calls: r.num("grad_calls")?,
                        hvp_calls: r.num("hvp_calls")?,
                        rollouts: r.num("rollouts")?,
                    };
                    log.push(row).map_err(|e| Error::Parse {
                        line: n,
                        reason: e.to_string(),
                    })?;
                }
                "end" => {
                    let r = Record::parse(n, line, "end")?;
                    let epochs: usize = r.num("epochs")?;
                    if epochs != log.rows.len() {
                        return Err(Error::Parse {
                            line: n,
                            reason: format!("end record counts {epochs} epochs, found {}", log.rows.len()),
                        });
                    }
                    log.convergence_epoch = match r.get("convergence_epoch")? {
                        "none" => None,
                        _ => Some(r.num("convergence_epoch")?),
                    };
                    log.status = r.get("status")?.parse().map_err(|reason| Error::Parse { line: n, reason })?;
                    ended = true;
                }
                other => {
                    return Err(Error::Parse {
                        line: n,
                        reason: format!("unknown record `{other}`"),
                    })
                }
            }
        }
        if !ended {
            return Err(Error::Parse {
                line: 0,
                reason: "missing end record".into(),
            });
        }
        Ok(log)
    }

    /// Fills per-epoch timings from a times file.
    pub fn apply_times(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let r = Record::parse_fields(n, line)?;
            if let Ok(total) = r.num::<f64>("total_wall_seconds") {
                self.total_wall_seconds = Some(total);
                continue;
            }
            let epoch: usize = r.num("epoch")?;
            let row = self.rows.iter_mut().find(|row| row.epoch == epoch).ok_or_else(|| Error::Parse {
                line: n,
                reason: format!("timing for unknown epoch {epoch}"),
            })?;
            row.wall_seconds = r.num("wall_seconds")?;
            row.eval_seconds = r.num("eval_seconds")?;
        }
        Ok(())
    }

    pub fn has_times(&self) -> bool {
        self.rows.iter().all(|r| r.wall_seconds > 0.0)
    }

    /// Writes `<label>.runlog` and `<label>.times` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join(format!("{}.runlog", self.label));
        std::fs::write(&log, self.serialize()).map_err(|e| Error::io(&log, e))?;
        let times = dir.join(format!("{}.times", self.label));
        std::fs::write(&times, self.serialize_times()).map_err(|e| Error::io(&times, e))
    }

    /// Reads a run log and, when present, its sibling times file.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self::parse(&text)?;
        let times = path.with_extension("times");
        if times.exists() {
            let t = std::fs::read_to_string(&times).map_err(|e| Error::io(&times, e))?;
            log.apply_times(&t)?;
        }
        Ok(log)
    }
}

/// One `kind k=v k=v ...` line.
struct Record {
    line: usize,
    fields: Vec<(String, String)>,
}

impl Record {
    fn parse(line: usize, text: &str, kind: &str) -> Result<Self> {
        let rest = text
            .strip_prefix(kind)
            .filter(|r| r.is_empty() || r.starts_with(' '))
            .ok_or_else(|| Error::Parse {
                line,
                reason: format!("expected a `{kind}` record"),
            })?;
        Self::parse_fields(line, rest)
    }

    fn parse_fields(line: usize, text: &str) -> Result<Self> {
        let fields = text
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Parse {
                        line,
                        reason: format!("expected key=value, got `{kv}`"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { line, fields })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                line: self.line,
                reason: format!("missing `{key}`"),
            })
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Parse {
            line: self.line,
            reason: format!("`{key}`: cannot parse `{v}`"),
        })
    }

    fn opt(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key)? {
            "none" => Ok(None),
            _ => self.num(key).map(Some),
        }
    }
}
