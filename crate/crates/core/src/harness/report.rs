//! Runtime comparison across algorithms and seeds.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::detect_convergence;
use super::runlog::RunLog;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub runs: usize,
    pub per_epoch_seconds: MeanStd,
    /// Over converged runs only.
    pub seconds_to_convergence: Option<MeanStd>,
    pub convergence_epoch: Option<MeanStd>,
    /// Runs that never met the convergence rule.
    pub missing_convergence: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speedup {
    pub numerator: String,
    pub denominator: String,
    /// Seconds to convergence of `numerator` over those of `denominator`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub tau: f64,
    pub window: usize,
    pub algorithms: Vec<AlgorithmSummary>,
    pub speedups: Vec<Speedup>,
}

/// `a / b`, the factor by which `b` is faster than `a`.
pub fn speedup(a_seconds: f64, b_seconds: f64) -> f64 {
    a_seconds / b_seconds
}

/// Share of the best smoothed return used as the Intersection threshold.
pub const INTERSECTION_TAU_SHARE: f64 = 0.8;

/// 80% of the best EMA-smoothed return reached by any of `runs`.
pub fn relative_tau(runs: &[RunLog]) -> Option<f64> {
    runs.iter()
        .flat_map(|r| r.smoothed())
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .map(|best| INTERSECTION_TAU_SHARE * best)
}

/// Groups runs by algorithm (in order of first appearance) and aggregates
/// their timings. Every run needs per-epoch timings.
pub fn summarize(runs: &[RunLog], tau: f64, window: usize) -> Result<ComparisonReport> {
    if runs.is_empty() {
        return Err(Error::validation("runs", "nothing to summarize"));
    }
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.algorithm()) {
            names.push(r.algorithm());
        }
    }
    let mut algorithms = Vec::new();
    for name in names {
        let group: Vec<&RunLog> = runs.iter().filter(|r| r.algorithm() == name).collect();
        let mut per_epoch = Vec::new();
        let mut to_conv = Vec::new();
        let mut conv_epochs = Vec::new();
        for r in &group {
            if r.rows.is_empty() {
                return Err(Error::validation("runs", format!("run `{}` has no epochs", r.label)));
            }
            if !r.has_times() {
                return Err(Error::validation("runs", format!("run `{}` has no timings", r.label)));
            }
            per_epoch.extend(r.rows.iter().map(|row| row.wall_seconds));
            if let Some(i) = detect_convergence(&r.smoothed(), tau, window) {
                let epoch = r.rows[i].epoch;
                conv_epochs.push(epoch as f64);
                to_conv.push(r.seconds_through(epoch));
            }
        }
        algorithms.push(AlgorithmSummary {
            algorithm: name.to_string(),
            runs: group.len(),
            per_epoch_seconds: MeanStd::of(&per_epoch).expect("non-empty"),
            seconds_to_convergence: MeanStd::of(&to_conv),
            convergence_epoch: MeanStd::of(&conv_epochs),
            missing_convergence: group.len() - to_conv.len(),
        });
    }
    let mut speedups = Vec::new();
    for a in &algorithms {
        for b in &algorithms {
            if a.algorithm == b.algorithm {
                continue;
            }
            if let (Some(x), Some(y)) = (a.seconds_to_convergence, b.seconds_to_convergence) {
                speedups.push(Speedup {
                    numerator: a.algorithm.clone(),
                    denominator: b.algorithm.clone(),
                    ratio: speedup(x.mean, y.mean),
                });
            }
        }
    }
    Ok(ComparisonReport {
        tau,
        window,
        algorithms,
        speedups,
    })
}

impl ComparisonReport {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == name)
    }

    pub fn speedup(&self, numerator: &str, denominator: &str) -> Option<f64> {
        self.speedups
            .iter()
            .find(|s| s.numerator == numerator && s.denominator == denominator)
            .map(|s| s.ratio)
    }

    /// Plain-text table: per-epoch time, time to convergence, speedups.
    pub fn to_table(&self) -> String {
        let ms = |m: Option<MeanStd>, scale: f64, prec: usize| {
            m.map_or_else(
                || "-".to_string(),
                |m| format!("{:.*} ± {:.*}", prec, m.mean * scale, prec, m.std * scale),
            )
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# convergence: EMA-smoothed return >= {} for {} consecutive epochs",
            self.tau, self.window
        );
        let _ = writeln!(
            s,
            "{:<20} {:>5} {:>22} {:>24} {:>22} {:>20} {:>8}",
            "algorithm", "runs", "per-epoch (s)", "to convergence (s)", "to convergence (h)", "convergence epoch", "missing"
        );
        for a in &self.algorithms {
            let _ = writeln!(
                s,
                "{:<20} {:>5} {:>22} {:>24} {:>22} {:>20} {:>8}",
                a.algorithm,
                a.runs,
                ms(Some(a.per_epoch_seconds), 1.0, 4),
                ms(a.seconds_to_convergence, 1.0, 2),
                ms(a.seconds_to_convergence, 1.0 / 3600.0, 4),
                ms(a.convergence_epoch, 1.0, 1),
                a.missing_convergence
            );
        }
        if !self.speedups.is_empty() {
            s.push('\n');
            for sp in &self.speedups {
                let _ = writeln!(s, "speedup {} / {} = {:.2}x", sp.numerator, sp.denominator, sp.ratio);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_closed_forms() {
        let m = MeanStd::of(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((m.mean, m.std), (2.0, 0.0));
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn relative_tau_uses_best_smoothed_value() {
        let mut log = RunLog::new(&crate::harness::RunConfig::default());
        for (i, r) in [10.0, 50.0, 50.0].into_iter().enumerate() {
            log.push(crate::meta::EpochMetrics {
                epoch: i,
                eval_return: r,
                heldout_return: None,
                wall_seconds: 1.0,
                eval_seconds: 0.0,
                grad_norm_outer: 0.0,
                prestep_grad_norm: None,
                grad_calls: 0,
                hvp_calls: 0,
                rollouts: 0,
            })
            .unwrap();
        }
        // EMA: 10, 14, 17.6.
        assert!((relative_tau(&[log]).unwrap() - 0.8 * 17.6).abs() < 1e-12);
        assert!(relative_tau(&[]).is_none());
    }

    #[test]
    fn reference_speedup() {
        assert!((speedup(0.39, 0.22) - 1.77).abs() < 0.005);
    }
}
