//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::envs::Family;
use crate::error::{Error, Result};
use crate::meta::ActionMode;

use super::config::load_config;
use super::report::relative_tau;
use super::runlog::{RunLog, RunStatus};
use super::{audit, emit_plot, evaluate, summarize, sweep, train, TrainOptions, EMA_FACTOR};

#[derive(Parser, Debug)]
#[command(name = "dmaml", version, about = "Gradient-based meta-reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Per-key overrides of the configuration file.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long = "phi_lo")]
    phi_lo: Option<String>,
    #[arg(long = "phi_hi")]
    phi_hi: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "m_tasks")]
    m_tasks: Option<String>,
    #[arg(long = "k_trajs")]
    k_trajs: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "eval_every")]
    eval_every: Option<String>,
    #[arg(long = "eval_episodes")]
    eval_episodes: Option<String>,
    #[arg(long = "conv_tau")]
    conv_tau: Option<String>,
    #[arg(long = "conv_window")]
    conv_window: Option<String>,
    #[arg(long = "out_dir")]
    out_dir: Option<String>,
    #[arg(long)]
    label: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("algorithm", &self.algorithm),
            ("learner", &self.learner),
            ("env", &self.env),
            ("phi_lo", &self.phi_lo),
            ("phi_hi", &self.phi_hi),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("delta", &self.delta),
            ("gamma", &self.gamma),
            ("m_tasks", &self.m_tasks),
            ("k_trajs", &self.k_trajs),
            ("horizon", &self.horizon),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("eval_every", &self.eval_every),
            ("eval_episodes", &self.eval_episodes),
            ("conv_tau", &self.conv_tau),
            ("conv_window", &self.conv_window),
            ("out_dir", &self.out_dir),
            ("label", &self.label),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train one configuration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop once the convergence rule holds.
        #[arg(long)]
        stop_at_convergence: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Adapt a checkpoint to tasks and report the mean return.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episodes per task (default: the configured eval_episodes, or 10).
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate this single task instead of sampled ones.
        #[arg(long)]
        phi: Option<f64>,
        /// Act with the policy's mode instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize run logs into a runtime comparison table.
    Compare {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Threshold (default: the configured conv_tau; on Intersection, 80% of the best smoothed return).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        /// Output file (default: compare.txt next to the first log).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot smoothed learning curves of run logs.
    Plot {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Output directory (default: that of the first log).
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = EMA_FACTOR)]
        factor: f64,
    },
    /// Check exact derivatives against finite differences.
    Audit {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Trajectories in the frozen batch.
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Train one configuration for several seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Run seeds concurrently.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        stop_at_convergence: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn describe(log: &RunLog) -> String {
    format!(
        "{}: {} epochs, status {}, convergence epoch {}",
        log.label,
        log.rows.len(),
        log.status,
        log.convergence_epoch.map_or_else(|| "none".into(), |e| e.to_string())
    )
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            resume,
            stop_at_convergence,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides.pairs())?;
            let log = train(
                &cfg,
                &TrainOptions {
                    resume,
                    stop_at_convergence,
                    ..TrainOptions::default()
                },
            )?;
            println!("{}", describe(&log));
            println!("wrote {}", cfg.runlog_path().display());
            Ok(if matches!(log.status, RunStatus::Diverged(_)) { 1 } else { 0 })
        }
        Command::Eval {
            config,
            episodes,
            phi,
            greedy,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides.pairs())?;
            let n = episodes.unwrap_or(if cfg.eval_episodes > 0 { cfg.eval_episodes } else { 10 });
            let mode = if greedy { ActionMode::Greedy } else { ActionMode::Sample };
            let r = evaluate(&cfg, n, phi, mode)?;
            println!(
                "mean return {:.4} over {} episodes ({} collisions)",
                r.mean_return, r.episodes, r.collisions
            );
            Ok(0)
        }
        Command::Compare { logs, tau, window, out } => {
            let runs = logs.iter().map(|p| RunLog::read(p)).collect::<Result<Vec<_>>>()?;
            let num = |key: &str| runs[0].config_value(key).and_then(|v| v.parse::<f64>().ok());
            let tau = match tau {
                Some(t) => t,
                None if runs[0].config_value("env") == Some(Family::Intersection.name()) => {
                    relative_tau(&runs).ok_or_else(|| Error::validation("runs", "no epochs to compare"))?
                }
                None => num("conv_tau").unwrap_or(super::config::DEFAULT_TAU),
            };
            let window = window
                .or_else(|| num("conv_window").map(|w| w as usize))
                .unwrap_or(super::config::DEFAULT_WINDOW);
            let report = summarize(&runs, tau, window)?;
            let table = report.to_table();
            let out = out.unwrap_or_else(|| dir_of(&logs[0]).join("compare.txt"));
            std::fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
            print!("{table}");
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Plot { logs, out_dir, factor } => {
            if !(0.0..1.0).contains(&factor) {
                return Err(Error::validation("factor", "must lie in [0, 1)"));
            }
            let runs = logs.iter().map(|p| RunLog::read(p)).collect::<Result<Vec<_>>>()?;
            let dir = out_dir.unwrap_or_else(|| dir_of(&logs[0]));
            let (svg, dat) = emit_plot(&runs, factor, &dir)?;
            println!("wrote {} and {}", svg.display(), dat.display());
            Ok(0)
        }
        Command::Audit { seed, k } => {
            let r = audit(seed, k)?;
            println!("grad relative error {:.3e} ({} parameters, {} steps)", r.grad_error, r.params, r.steps);
            println!("hvp relative error {:.3e}", r.hvp_error);
            Ok(0)
        }
        Command::Sweep {
            config,
            seeds,
            parallel,
            stop_at_convergence,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides.pairs())?;
            let logs = sweep(
                &cfg,
                &seeds,
                parallel,
                &TrainOptions {
                    stop_at_convergence,
                    ..TrainOptions::default()
                },
            )?;
            for log in &logs {
                println!("{}", describe(log));
            }
            let diverged = logs.iter().any(|l| matches!(l.status, RunStatus::Diverged(_)));
            Ok(i32::from(diverged))
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
