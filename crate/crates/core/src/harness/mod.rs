//! Configuration, training runs, logs, convergence, comparison and plots.

pub mod cli;
pub mod config;
pub mod plot;
pub mod report;
pub mod runlog;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{load_config, RunConfig};
pub use plot::emit_plot;
pub use report::{summarize, ComparisonReport};
pub use runlog::{RunLog, RunStatus};

use crate::autodiff::{fd_grad, fd_hvp, grad, hvp, relative_error, ParamVector};
use crate::envs::{make_env, medium_task, sample_tasks, Family, Task, TaskDistribution};
use crate::error::{Error, Result};
use crate::meta::{ActionMode, EvalSchedule, MetaState, Trainer};
use crate::policy::checkpoint::Checkpoint;
use crate::policy::{Head, PolicyNet, DEFAULT_HIDDEN};
use crate::rl::{reinforce_objective, sample_batch, Advantages};
use crate::rng::{tag, StreamKey};

/// Smoothing factor for learning curves.
pub const EMA_FACTOR: f64 = 0.9;
pub const CHECKPOINT_EVERY: usize = 50;

/// `s₀ = x₀`, `s_t = factor·s_{t−1} + (1 − factor)·x_t`, for `factor` in `[0, 1)`.
pub fn ema_smooth(series: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut prev = None;
    for &x in series {
        let s = match prev {
            None => x,
            Some(p) => factor * p + (1.0 - factor) * x,
        };
        out.push(s);
        prev = Some(s);
    }
    out
}

/// First index `e` with `smoothed[e..e + w]` all at least `tau`.
pub fn detect_convergence(smoothed: &[f64], tau: f64, w: usize) -> Option<usize> {
    let w = w.max(1);
    let mut run = 0;
    for (i, &s) in smoothed.iter().enumerate() {
        if s >= tau {
            run += 1;
            if run == w {
                return Some(i + 1 - w);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOptions {
    /// Continue from `<label>.ckpt` and the run log next to it.
    pub resume: bool,
    /// Spread rollouts over the rayon pool (results are unchanged).
    pub parallel_rollouts: bool,
    /// Stop as soon as the convergence rule holds.
    pub stop_at_convergence: bool,
    /// Stop once this many epochs have completed, as if interrupted.
    pub stop_after: Option<usize>,
}

fn save_checkpoint(cfg: &RunConfig, state: &MetaState) -> Result<()> {
    state
        .to_checkpoint()
        .with_meta("fingerprint", cfg.fingerprint())
        .save(&cfg.checkpoint_path())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<MetaState> {
    let ck = Checkpoint::load(&cfg.checkpoint_path())?;
    let fp = cfg.fingerprint();
    if ck.meta("fingerprint") != Some(fp.as_str()) {
        return Err(Error::Checkpoint("checkpoint belongs to a different configuration".into()));
    }
    MetaState::from_checkpoint(&ck)
}

/// Runs (or resumes) meta-training, writing `<label>.runlog`, `<label>.times`
/// and `<label>.ckpt` into the output directory. Divergence ends the run with
/// [`RunStatus::Diverged`] and the rows completed so far.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<RunLog> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut log = RunLog::new(cfg);
    let mut prior_seconds = 0.0;
    let mut trainer = if opts.resume && cfg.checkpoint_path().exists() {
        let state = load_checkpoint(cfg)?;
        let prev = RunLog::read(&cfg.runlog_path())?;
        if prev.fingerprint != log.fingerprint {
            return Err(Error::Checkpoint("run log belongs to a different configuration".into()));
        }
        log.rows = prev.rows.into_iter().filter(|r| r.epoch < state.epoch).collect();
        if log.rows.len() != state.epoch {
            return Err(Error::Checkpoint(format!(
                "run log has {} epochs, checkpoint is at epoch {}",
                log.rows.len(),
                state.epoch
            )));
        }
        prior_seconds = prev
            .total_wall_seconds
            .unwrap_or_else(|| log.rows.iter().map(|r| r.wall_seconds + r.eval_seconds).sum());
        Trainer::from_state(cfg.meta.clone(), state)?
    } else {
        Trainer::new(cfg.meta.clone())?
    };
    trainer = trainer
        .with_eval(EvalSchedule {
            every: cfg.eval_every,
            episodes: cfg.eval_episodes,
        })
        .with_parallel_rollouts(opts.parallel_rollouts);

    let mut status = RunStatus::Complete;
    while trainer.state().epoch < cfg.meta.epochs {
        if opts.stop_after.is_some_and(|n| trainer.state().epoch >= n) {
            status = RunStatus::Interrupted;
            break;
        }
        match trainer.train_epoch() {
            Ok(m) => log.push(m)?,
            Err(Error::EpochDiverged { epoch, source }) => {
                eprintln!("epoch {epoch} diverged: {source}");
                status = RunStatus::Diverged(epoch);
                break;
            }
            Err(e) => return Err(e),
        }
        if trainer.state().epoch % CHECKPOINT_EVERY == 0 {
            save_checkpoint(cfg, trainer.state())?;
            log.total_wall_seconds = Some(prior_seconds + start.elapsed().as_secs_f64());
            log.status = RunStatus::Interrupted;
            log.write(&cfg.out_dir)?;
        }
        if opts.stop_at_convergence {
            log.update_convergence(cfg.conv_tau, cfg.conv_window);
            if log.convergence_epoch.is_some() && trainer.state().epoch < cfg.meta.epochs {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    save_checkpoint(cfg, trainer.state())?;
    log.update_convergence(cfg.conv_tau, cfg.conv_window);
    log.status = status;
    log.total_wall_seconds = Some(prior_seconds + start.elapsed().as_secs_f64());
    log.write(&cfg.out_dir)?;
    Ok(log)
}

/// `cfg` once per seed, labelled `<label>-seed<seed>`; parallel runs use
/// the rayon pool, one run per worker.
pub fn sweep(cfg: &RunConfig, seeds: &[u64], parallel: bool, opts: &TrainOptions) -> Result<Vec<RunLog>> {
    if seeds.is_empty() {
        return Err(Error::validation("seeds", "at least one seed required"));
    }
    let configs: Vec<RunConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.meta.seed = s;
            c.label = format!("{}-seed{s}", cfg.label);
            c
        })
        .collect();
    if parallel {
        configs.par_iter().map(|c| train(c, opts)).collect()
    } else {
        configs.iter().map(|c| train(c, opts)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub episodes: usize,
    pub collisions: usize,
}

/// Loads the checkpoint, adapts to each task (one inner step on K fresh
/// trajectories) and averages `episodes` rollouts per task. Without `phi`,
/// M tasks are drawn from the configured distribution.
pub fn evaluate(
    cfg: &RunConfig,
    episodes: usize,
    phi: Option<f64>,
    mode: ActionMode,
) -> Result<EvalSummary> {
    let state = load_checkpoint(cfg)?;
    let trainer = Trainer::from_state(cfg.meta.clone(), state)?;
    let key = StreamKey::root(cfg.meta.seed).child(tag::EVAL);
    let tasks = match phi {
        Some(p) => vec![Task::new(cfg.meta.family, p)?],
        None => sample_tasks(trainer.distribution(), cfg.meta.m_tasks, &mut key.child(tag::TASKS).rng()),
    };
    let mut total = 0.0;
    let mut collisions = 0;
    for (i, &task) in tasks.iter().enumerate() {
        let r = trainer.adapt_and_evaluate(trainer.state(), task, episodes, mode, key.child(i as u64))?;
        total += r.mean_return;
        collisions += r.collisions;
    }
    Ok(EvalSummary {
        mean_return: total / tasks.len() as f64,
        episodes: episodes * tasks.len(),
        collisions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditReport {
    pub params: usize,
    pub steps: usize,
    /// `‖grad − fd_grad‖∞ / ‖fd_grad‖∞`.
    pub grad_error: f64,
    /// `‖hvp − fd_hvp‖∞ / ‖fd_hvp‖∞`.
    pub hvp_error: f64,
}

pub const AUDIT_GRAD_EPS: f64 = 1e-6;
pub const AUDIT_HVP_EPS: f64 = 1e-5;

/// Compares exact derivatives of the REINFORCE surrogate on a frozen
/// CartPole batch (medium gravity, `k` trajectories) with central differences.
pub fn audit(seed: u64, k: usize) -> Result<AuditReport> {
    let dist = TaskDistribution::new(Family::CartPole, 5.0, 15.0)?;
    let env = make_env(medium_task(&dist));
    let net = PolicyNet::new(env.state_dim(), &DEFAULT_HIDDEN, Head::for_actions(env.action_spec()));
    let root = StreamKey::root(seed);
    let theta = net.init_params(&mut root.child(tag::INIT).rng());
    let batch = sample_batch(&env, &net, &theta, k, root.child(tag::SUPPORT))?;
    let obj = reinforce_objective(&net, &batch, 0.99, Advantages::Standardized)?;
    let exact = grad(&obj, &theta)?.gradient;
    let numeric = fd_grad(&obj, &theta, AUDIT_GRAD_EPS)?;
    let mut rng = root.child(tag::EVAL).rng();
    let v: Vec<f64> = (0..theta.len())
        .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
        .collect();
    let v = ParamVector::new(theta.layout().clone(), v)?;
    let hv = hvp(&obj, &theta, &v)?.hvp;
    let hv_fd = fd_hvp(&obj, &theta, &v, AUDIT_HVP_EPS)?;
    Ok(AuditReport {
        params: theta.len(),
        steps: batch.steps(),
        grad_error: relative_error(&exact, &numeric)?,
        hvp_error: relative_error(&hv, &hv_fd)?,
    })
}
