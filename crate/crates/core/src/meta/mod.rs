//! Meta-training: MAML, FOMAML, Reptile, Meta-SGD and their task-directed
//! variants, driven epoch by epoch by [`Trainer`].

pub mod algorithms;
pub mod config;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub use algorithms::{
    directed_prestep, fomaml_meta_gradient, inner_adapt, maml_meta_gradient, metasgd_step, reptile_step, Adapted,
    Draw, MetaGradient, MetaSgdUpdate, StepSize, TaskSource, MIN_RATE,
};
pub use config::{default_horizon, Algorithm, Learner, MetaConfig};

use crate::autodiff::{self, CallCounter, Layout, ParamVector};
use crate::envs::{intersection, make_env, medium_task, sample_tasks, Environment, Task, TaskDistribution};
use crate::error::{Error, Result};
use crate::policy::checkpoint::Checkpoint;
use crate::policy::{CriticNet, Head, PolicyNet, DEFAULT_HIDDEN};
use crate::rl::{
    actor_critic_objective, critic_loss, reinforce_objective, rollout_with, sample_batch, sample_batch_par, Advantages,
    PolicySurrogate, TrajectoryBatch,
};
use crate::rng::{tag, StreamKey};

pub const REPTILE_INNER_STEPS: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub theta: ParamVector,
    /// Value-function parameters (actor-critic learner only).
    pub critic: Option<ParamVector>,
    /// Per-parameter inner rates (Meta-SGD variants only).
    pub alpha_vec: Option<ParamVector>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl MetaState {
    pub fn root(&self) -> StreamKey {
        StreamKey::root(self.seed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new()
            .with_meta("epoch", self.epoch)
            .with_meta("seed", self.seed)
            .with_vector("theta", self.theta.clone());
        if let Some(v) = &self.critic {
            c = c.with_vector("critic", v.clone());
        }
        if let Some(v) = &self.alpha_vec {
            c = c.with_vector("alpha_vec", v.clone());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let parse = |key: &str| -> Result<u64> {
            c.meta(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("`{key}`: {e}")))
        };
        let theta = c
            .vector("theta")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing `theta`".into()))?;
        Ok(Self {
            theta,
            critic: c.vector("critic").cloned(),
            alpha_vec: c.vector("alpha_vec").cloned(),
            epoch: parse("epoch")? as usize,
            seed: parse("seed")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Mean undiscounted return of the most recent batch of every sampled
    /// task (the post-adaptation batch for MAML-style algorithms).
    pub eval_return: f64,
    /// Mean return on freshly sampled tasks after one adaptation step, on
    /// evaluation epochs only.
    pub heldout_return: Option<f64>,
    /// Training time of the epoch, evaluation excluded.
    pub wall_seconds: f64,
    pub eval_seconds: f64,
    pub grad_norm_outer: f64,
    pub prestep_grad_norm: Option<f64>,
    pub grad_calls: u64,
    pub hvp_calls: u64,
    pub rollouts: u64,
}

impl EpochMetrics {
    /// Equality of everything except timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let bits = |x: Option<f64>| x.map(f64::to_bits);
        self.epoch == other.epoch
            && self.eval_return.to_bits() == other.eval_return.to_bits()
            && bits(self.heldout_return) == bits(other.heldout_return)
            && self.grad_norm_outer.to_bits() == other.grad_norm_outer.to_bits()
            && bits(self.prestep_grad_norm) == bits(other.prestep_grad_norm)
            && (self.grad_calls, self.hvp_calls, self.rollouts) == (other.grad_calls, other.hvp_calls, other.rollouts)
    }
}

/// Outcome of adapting to one task and rolling out the adapted policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptedEvaluation {
    pub mean_return: f64,
    pub episodes: usize,
    /// Episodes ending in a collision (intersection tasks).
    pub collisions: usize,
}

/// Whether evaluation rollouts sample from the policy or take its mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Tasks of one epoch, backed by trajectory batches sampled on demand.
pub struct RlTasks<'a> {
    trainer: &'a Trainer,
    envs: Vec<Environment>,
    key: StreamKey,
    critic: Option<&'a ParamVector>,
    rollouts: AtomicU64,
    /// Latest batch per task.
    latest: Mutex<Vec<Option<TrajectoryBatch>>>,
    /// Every batch, for critic regression.
    collected: Mutex<Vec<TrajectoryBatch>>,
}

impl<'a> RlTasks<'a> {
    fn new(trainer: &'a Trainer, tasks: &[Task], key: StreamKey, critic: Option<&'a ParamVector>) -> Self {
        let h = trainer.cfg.horizon;
        Self {
            trainer,
            envs: tasks.iter().map(|&t| make_env(t).with_horizon(h)).collect(),
            key,
            critic,
            rollouts: AtomicU64::new(0),
            latest: Mutex::new(vec![None; tasks.len()]),
            collected: Mutex::new(Vec::new()),
        }
    }

    pub fn rollouts(&self) -> u64 {
        self.rollouts.load(Ordering::Relaxed)
    }

    fn latest_mean_return(&self) -> f64 {
        let latest = self.latest.lock().expect("unpoisoned");
        let returns: Vec<f64> = latest.iter().flatten().map(TrajectoryBatch::mean_return).collect();
        returns.iter().sum::<f64>() / returns.len().max(1) as f64
    }
}

impl TaskSource for RlTasks<'_> {
    type Surrogate<'s>
        = PolicySurrogate<'s>
    where
        Self: 's;

    fn n_tasks(&self) -> usize {
        self.envs.len()
    }

    fn surrogate(&self, task: usize, draw: Draw, params: &ParamVector) -> Result<PolicySurrogate<'_>> {
        let key = match draw {
            Draw::Support(s) => self.key.child(tag::SUPPORT).child(task as u64).child(s as u64),
            Draw::Query => self.key.child(tag::QUERY).child(task as u64),
        };
        let env = self.envs.get(task).ok_or(Error::EmptyTaskSet)?;
        let batch = self.trainer.sample(env, params, key)?;
        self.rollouts.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let obj = self.trainer.surrogate(&batch, self.critic)?;
        self.latest.lock().expect("unpoisoned")[task] = Some(batch.clone());
        if self.trainer.cfg.learner == Learner::Ac {
            self.collected.lock().expect("unpoisoned").push(batch);
        }
        Ok(obj)
    }
}

/// Settings for held-out evaluation during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSchedule {
    /// Evaluate after every `every`-th epoch.
    pub every: usize,
    /// Episodes per evaluation task; 0 disables held-out evaluation.
    pub episodes: usize,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        Self { every: 1, episodes: 0 }
    }
}

pub struct Trainer {
    cfg: MetaConfig,
    dist: TaskDistribution,
    policy: PolicyNet,
    critic: Option<CriticNet>,
    state: MetaState,
    eval: EvalSchedule,
    parallel: bool,
}

impl Trainer {
    pub fn new(cfg: MetaConfig) -> Result<Self> {
        cfg.validate()?;
        let dist = cfg.distribution()?;
        let probe = make_env(medium_task(&dist));
        let input = probe.state_dim();
        let policy = PolicyNet::new(input, &DEFAULT_HIDDEN, Head::for_actions(probe.action_spec()));
        let critic = (cfg.learner == Learner::Ac).then(|| CriticNet::new(input, &DEFAULT_HIDDEN));
        let root = StreamKey::root(cfg.seed);
        let theta = policy.init_params(&mut root.child(tag::INIT).rng());
        let state = MetaState {
            alpha_vec: matches!(cfg.algorithm.base(), Algorithm::MetaSgd)
                .then(|| ParamVector::filled(theta.layout().clone(), cfg.alpha)),
            critic: critic.as_ref().map(|c| c.init_params(&mut root.child(tag::CRITIC).rng())),
            theta,
            epoch: 0,
            seed: cfg.seed,
        };
        Ok(Self {
            cfg,
            dist,
            policy,
            critic,
            state,
            eval: EvalSchedule::default(),
            parallel: false,
        })
    }

    /// Resumes from a saved state; the layouts must match the configured networks.
    pub fn from_state(cfg: MetaConfig, state: MetaState) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        let check = |name: &str, v: Option<&ParamVector>, want: Option<&Layout>| -> Result<()> {
            match (v, want) {
                (Some(v), Some(l)) if **v.layout() == *l => Ok(()),
                (None, None) => Ok(()),
                _ => Err(Error::Checkpoint(format!("`{name}` does not match the configuration"))),
            }
        };
        check("theta", Some(&state.theta), Some(t.state.theta.layout()))?;
        check("critic", state.critic.as_ref(), t.state.critic.as_ref().map(|c| &**c.layout()))?;
        check("alpha_vec", state.alpha_vec.as_ref(), t.state.alpha_vec.as_ref().map(|c| &**c.layout()))?;
        if let Some(rates) = &state.alpha_vec {
            if rates.values().iter().any(|&r| r <= 0.0) {
                return Err(Error::validation("alpha_vec", "rates must be strictly positive"));
            }
        }
        if state.seed != t.cfg.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                state.seed, t.cfg.seed
            )));
        }
        t.state = state;
        Ok(t)
    }

    pub fn with_eval(mut self, eval: EvalSchedule) -> Self {
        self.eval = eval;
        self
    }

    /// Spread rollouts over the rayon pool. Results are unchanged.
    pub fn with_parallel_rollouts(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn config(&self) -> &MetaConfig {
        &self.cfg
    }

    pub fn state(&self) -> &MetaState {
        &self.state
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn distribution(&self) -> &TaskDistribution {
        &self.dist
    }

    fn sample(&self, env: &Environment, params: &ParamVector, key: StreamKey) -> Result<TrajectoryBatch> {
        if self.parallel {
            sample_batch_par(env, &self.policy, params, self.cfg.k_trajs, key)
        } else {
            sample_batch(env, &self.policy, params, self.cfg.k_trajs, key)
        }
    }

    fn surrogate<'s>(&'s self, batch: &TrajectoryBatch, critic: Option<&ParamVector>) -> Result<PolicySurrogate<'s>> {
        match (self.cfg.learner, &self.critic, critic) {
            (Learner::Ac, Some(net), Some(params)) => {
                Ok(actor_critic_objective(&self.policy, net, params, batch, self.cfg.gamma)?.0)
            }
            _ => reinforce_objective(&self.policy, batch, self.cfg.gamma, Advantages::Standardized),
        }
    }

    /// Runs one epoch and advances the state. Non-finite values surface as
    /// [`Error::EpochDiverged`] and leave the state untouched.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epoch;
        match self.run_epoch() {
            Ok((state, metrics)) => {
                self.state = state;
                Ok(metrics)
            }
            Err(e @ Error::NonFiniteValue { .. }) => Err(Error::EpochDiverged {
                epoch,
                source: Box::new(e),
            }),
            Err(e) => Err(e),
        }
    }

    fn run_epoch(&self) -> Result<(MetaState, EpochMetrics)> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let epoch = self.state.epoch;
        let key = self.state.root().epoch(epoch);
        let counter = CallCounter::new();
        let mut prestep_rollouts = 0;
        let mut theta = self.state.theta.clone();
        let mut prestep_grad_norm = None;

        if cfg.algorithm.is_directed() {
            let env = make_env(medium_task(&self.dist)).with_horizon(cfg.horizon);
            let batch = self.sample(&env, &theta, key.child(tag::PRESTEP))?;
            prestep_rollouts = batch.len() as u64;
            let obj = self.surrogate(&batch, self.state.critic.as_ref())?;
            let step = directed_prestep(&counter, &obj, &theta, cfg.delta)?;
            prestep_grad_norm = Some(step.gradient.norm());
            theta = step.params;
        }

        let tasks = sample_tasks(&self.dist, cfg.m_tasks, &mut key.child(tag::TASKS).rng());
        let source = RlTasks::new(self, &tasks, key, self.state.critic.as_ref());
        let mut alpha_vec = self.state.alpha_vec.clone();
        let (new_theta, grad_norm_outer) = match cfg.algorithm.base() {
            Algorithm::Maml | Algorithm::Fomaml => {
                let mg = if cfg.algorithm.base() == Algorithm::Maml {
                    maml_meta_gradient(&counter, &source, &theta, cfg.alpha)?
                } else {
                    fomaml_meta_gradient(&counter, &source, &theta, cfg.alpha)?
                };
                (theta.add_scaled(cfg.beta, &mg.total)?, mg.total.norm())
            }
            Algorithm::MetaSgd => {
                let rates = alpha_vec
                    .as_ref()
                    .ok_or_else(|| Error::validation("alpha_vec", "missing for a Meta-SGD run"))?;
                let up = metasgd_step(&counter, &source, &theta, rates, cfg.beta)?;
                alpha_vec = Some(up.rates);
                (up.theta, up.meta_gradient.total.norm())
            }
            Algorithm::Reptile => {
                let next = reptile_step(&counter, &source, &theta, cfg.alpha, cfg.beta, REPTILE_INNER_STEPS)?;
                let norm = next.sub(&theta)?.norm() / cfg.beta;
                (next, norm)
            }
            _ => unreachable!("base() never returns a directed algorithm"),
        };

        let critic = match (&self.critic, &self.state.critic) {
            (Some(net), Some(params)) => {
                let batches = source.collected.lock().expect("unpoisoned").clone();
                Some(fit_critic(net, params, &batches, cfg.gamma, cfg.alpha)?)
            }
            _ => None,
        };

        let eval_return = source.latest_mean_return();
        let rollouts = source.rollouts() + prestep_rollouts;
        drop(source);
        let wall_seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

        let state = MetaState {
            theta: new_theta,
            critic,
            alpha_vec,
            epoch: epoch + 1,
            seed: self.state.seed,
        };

        let eval_start = Instant::now();
        let heldout_return = if self.eval.episodes > 0 && (epoch + 1) % self.eval.every.max(1) == 0 {
            Some(self.heldout(&state, key.child(tag::EVAL))?)
        } else {
            None
        };
        let eval_seconds = eval_start.elapsed().as_secs_f64();

        let counts = counter.counts();
        let metrics = EpochMetrics {
            epoch,
            eval_return,
            heldout_return,
            wall_seconds,
            eval_seconds,
            grad_norm_outer,
            prestep_grad_norm,
            grad_calls: counts.grads,
            hvp_calls: counts.hvps,
            rollouts,
        };
        Ok((state, metrics))
    }

    fn heldout(&self, state: &MetaState, key: StreamKey) -> Result<f64> {
        let tasks = sample_tasks(&self.dist, self.cfg.m_tasks, &mut key.child(tag::TASKS).rng());
        let mut total = 0.0;
        for (i, task) in tasks.iter().enumerate() {
            let r = self.adapt_and_evaluate(state, *task, self.eval.episodes, ActionMode::Sample, key.child(i as u64))?;
            total += r.mean_return;
        }
        Ok(total / tasks.len() as f64)
    }

    /// Adapts `state` to `task` with one inner step on K fresh trajectories,
    /// then rolls out the adapted policy `episodes` times.
    pub fn adapt_and_evaluate(
        &self,
        state: &MetaState,
        task: Task,
        episodes: usize,
        mode: ActionMode,
        key: StreamKey,
    ) -> Result<AdaptedEvaluation> {
        if episodes == 0 {
            return Err(Error::validation("eval_episodes", "must be at least 1"));
        }
        let env = make_env(task).with_horizon(self.cfg.horizon);
        let adapted = self.adapt(state, &env, key.child(tag::SUPPORT))?;
        let mut total = 0.0;
        let mut collisions = 0;
        for j in 0..episodes {
            let mut rng = key.child(tag::EVAL).child(j as u64).rng();
            let t = rollout_with(&env, &mut rng, |obs, rng| match mode {
                ActionMode::Sample => self.policy.act(&adapted, obs, rng),
                ActionMode::Greedy => {
                    let a = self.policy.greedy(&adapted, obs)?;
                    Ok(crate::policy::Sampled { raw: a, env: a, logp: 0.0 })
                }
            })?;
            total += t.total_reward();
            if t.terminated && t.rewards.last() == Some(&intersection::COLLISION_REWARD) {
                collisions += 1;
            }
        }
        Ok(AdaptedEvaluation {
            mean_return: total / episodes as f64,
            episodes,
            collisions,
        })
    }

    fn adapt(&self, state: &MetaState, env: &Environment, key: StreamKey) -> Result<ParamVector> {
        let batch = self.sample(env, &state.theta, key)?;
        let obj = self.surrogate(&batch, state.critic.as_ref())?;
        let counter = CallCounter::new();
        let rate = match &state.alpha_vec {
            Some(r) => StepSize::PerParam(r),
            None => StepSize::Scalar(self.cfg.alpha),
        };
        Ok(inner_adapt(&counter, &obj, &state.theta, rate)?.params)
    }
}

/// One gradient-descent step of the critic's squared error per batch, at
/// the inner step size, in collection order.
fn fit_critic(
    net: &CriticNet,
    params: &ParamVector,
    batches: &[TrajectoryBatch],
    gamma: f64,
    rate: f64,
) -> Result<ParamVector> {
    let mut p = params.clone();
    for b in batches {
        let loss = critic_loss(net, b, gamma)?;
        p = p.add_scaled(-rate, &autodiff::grad(&loss, &p)?.gradient)?;
    }
    Ok(p)
}
