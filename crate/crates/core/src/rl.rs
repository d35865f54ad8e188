//! Trajectory collection, discounted returns and the differentiable learner
//! surrogates (REINFORCE and actor-critic).

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::autodiff::{Objective, ParamVars, ParamVector, Scalar, Tape, Var};
use crate::envs::{make_env, Action, Environment, State, Task, TaskDistribution};
use crate::error::{Error, Result};
use crate::policy::{CriticNet, PolicyNet, Sampled};
use crate::rng::{Rng, StreamKey};

/// Added to the standard deviation when standardizing advantages.
pub const STD_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    /// Policy inputs, one per state.
    pub observations: Vec<Vec<f64>>,
    /// Raw actions as sampled (before any clipping).
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub logps: Vec<f64>,
    /// Ended by the environment rather than by the horizon.
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn cmp_canonical(&self, other: &Self) -> Ordering {
        let bits = |t: &Self| -> Vec<u64> {
            t.observations
                .iter()
                .flat_map(|o| o.iter().map(|v| v.to_bits()))
                .chain(t.logps.iter().map(|v| v.to_bits()))
                .collect()
        };
        self.len()
            .cmp(&other.len())
            .then_with(|| bits(self).cmp(&bits(other)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub task: Task,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn mean_return(&self) -> f64 {
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / self.len() as f64
    }

    /// Trajectories in a content-defined order, so objectives do not depend
    /// on collection order.
    fn canonical(&self) -> Vec<&Trajectory> {
        let mut v: Vec<&Trajectory> = self.trajectories.iter().collect();
        v.sort_by(|a, b| a.cmp_canonical(b));
        v
    }
}

/// Runs one episode, choosing actions with `choose`.
pub fn rollout_with(
    env: &Environment,
    rng: &mut Rng,
    mut choose: impl FnMut(&[f64], &mut Rng) -> Result<Sampled>,
) -> Result<Trajectory> {
    let mut t = Trajectory {
        states: Vec::new(),
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        logps: Vec::new(),
        terminated: false,
    };
    let mut state = env.reset(rng);
    for _ in 0..env.horizon() {
        let obs = env.observe(&state);
        let sampled = choose(&obs, rng)?;
        let step = env.step(&state, &sampled.env)?;
        t.states.push(state);
        t.observations.push(obs);
        t.actions.push(sampled.raw);
        t.rewards.push(step.reward);
        t.logps.push(sampled.logp);
        state = step.next;
        if step.done {
            t.terminated = true;
            break;
        }
    }
    Ok(t)
}

pub fn rollout(env: &Environment, policy: &PolicyNet, params: &ParamVector, rng: &mut Rng) -> Result<Trajectory> {
    rollout_with(env, rng, |obs, rng| policy.act(params, obs, rng))
}

/// `k` rollouts; trajectory `j` draws from `key.child(j)`.
pub fn sample_batch(
    env: &Environment,
    policy: &PolicyNet,
    params: &ParamVector,
    k: usize,
    key: StreamKey,
) -> Result<TrajectoryBatch> {
    let trajectories = (0..k)
        .map(|j| rollout(env, policy, params, &mut key.child(j as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch {
        task: env.task(),
        trajectories,
    })
}

/// Same result as [`sample_batch`], with rollouts spread over the rayon pool.
pub fn sample_batch_par(
    env: &Environment,
    policy: &PolicyNet,
    params: &ParamVector,
    k: usize,
    key: StreamKey,
) -> Result<TrajectoryBatch> {
    let trajectories = (0..k)
        .into_par_iter()
        .map(|j| rollout(env, policy, params, &mut key.child(j as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch {
        task: env.task(),
        trajectories,
    })
}

/// `G_t = r_t + γ G_{t+1}`, computed backwards.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advantages {
    /// Returns standardized over the whole batch.
    Standardized,
    /// Raw discounted returns.
    Raw,
}

/// REINFORCE-style surrogate `Σ_t w_t log π(a_t|s_t)` with constant weights.
#[derive(Clone, Debug)]
pub struct PolicySurrogate<'a> {
    net: &'a PolicyNet,
    obs: Vec<f64>,
    actions: Vec<Action>,
    weights: Vec<f64>,
    /// Standardization fell back to raw returns.
    pub degenerate: bool,
}

impl PolicySurrogate<'_> {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

impl Objective for PolicySurrogate<'_> {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars) -> Result<Var> {
        let d = self.net.input_dim();
        let x = tape.constant(self.actions.len(), d, &self.obs)?;
        let lp = self.net.record_logprob(tape, p, x, &self.actions)?;
        tape.weighted_sum(lp, &self.weights)
    }
}

struct Flat {
    obs: Vec<f64>,
    actions: Vec<Action>,
    returns: Vec<f64>,
}

fn flatten(batch: &TrajectoryBatch, gamma: f64) -> Result<Flat> {
    if batch.is_empty() {
        return Err(Error::validation("batch", "no trajectories"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::validation("gamma", format!("{gamma} outside (0, 1]")));
    }
    let mut f = Flat {
        obs: Vec::new(),
        actions: Vec::new(),
        returns: Vec::new(),
    };
    for t in batch.canonical() {
        f.returns.extend(discounted_returns(&t.rewards, gamma));
        f.actions.extend_from_slice(&t.actions);
        for o in &t.observations {
            f.obs.extend_from_slice(o);
        }
    }
    if f.returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::non_finite("discounted returns"));
    }
    Ok(f)
}

/// Policy-gradient surrogate `(1/K) Σ_traj Σ_t log π(a_t|s_t) Â_t`.
pub fn reinforce_objective<'a>(
    net: &'a PolicyNet,
    batch: &TrajectoryBatch,
    gamma: f64,
    advantages: Advantages,
) -> Result<PolicySurrogate<'a>> {
    let f = flatten(batch, gamma)?;
    let k = batch.len() as f64;
    let mut degenerate = false;
    let adv: Vec<f64> = match advantages {
        Advantages::Raw => f.returns.clone(),
        Advantages::Standardized => {
            let n = f.returns.len() as f64;
            let mean = f.returns.iter().sum::<f64>() / n;
            let var = f.returns.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-12 {
                degenerate = true;
                f.returns.clone()
            } else {
                f.returns.iter().map(|g| (g - mean) / (std + STD_EPS)).collect()
            }
        }
    };
    Ok(PolicySurrogate {
        net,
        obs: f.obs,
        actions: f.actions,
        weights: adv.iter().map(|a| a / k).collect(),
        degenerate,
    })
}

/// Mean squared error of a critic against discounted returns.
#[derive(Clone, Debug)]
pub struct CriticLoss<'a> {
    net: &'a CriticNet,
    obs: Vec<f64>,
    targets: Vec<f64>,
}

impl Objective for CriticLoss<'_> {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars) -> Result<Var> {
        let n = self.targets.len();
        let x = tape.constant(n, self.obs.len() / n, &self.obs)?;
        let v = self.net.record_value(tape, p, x)?;
        let g = tape.constant(n, 1, &self.targets)?;
        let diff = tape.sub(g, v)?;
        let sq = tape.square(diff);
        Ok(tape.mean(sq))
    }
}

/// Squared-error regression of `critic` onto the batch's discounted returns.
pub fn critic_loss<'a>(critic: &'a CriticNet, batch: &TrajectoryBatch, gamma: f64) -> Result<CriticLoss<'a>> {
    let f = flatten(batch, gamma)?;
    Ok(CriticLoss {
        net: critic,
        obs: f.obs,
        targets: f.returns,
    })
}

/// Actor-critic pair: the policy surrogate weighted by `G_t − V(s_t)` (critic
/// held constant) and the critic's squared error, to be minimized.
pub fn actor_critic_objective<'a>(
    net: &'a PolicyNet,
    critic: &'a CriticNet,
    critic_params: &ParamVector,
    batch: &TrajectoryBatch,
    gamma: f64,
) -> Result<(PolicySurrogate<'a>, CriticLoss<'a>)> {
    let f = flatten(batch, gamma)?;
    let d = net.input_dim();
    let k = batch.len() as f64;
    let mut weights = Vec::with_capacity(f.returns.len());
    for (i, g) in f.returns.iter().enumerate() {
        let v = critic.value(critic_params, &f.obs[i * d..(i + 1) * d])?;
        weights.push((g - v) / k);
    }
    Ok((
        PolicySurrogate {
            net,
            obs: f.obs.clone(),
            actions: f.actions,
            weights,
            degenerate: false,
        },
        CriticLoss {
            net: critic,
            obs: f.obs,
            targets: f.returns,
        },
    ))
}

#[derive(Clone, Copy, Debug)]
pub enum EvalTarget<'a> {
    Env(&'a Environment),
    /// A fresh task is drawn for every episode.
    Dist(&'a TaskDistribution),
}

/// Mean undiscounted return over `n_episodes` stochastic rollouts.
pub fn eval_return(
    target: EvalTarget<'_>,
    policy: &PolicyNet,
    params: &ParamVector,
    n_episodes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::validation("eval_episodes", "must be at least 1"));
    }
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let env = match target {
            EvalTarget::Env(e) => *e,
            EvalTarget::Dist(d) => make_env(d.sample(rng)),
        };
        total += rollout(&env, policy, params, rng)?.total_reward();
    }
    Ok(total / n_episodes as f64)
}
