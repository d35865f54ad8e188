//! Stochastic policies and value critics as tanh MLPs over a [`ParamVector`].
//!
//! Networks are pure descriptions (sizes plus layout); parameters are passed
//! in explicitly so one description serves the meta-parameters and every
//! adapted copy. Rollouts use a tape-free forward pass built from the same
//! kernels as the differentiable path, so a sampled action's log-probability
//! is bit-identical to the one recomputed on the tape.

pub mod checkpoint;

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{self, Layout, ParamVars, ParamVector, Scalar, Tape, Tensor, Var};
use crate::envs::{Action, ActionSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const INITIAL_STD: f64 = 2.0;
const LOG_STD: &str = "log_std";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Head {
    Categorical(usize),
    /// Gaussian over `[lo, hi]`; the network output is mapped affinely so that
    /// zero lands on the interval midpoint and ±1 on its ends.
    Gaussian { lo: f64, hi: f64 },
}

impl Head {
    pub fn for_actions(spec: ActionSpec) -> Self {
        match spec {
            ActionSpec::Discrete(n) => Head::Categorical(n),
            ActionSpec::Continuous { lo, hi } => Head::Gaussian { lo, hi },
        }
    }

    fn width(self) -> usize {
        match self {
            Head::Categorical(n) => n,
            Head::Gaussian { .. } => 1,
        }
    }
}

/// Fully connected tanh network shape with its parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    layout: Arc<Layout>,
}

fn weight_name(i: usize, n_hidden: usize) -> (String, String) {
    if i == n_hidden {
        ("head.weight".into(), "head.bias".into())
    } else {
        (format!("hidden{i}.weight"), format!("hidden{i}.bias"))
    }
}

impl Mlp {
    fn new(input_dim: usize, hidden: &[usize], output_dim: usize, extra: &[(&str, Vec<usize>)]) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let names: Vec<(String, String)> = (0..dims.len() - 1)
            .map(|i| weight_name(i, hidden.len()))
            .collect();
        let mut shapes: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, (w, b)) in names.iter().enumerate() {
            shapes.push((w.as_str(), vec![dims[i], dims[i + 1]]));
            shapes.push((b.as_str(), vec![dims[i + 1]]));
        }
        shapes.extend(extra.iter().cloned());
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            layout: Arc::new(Layout::from_shapes(shapes)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Weights uniform in `±sqrt(3/fan_in)` (variance `1/fan_in`), biases zero.
    fn init_values(&self, rng: &mut Rng) -> Vec<f64> {
        let mut values = vec![0.0; self.layout.len()];
        for seg in self.layout.segments() {
            if seg.name.ends_with(".weight") {
                let bound = (3.0 / seg.shape[0] as f64).sqrt();
                for v in &mut values[seg.range()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        values
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().as_ref() == self.layout.as_ref() {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("parameters do not match network".into()))
        }
    }

    /// Records the network on `tape` for a batch of inputs (n×input_dim).
    fn record<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.n_layers() {
            let w = p.at(2 * i);
            let b = p.at(2 * i + 1);
            h = tape.affine(h, w, b)?;
            if i + 1 < self.n_layers() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass for a single input row.
    fn forward_row(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Graph(format!(
                "input of width {} for a network expecting {}",
                x.len(),
                self.input_dim
            )));
        }
        let segs = self.layout.segments();
        let mut h = Tensor {
            rows: 1,
            cols: x.len(),
            data: x.to_vec(),
        };
        for i in 0..self.n_layers() {
            let (ws, bs) = (&segs[2 * i], &segs[2 * i + 1]);
            let (r, c) = ws.matrix_dims();
            let w = Tensor {
                rows: r,
                cols: c,
                data: params.values()[ws.range()].to_vec(),
            };
            let b = Tensor {
                rows: 1,
                cols: c,
                data: params.values()[bs.range()].to_vec(),
            };
            h = autodiff::add_bias(&autodiff::matmul(&h, &w), &b);
            if i + 1 < self.n_layers() {
                h.data.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(h.data)
    }
}

/// A sampled action. `raw` is what the log-probability refers to; `env`
/// is the command sent to the environment (clipped for Gaussian heads).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampled {
    pub raw: Action,
    pub env: Action,
    pub logp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    mlp: Mlp,
    head: Head,
}

impl PolicyNet {
    pub fn new(input_dim: usize, hidden: &[usize], head: Head) -> Self {
        let extra: Vec<(&str, Vec<usize>)> = match head {
            Head::Categorical(_) => vec![],
            Head::Gaussian { .. } => vec![(LOG_STD, vec![1])],
        };
        Self {
            mlp: Mlp::new(input_dim, hidden, head.width(), &extra),
            head,
        }
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.mlp.layout()
    }

    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut values = self.mlp.init_values(rng);
        if let Some(seg) = self.mlp.layout.segment(LOG_STD) {
            values[seg.offset] = INITIAL_STD.ln();
        }
        ParamVector::new(self.mlp.layout.clone(), values).expect("initializer is finite")
    }

    fn gaussian_map(lo: f64, hi: f64) -> (f64, f64) {
        (0.5 * (hi - lo), 0.5 * (lo + hi))
    }

    /// Head output for a batch: logits (n×k) or Gaussian means (n×1).
    pub fn record_head<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars, obs: Var) -> Result<Var> {
        let z = self.mlp.record(tape, p, obs)?;
        Ok(match self.head {
            Head::Categorical(_) => z,
            Head::Gaussian { lo, hi } => {
                let (half, mid) = Self::gaussian_map(lo, hi);
                let scaled = tape.scale(z, half);
                tape.shift(scaled, mid)
            }
        })
    }

    /// Per-row log-probabilities (n×1) of `actions` at observations `obs`
    /// (n×input_dim), differentiable with respect to the bound parameters.
    pub fn record_logprob<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &ParamVars,
        obs: Var,
        actions: &[Action],
    ) -> Result<Var> {
        let head = self.record_head(tape, p, obs)?;
        match self.head {
            Head::Categorical(_) => {
                let picks = actions
                    .iter()
                    .map(|a| match a {
                        Action::Discrete(i) => Ok(*i),
                        other => Err(Error::Graph(format!("{other} for a categorical head"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                tape.log_softmax_pick(head, &picks)
            }
            Head::Gaussian { .. } => {
                let raw = actions
                    .iter()
                    .map(|a| match a {
                        Action::Continuous(x) => Ok(*x),
                        other => Err(Error::Graph(format!("{other} for a gaussian head"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let log_std = p.get(LOG_STD)?;
                tape.gaussian_log_density(head, log_std, &raw)
            }
        }
    }

    /// Head output at one observation without a tape.
    pub fn head_row(&self, params: &ParamVector, obs: &[f64]) -> Result<Vec<f64>> {
        self.mlp.check_params(params)?;
        let mut z = self.mlp.forward_row(params, obs)?;
        if let Head::Gaussian { lo, hi } = self.head {
            let (half, mid) = Self::gaussian_map(lo, hi);
            z[0] = z[0] * half + mid;
        }
        Ok(z)
    }

    pub fn log_std(&self, params: &ParamVector) -> Option<f64> {
        params.segment(LOG_STD).map(|s| s[0])
    }

    pub fn act(&self, params: &ParamVector, obs: &[f64], rng: &mut Rng) -> Result<Sampled> {
        let out = self.head_row(params, obs)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("policy output"));
        }
        let sampled = match self.head {
            Head::Categorical(n) => {
                let lse = autodiff::log_softmax_pick(&out, 0).1;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (j, &z) in out.iter().enumerate() {
                    acc += (z - lse).exp();
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                let logp = autodiff::log_softmax_pick(&out, pick).0;
                Sampled {
                    raw: Action::Discrete(pick),
                    env: Action::Discrete(pick),
                    logp,
                }
            }
            Head::Gaussian { lo, hi } => {
                let log_std = self.log_std(params).expect("gaussian head has log_std");
                let noise: f64 = StandardNormal.sample(rng);
                let raw = out[0] + log_std.exp() * noise;
                let logp = autodiff::gaussian_log_density(out[0], log_std, raw);
                Sampled {
                    raw: Action::Continuous(raw),
                    env: Action::Continuous(raw.clamp(lo, hi)),
                    logp,
                }
            }
        };
        if !sampled.logp.is_finite() {
            return Err(Error::non_finite("action log-probability"));
        }
        Ok(sampled)
    }

    /// Most likely action (argmax or clipped mean).
    pub fn greedy(&self, params: &ParamVector, obs: &[f64]) -> Result<Action> {
        let out = self.head_row(params, obs)?;
        Ok(match self.head {
            Head::Categorical(_) => {
                let best = out
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &z)| if z > b.1 { (j, z) } else { b })
                    .0;
                Action::Discrete(best)
            }
            Head::Gaussian { lo, hi } => Action::Continuous(out[0].clamp(lo, hi)),
        })
    }

    /// Log-probability of one action, evaluated on a fresh tape.
    pub fn logprob(&self, params: &ParamVector, obs: &[f64], action: Action) -> Result<f64> {
        self.mlp.check_params(params)?;
        let mut tape = Tape::<f64>::new();
        let p = tape.bind(params, None)?;
        let x = tape.constant(1, obs.len(), obs)?;
        let lp = self.record_logprob(&mut tape, &p, x, &[action])?;
        Ok(tape.value(lp).data[0])
    }
}

/// State-value network with a scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    mlp: Mlp,
}

impl CriticNet {
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            mlp: Mlp::new(input_dim, hidden, 1, &[]),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.mlp.layout()
    }

    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        ParamVector::new(self.mlp.layout.clone(), self.mlp.init_values(rng)).expect("initializer is finite")
    }

    /// Values for a batch of observations (n×1 column).
    pub fn record_value<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars, obs: Var) -> Result<Var> {
        self.mlp.record(tape, p, obs)
    }

    pub fn value(&self, params: &ParamVector, obs: &[f64]) -> Result<f64> {
        self.mlp.check_params(params)?;
        let v = self.mlp.forward_row(params, obs)?[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::non_finite("critic value"))
        }
    }
}
