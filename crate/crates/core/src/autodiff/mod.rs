//! Reverse-mode differentiation over small dense parameter vectors.
//!
//! Objectives describe themselves by recording onto a [`Tape`]; the drivers
//! here rebuild the tape on every call. [`grad`] sweeps it with plain reals,
//! [`hvp`] sweeps it with [`Dual`] numbers seeded by the direction, which gives
//! an exact Hessian-vector product. [`fd_grad`] and [`fd_hvp`] are central
//! differences kept for oracles and auditing only.

mod kernels;
mod params;
mod scalar;
mod tape;

use std::sync::atomic::{AtomicU64, Ordering};

pub use kernels::Tensor;
pub use params::{Gradient, Layout, ParamVector, Segment};
pub use scalar::{Dual, Scalar};
pub use tape::{ParamVars, Tape, Var};

pub(crate) use kernels::{add_bias, gaussian_log_density, log_softmax_pick, matmul};

use crate::error::{Error, Result};

/// A scalar function of a parameter vector that can record itself on a tape.
pub trait Objective {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParamVars) -> Result<Var>;

    /// Forward evaluation only.
    fn value(&self, at: &ParamVector) -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let p = tape.bind(at, None)?;
        let root = self.build(&mut tape, &p)?;
        let v = tape.scalar(root)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::non_finite("objective value"))
        }
    }
}

impl<O: Objective + ?Sized> Objective for &O {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParamVars) -> Result<Var> {
        (**self).build(tape, params)
    }
}

/// `a·f + b·g`, recorded as one graph.
#[derive(Clone, Debug)]
pub struct LinearCombination<F, G> {
    pub a: f64,
    pub f: F,
    pub b: f64,
    pub g: G,
}

impl<F: Objective, G: Objective> Objective for LinearCombination<F, G> {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParamVars) -> Result<Var> {
        let f = self.f.build(tape, params)?;
        let g = self.g.build(tape, params)?;
        let fa = tape.scale(f, self.a);
        let gb = tape.scale(g, self.b);
        tape.add(fa, gb)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Gradient,
}

#[derive(Clone, Debug)]
pub struct HvpEvaluation {
    pub value: f64,
    pub gradient: Gradient,
    pub hvp: Gradient,
}

fn into_gradient(at: &ParamVector, values: Vec<f64>, what: &str) -> Result<Gradient> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("{what} entry {i}")));
    }
    Gradient::new(ParamVector::new(at.layout().clone(), values)?)
}

/// Value and reverse-mode gradient of `objective` at `at`.
pub fn grad<O: Objective + ?Sized>(objective: &O, at: &ParamVector) -> Result<Evaluation> {
    let mut tape = Tape::<f64>::new();
    let p = tape.bind(at, None)?;
    let root = objective.build(&mut tape, &p)?;
    let value = tape.scalar(root)?;
    if !value.is_finite() {
        return Err(Error::non_finite("objective value"));
    }
    let g = tape.gradient(root, &p)?;
    Ok(Evaluation {
        value,
        gradient: into_gradient(at, g, "gradient")?,
    })
}

/// Exact Hessian-vector product `∇²f(at)·v` by forward-over-reverse. The
/// gradient at `at` comes out of the same sweep.
pub fn hvp<O: Objective + ?Sized>(objective: &O, at: &ParamVector, v: &ParamVector) -> Result<HvpEvaluation> {
    if !at.same_layout(v) {
        return Err(Error::LayoutMismatch("hvp direction".into()));
    }
    let mut tape = Tape::<Dual>::new();
    let p = tape.bind(at, Some(v))?;
    let root = objective.build(&mut tape, &p)?;
    let value = tape.scalar(root)?;
    if !value.is_finite() {
        return Err(Error::non_finite("objective value"));
    }
    let g = tape.gradient(root, &p)?;
    let (re, eps): (Vec<f64>, Vec<f64>) = g.iter().map(|d| (d.re, d.eps)).unzip();
    Ok(HvpEvaluation {
        value: value.re,
        gradient: into_gradient(at, re, "gradient")?,
        hvp: into_gradient(at, eps, "Hessian-vector product")?,
    })
}

/// Central-difference gradient, one coordinate at a time.
pub fn fd_grad<O: Objective + ?Sized>(objective: &O, at: &ParamVector, epsilon: f64) -> Result<Gradient> {
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon", "must be positive"));
    }
    let mut probe = at.values().to_vec();
    let mut out = Vec::with_capacity(at.len());
    for j in 0..at.len() {
        let orig = probe[j];
        probe[j] = orig + epsilon;
        let up = objective.value(&ParamVector::new(at.layout().clone(), probe.clone())?)?;
        probe[j] = orig - epsilon;
        let down = objective.value(&ParamVector::new(at.layout().clone(), probe.clone())?)?;
        probe[j] = orig;
        out.push((up - down) / (2.0 * epsilon));
    }
    into_gradient(at, out, "finite-difference gradient")
}

/// `(∇f(at+εv) − ∇f(at−εv)) / 2ε`.
pub fn fd_hvp<O: Objective + ?Sized>(
    objective: &O,
    at: &ParamVector,
    v: &ParamVector,
    epsilon: f64,
) -> Result<Gradient> {
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon", "must be positive"));
    }
    let up = grad(objective, &at.add_scaled(epsilon, v)?)?.gradient;
    let down = grad(objective, &at.add_scaled(-epsilon, v)?)?.gradient;
    Gradient::new(up.sub(&down)?.scale(1.0 / (2.0 * epsilon))?)
}

/// `‖a − b‖∞ / ‖b‖∞`, with `b` the reference. Falls back to the absolute
/// error when the reference is identically zero.
pub fn relative_error(a: &ParamVector, reference: &ParamVector) -> Result<f64> {
    let diff = a.sub(reference)?.max_abs();
    let scale = reference.max_abs();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Call counters for the differentiation entry points.
#[derive(Debug, Default)]
pub struct CallCounter {
    grads: AtomicU64,
    hvps: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub grads: u64,
    pub hvps: u64,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grad<O: Objective + ?Sized>(&self, objective: &O, at: &ParamVector) -> Result<Evaluation> {
        self.grads.fetch_add(1, Ordering::Relaxed);
        grad(objective, at)
    }

    pub fn hvp<O: Objective + ?Sized>(
        &self,
        objective: &O,
        at: &ParamVector,
        v: &ParamVector,
    ) -> Result<HvpEvaluation> {
        self.hvps.fetch_add(1, Ordering::Relaxed);
        hvp(objective, at, v)
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            grads: self.grads.load(Ordering::Relaxed),
            hvps: self.hvps.load(Ordering::Relaxed),
        }
    }
}
