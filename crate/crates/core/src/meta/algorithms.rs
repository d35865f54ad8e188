//! Meta-gradient computations, independent of where task objectives come from.
//!
//! A [`TaskSource`] hands out one objective per (task, draw, parameters); the
//! RL trainer backs it with freshly sampled trajectory batches, tests back it
//! with closed-form quadratics.

use crate::autodiff::{CallCounter, Gradient, Objective, ParamVector};
use crate::error::{Error, Result};

/// Which batch a task objective is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Draw {
    /// Pre-adaptation batch; the index counts successive inner steps.
    Support(u32),
    /// Post-adaptation batch.
    Query,
}

pub trait TaskSource {
    type Surrogate<'s>: Objective
    where
        Self: 's;

    fn n_tasks(&self) -> usize;

    /// Objective for `task` estimated from a batch collected under `params`.
    fn surrogate(&self, task: usize, draw: Draw, params: &ParamVector) -> Result<Self::Surrogate<'_>>;
}

#[derive(Clone, Copy, Debug)]
pub enum StepSize<'a> {
    Scalar(f64),
    PerParam(&'a ParamVector),
}

#[derive(Clone, Debug)]
pub struct Adapted {
    pub params: ParamVector,
    pub gradient: Gradient,
}

/// One inner gradient-ascent step: `θ' = θ + α ∇J(θ)` (or `α⃗ ⊙ ∇J(θ)`).
pub fn inner_adapt<O: Objective + ?Sized>(
    counter: &CallCounter,
    objective: &O,
    theta: &ParamVector,
    rate: StepSize<'_>,
) -> Result<Adapted> {
    let gradient = counter.grad(objective, theta)?.gradient;
    let params = step(theta, &gradient, rate)?;
    Ok(Adapted { params, gradient })
}

fn step(theta: &ParamVector, g: &ParamVector, rate: StepSize<'_>) -> Result<ParamVector> {
    match rate {
        StepSize::Scalar(a) => theta.add_scaled(a, g),
        StepSize::PerParam(rates) => theta.add_hadamard(rates, g),
    }
}

/// Summed meta-gradient with its parts kept apart.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    /// `first_order + correction`.
    pub total: Gradient,
    /// `Σ_i ∇J_i(θ'_i)`.
    pub first_order: Gradient,
    /// `Σ_i H_i(θ)·(α ⊙ ∇J_i(θ'_i))`; zero for first-order methods.
    pub correction: Gradient,
    /// Pre-adaptation gradients `∇J_i(θ)`, per task.
    pub inner: Vec<Gradient>,
    /// Post-adaptation gradients `∇J_i(θ'_i)`, per task.
    pub outer: Vec<Gradient>,
}

fn require_tasks<T: TaskSource>(source: &T) -> Result<()> {
    if source.n_tasks() == 0 {
        Err(Error::EmptyTaskSet)
    } else {
        Ok(())
    }
}

fn meta_gradient<T: TaskSource>(
    counter: &CallCounter,
    source: &T,
    theta: &ParamVector,
    rate: StepSize<'_>,
    second_order: bool,
) -> Result<MetaGradient> {
    require_tasks(source)?;
    let layout = theta.layout().clone();
    let mut first_order = Gradient::zeros(layout.clone());
    let mut correction = Gradient::zeros(layout);
    let mut inner = Vec::with_capacity(source.n_tasks());
    let mut outer = Vec::with_capacity(source.n_tasks());
    for i in 0..source.n_tasks() {
        let support = source.surrogate(i, Draw::Support(0), theta)?;
        let adapted = inner_adapt(counter, &support, theta, rate)?;
        let query = source.surrogate(i, Draw::Query, &adapted.params)?;
        let g_out = counter.grad(&query, &adapted.params)?.gradient;
        if second_order {
            // d θ'/d θ = I + diag(α) H, so the chain rule needs H·(α ⊙ g').
            let h = match rate {
                StepSize::Scalar(a) => counter.hvp(&support, theta, &g_out)?.hvp.scale(a)?,
                StepSize::PerParam(rates) => {
                    counter.hvp(&support, theta, &rates.hadamard(&g_out)?)?.hvp.into_params()
                }
            };
            correction.accumulate(1.0, &h)?;
        }
        first_order.accumulate(1.0, &g_out)?;
        inner.push(adapted.gradient);
        outer.push(g_out);
    }
    let total = Gradient::new(first_order.add(&correction)?)?;
    Ok(MetaGradient {
        total,
        first_order,
        correction,
        inner,
        outer,
    })
}

/// `Σ_i (I + α H_i(θ)) ∇J_i(θ'_i)` with one exact Hessian-vector product per task.
pub fn maml_meta_gradient<T: TaskSource>(
    counter: &CallCounter,
    source: &T,
    theta: &ParamVector,
    alpha: f64,
) -> Result<MetaGradient> {
    meta_gradient(counter, source, theta, StepSize::Scalar(alpha), true)
}

/// `Σ_i ∇J_i(θ'_i)`: the same adaptation with the Hessian term dropped.
pub fn fomaml_meta_gradient<T: TaskSource>(
    counter: &CallCounter,
    source: &T,
    theta: &ParamVector,
    alpha: f64,
) -> Result<MetaGradient> {
    meta_gradient(counter, source, theta, StepSize::Scalar(alpha), false)
}

/// `θ + β (1/M) Σ_i (θ'_i − θ)`, where each `θ'_i` takes `n_inner` inner steps
/// on freshly drawn batches.
pub fn reptile_step<T: TaskSource>(
    counter: &CallCounter,
    source: &T,
    theta: &ParamVector,
    alpha: f64,
    beta: f64,
    n_inner: u32,
) -> Result<ParamVector> {
    require_tasks(source)?;
    let m = source.n_tasks();
    let mut shift = ParamVector::zeros(theta.layout().clone());
    for i in 0..m {
        let mut adapted = theta.clone();
        for s in 0..n_inner {
            let obj = source.surrogate(i, Draw::Support(s), &adapted)?;
            adapted = inner_adapt(counter, &obj, &adapted, StepSize::Scalar(alpha))?.params;
        }
        shift = shift.add(&adapted.sub(theta)?)?;
    }
    theta.add_scaled(beta / m as f64, &shift)
}

pub const MIN_RATE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct MetaSgdUpdate {
    pub theta: ParamVector,
    pub rates: ParamVector,
    pub meta_gradient: MetaGradient,
    /// `Σ_i ∇J_i(θ'_i) ⊙ ∇J_i(θ)`: derivative of the outer objective in the rates.
    pub rate_gradient: ParamVector,
}

/// Meta-SGD: per-parameter inner rates `α⃗`, learned jointly with `θ`.
pub fn metasgd_step<T: TaskSource>(
    counter: &CallCounter,
    source: &T,
    theta: &ParamVector,
    rates: &ParamVector,
    beta: f64,
) -> Result<MetaSgdUpdate> {
    if rates.values().iter().any(|&r| r <= 0.0) {
        return Err(Error::validation("alpha_vec", "rates must be strictly positive"));
    }
    let mg = meta_gradient(counter, source, theta, StepSize::PerParam(rates), true)?;
    let rate_gradient = rate_gradient(&mg)?;
    let new_theta = theta.add_scaled(beta, &mg.total)?;
    let new_rates = rates
        .add_scaled(beta, &rate_gradient)?
        .map(|r| r.max(MIN_RATE))?;
    Ok(MetaSgdUpdate {
        theta: new_theta,
        rates: new_rates,
        meta_gradient: mg,
        rate_gradient,
    })
}

fn rate_gradient(mg: &MetaGradient) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(mg.total.layout().clone());
    for (g_in, g_out) in mg.inner.iter().zip(&mg.outer) {
        acc = acc.add(&g_out.hadamard(g_in)?)?;
    }
    Ok(acc)
}

/// First-order step on the medium-task objective: `θ + δ ∇J_med(θ)`.
pub fn directed_prestep<O: Objective + ?Sized>(
    counter: &CallCounter,
    medium: &O,
    theta: &ParamVector,
    delta: f64,
) -> Result<Adapted> {
    inner_adapt(counter, medium, theta, StepSize::Scalar(delta))
}
