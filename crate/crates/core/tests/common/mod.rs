#![allow(dead_code)]

use dmaml::autodiff::{Objective, ParamVars, ParamVector, Scalar, Tape, Var};
use dmaml::meta::{Draw, TaskSource};
use dmaml::Result;

/// `J(θ) = −½ θᵀ A θ` for a symmetric `A` (row-major, n×n).
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub a: Vec<f64>,
    pub n: usize,
}

impl Objective for Quadratic {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars) -> Result<Var> {
        let a = tape.constant(self.n, self.n, &self.a)?;
        let row = p.at(0);
        // θ is bound as a 1×n row.
        let ta = tape.matmul(row, a)?;
        let prod = tape.mul(ta, row)?;
        let s = tape.sum(prod);
        Ok(tape.scale(s, -0.5))
    }
}

/// Deterministic tasks: every draw of task `i` is the same quadratic.
pub struct QuadSource {
    pub tasks: Vec<Quadratic>,
}

impl TaskSource for QuadSource {
    type Surrogate<'s> = &'s Quadratic;

    fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn surrogate(&self, task: usize, _draw: Draw, _params: &ParamVector) -> Result<&Quadratic> {
        Ok(&self.tasks[task])
    }
}

/// `Σ_s w_s log softmax(θ)[a_s]` over frozen (action, weight) samples.
#[derive(Clone, Debug)]
pub struct Bandit {
    pub samples: Vec<(usize, f64)>,
}

impl Objective for Bandit {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars) -> Result<Var> {
        let logits = p.at(0);
        let picks: Vec<usize> = self.samples.iter().map(|s| s.0).collect();
        let weights: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        let ones = tape.constant(picks.len(), 1, &vec![1.0; picks.len()])?;
        let rows = tape.matmul(ones, logits)?;
        let lp = tape.log_softmax_pick(rows, &picks)?;
        tape.weighted_sum(lp, &weights)
    }
}

/// Frozen support and query batches per task.
pub struct BanditSource {
    pub support: Vec<Bandit>,
    pub query: Vec<Bandit>,
}

impl TaskSource for BanditSource {
    type Surrogate<'s> = &'s Bandit;

    fn n_tasks(&self) -> usize {
        self.support.len()
    }

    fn surrogate(&self, task: usize, draw: Draw, _params: &ParamVector) -> Result<&Bandit> {
        Ok(match draw {
            Draw::Support(_) => &self.support[task],
            Draw::Query => &self.query[task],
        })
    }
}

pub fn bandit_source() -> BanditSource {
    let b = |s: &[(usize, f64)]| Bandit { samples: s.to_vec() };
    BanditSource {
        support: vec![
            b(&[(0, 1.0), (1, -0.5), (0, 0.3)]),
            b(&[(1, 0.8), (1, 0.4), (0, -1.2)]),
        ],
        query: vec![
            b(&[(0, 0.7), (1, 0.2), (1, -0.9)]),
            b(&[(1, 1.1), (0, 0.6), (0, -0.4)]),
        ],
    }
}

/// Bilevel objective `Σ_i J_i^q(θ + α⃗ ⊙ ∇J_i^s(θ))`, built from values and
/// exact inner gradients only.
pub fn bilevel_value(src: &BanditSource, theta: &[f64], rates: &[f64]) -> f64 {
    let th = ParamVector::from_slice(theta);
    let mut total = 0.0;
    for (s, q) in src.support.iter().zip(&src.query) {
        let g = dmaml::autodiff::grad(s, &th).unwrap().gradient;
        let adapted: Vec<f64> = theta
            .iter()
            .zip(rates)
            .zip(g.values())
            .map(|((t, r), g)| t + r * g)
            .collect();
        total += q.value(&ParamVector::from_slice(&adapted)).unwrap();
    }
    total
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += eps;
            lo[i] -= eps;
            (f(&hi) - f(&lo)) / (2.0 * eps)
        })
        .collect()
}

// Small dense helpers (row-major n×n).
pub fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
}

pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| a * x + y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Symmetric positive definite `BᵀB + I` from a seed.
pub fn spd(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
    }
    a
}
