//! Append-only computation graph over small dense matrices.
//!
//! Nodes are only ever appended, so every node's inputs precede it and the
//! recording order is a valid topological order. A tape is built for one
//! evaluation and dropped afterwards.

use super::kernels::{self, Tensor};
use super::params::ParamVector;
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Const,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    LogSoftmaxPick {
        logits: Var,
        picks: Vec<usize>,
        probs: Tensor<S>,
    },
    GaussianLogDensity {
        mean: Var,
        log_std: Var,
        actions: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Parameter leaves bound on a tape, one per layout segment.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<(String, Var, usize)>,
    len: usize,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, v, _)| *v)
            .ok_or_else(|| Error::Graph(format!("no parameter segment `{name}`")))
    }

    /// Leaf for the `i`-th segment in layout order.
    pub fn at(&self, i: usize) -> Var {
        self.vars[i].1
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.node(v).value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<S> {
        let t = self.value(v);
        if t.rows == 1 && t.cols == 1 {
            Ok(t.data[0])
        } else {
            Err(Error::Graph(format!(
                "expected a scalar node, found {}x{}",
                t.rows, t.cols
            )))
        }
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Graph(format!(
                "constant of {} values cannot be {rows}x{cols}",
                data.len()
            )));
        }
        let t = Tensor::from_fn(rows, cols, |i| S::from_f64(data[i]));
        Ok(self.push(t, Op::Const, false))
    }

    /// Binds every segment of `params` as a differentiable leaf. With a
    /// tangent, each leaf is seeded with the matching tangent entries.
    pub fn bind(&mut self, params: &ParamVector, tangent: Option<&ParamVector>) -> Result<ParamVars> {
        if let Some(t) = tangent {
            if !params.same_layout(t) {
                return Err(Error::LayoutMismatch(
                    "tangent layout differs from parameters".into(),
                ));
            }
        }
        let mut vars = Vec::with_capacity(params.layout().segments().len());
        for seg in params.layout().segments() {
            let (rows, cols) = seg.matrix_dims();
            let range = seg.range();
            let vals = &params.values()[range.clone()];
            let t = match tangent {
                Some(tv) => {
                    let tan = &tv.values()[range];
                    Tensor::from_fn(rows, cols, |i| S::seeded(vals[i], tan[i]))
                }
                None => Tensor::from_fn(rows, cols, |i| S::from_f64(vals[i])),
            };
            let v = self.push(t, Op::Param, true);
            vars.push((seg.name.clone(), v, seg.offset));
        }
        Ok(ParamVars {
            vars,
            len: params.len(),
        })
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(Error::Graph(format!(
                "matmul {}x{} by {}x{}",
                ta.rows, ta.cols, tb.rows, tb.cols
            )));
        }
        let out = kernels::matmul(ta, tb);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    /// Adds a 1×m row to every row of an n×m matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(Error::Graph(format!(
                "bias {}x{} for {}x{}",
                tb.rows, tb.cols, tx.rows, tx.cols
            )));
        }
        let out = kernels::add_bias(tx, tb);
        let g = self.grad_of(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), g))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows == tb.rows && ta.cols == tb.cols {
            Ok(())
        } else {
            Err(Error::Graph(format!(
                "{what} of {}x{} and {}x{}",
                ta.rows, ta.cols, tb.rows, tb.cols
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = kernels::zip(self.value(a), self.value(b), |x, y| x + y);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = kernels::zip(self.value(a), self.value(b), |x, y| x - y);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = kernels::zip(self.value(a), self.value(b), |x, y| x * y);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = kernels::map(self.value(x), |v| v.scale(c));
        let g = self.grad_of(&[x]);
        self.push(out, Op::Scale(x, c), g)
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let out = kernels::map(self.value(x), |v| v + cs);
        let g = self.grad_of(&[x]);
        self.push(out, Op::Shift(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = kernels::map(self.value(x), S::tanh);
        let g = self.grad_of(&[x]);
        self.push(out, Op::Tanh(x), g)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = kernels::map(self.value(x), |v| v * v);
        let g = self.grad_of(&[x]);
        self.push(out, Op::Square(x), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::sum(&self.value(x).data);
        let g = self.grad_of(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.data.len() as f64;
        let s = kernels::sum(&t.data).scale(1.0 / n);
        let g = self.grad_of(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), g)
    }

    /// Per-row `log softmax(logits)[pick]`, returned as an n×1 column.
    pub fn log_softmax_pick(&mut self, logits: Var, picks: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if picks.len() != t.rows {
            return Err(Error::Graph(format!(
                "{} picks for {} rows of logits",
                picks.len(),
                t.rows
            )));
        }
        if let Some(p) = picks.iter().find(|&&p| p >= t.cols) {
            return Err(Error::Graph(format!(
                "pick {p} out of range for {} classes",
                t.cols
            )));
        }
        let mut probs = Tensor::zeros(t.rows, t.cols);
        let mut out = Tensor::zeros(t.rows, 1);
        for (i, &pick) in picks.iter().enumerate() {
            let row = t.row(i);
            let (logp, lse) = kernels::log_softmax_pick(row, pick);
            out.data[i] = logp;
            for (j, &z) in row.iter().enumerate() {
                probs.data[i * t.cols + j] = (z - lse).exp();
            }
        }
        let g = self.grad_of(&[logits]);
        Ok(self.push(
            out,
            Op::LogSoftmaxPick {
                logits,
                picks: picks.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// Per-row Gaussian log-density of `actions` under `N(mean, exp(log_std)²)`.
    /// `mean` is n×1 and `log_std` a shared 1×1 node.
    pub fn gaussian_log_density(&mut self, mean: Var, log_std: Var, actions: &[f64]) -> Result<Var> {
        let (tm, ts) = (self.value(mean), self.value(log_std));
        if tm.cols != 1 || tm.rows != actions.len() || ts.data.len() != 1 {
            return Err(Error::Graph(format!(
                "gaussian density: mean {}x{}, log_std {} entries, {} actions",
                tm.rows,
                tm.cols,
                ts.data.len(),
                actions.len()
            )));
        }
        let ls = ts.data[0];
        let out = Tensor::from_fn(tm.rows, 1, |i| {
            kernels::gaussian_log_density(tm.data[i], ls, actions[i])
        });
        let g = self.grad_of(&[mean, log_std]);
        Ok(self.push(
            out,
            Op::GaussianLogDensity {
                mean,
                log_std,
                actions: actions.to_vec(),
            },
            g,
        ))
    }

    /// `Σ_i w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.data.len() != weights.len() {
            return Err(Error::Graph(format!(
                "{} weights for {} entries",
                weights.len(),
                t.data.len()
            )));
        }
        let mut acc = S::from_f64(0.0);
        for (v, &w) in t.data.iter().zip(weights) {
            acc += v.scale(w);
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            g,
        ))
    }

    /// Reverse sweep from a scalar root. Returns the flat derivative of the
    /// root with respect to every bound parameter, in layout order.
    pub fn gradient(&self, root: Var, params: &ParamVars) -> Result<Vec<S>> {
        self.scalar(root)?;
        let mut adj: Vec<Option<Tensor<S>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Tensor::scalar(S::from_f64(1.0)));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.node(*a).needs_grad {
                        accumulate(&mut adj, *a, kernels::matmul_bt(&g, tb));
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut adj, *b, kernels::matmul_at(ta, &g));
                    }
                }
                Op::AddBias(x, b) => {
                    if self.node(*b).needs_grad {
                        accumulate(&mut adj, *b, kernels::column_sums(&g));
                    }
                    if self.node(*x).needs_grad {
                        accumulate(&mut adj, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.node(*a).needs_grad {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.node(*a).needs_grad {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut adj, *b, kernels::map(&g, |v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.node(*a).needs_grad {
                        accumulate(&mut adj, *a, kernels::zip(&g, tb, |x, y| x * y));
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut adj, *b, kernels::zip(&g, ta, |x, y| x * y));
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut adj, *x, kernels::map(&g, |v| v.scale(c)));
                }
                Op::Shift(x) => accumulate(&mut adj, *x, g),
                Op::Tanh(x) => {
                    let y = &node.value;
                    let one = S::from_f64(1.0);
                    accumulate(&mut adj, *x, kernels::zip(&g, y, |gv, yv| gv * (one - yv * yv)));
                }
                Op::Square(x) => {
                    let tx = self.value(*x);
                    accumulate(&mut adj, *x, kernels::zip(&g, tx, |gv, xv| (gv * xv).scale(2.0)));
                }
                Op::Sum(x) => {
                    let tx = self.value(*x);
                    let gv = g.data[0];
                    accumulate(&mut adj, *x, Tensor::from_fn(tx.rows, tx.cols, |_| gv));
                }
                Op::Mean(x) => {
                    let tx = self.value(*x);
                    let gv = g.data[0].scale(1.0 / tx.data.len() as f64);
                    accumulate(&mut adj, *x, Tensor::from_fn(tx.rows, tx.cols, |_| gv));
                }
                Op::LogSoftmaxPick {
                    logits,
                    picks,
                    probs,
                } => {
                    let cols = probs.cols;
                    let mut d = Tensor::zeros(probs.rows, cols);
                    for (i, &pick) in picks.iter().enumerate() {
                        let gi = g.data[i];
                        for j in 0..cols {
                            let p = probs.data[i * cols + j];
                            let ind = if j == pick { S::from_f64(1.0) } else { S::from_f64(0.0) };
                            d.data[i * cols + j] = gi * (ind - p);
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
                Op::GaussianLogDensity {
                    mean,
                    log_std,
                    actions,
                } => {
                    let tm = self.value(*mean);
                    let ls = self.value(*log_std).data[0];
                    let inv_var = (ls.scale(-2.0)).exp();
                    let mut dmean = Tensor::zeros(tm.rows, 1);
                    let mut dls = S::from_f64(0.0);
                    let one = S::from_f64(1.0);
                    for i in 0..tm.rows {
                        let diff = S::from_f64(actions[i]) - tm.data[i];
                        let z2 = diff * diff * inv_var;
                        dmean.data[i] = g.data[i] * diff * inv_var;
                        dls += g.data[i] * (z2 - one);
                    }
                    if self.node(*mean).needs_grad {
                        accumulate(&mut adj, *mean, dmean);
                    }
                    if self.node(*log_std).needs_grad {
                        accumulate(&mut adj, *log_std, Tensor::scalar(dls));
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let tx = self.value(*x);
                    let gv = g.data[0];
                    accumulate(
                        &mut adj,
                        *x,
                        Tensor::from_fn(tx.rows, tx.cols, |i| gv.scale(weights[i])),
                    );
                }
            }
        }

        let mut flat = vec![S::from_f64(0.0); params.len];
        for (_, var, offset) in &params.vars {
            if let Some(Some(g)) = adj.get(var.0) {
                flat[*offset..*offset + g.data.len()].copy_from_slice(&g.data);
            }
        }
        Ok(flat)
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data.iter_mut().zip(g.data) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
