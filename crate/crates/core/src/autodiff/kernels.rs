//! Dense kernels shared by the tape and the tape-free inference path, so both
//! produce bit-identical values.

use super::scalar::Scalar;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::from_f64(0.0); rows * cols],
        }
    }

    pub fn scalar(v: S) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize) -> S) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(f).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `a·b`. Each output entry accumulates over the shared index in increasing
/// order, independent of how many rows `a` has.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * m..(i + 1) * m];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * m..(kk + 1) * m];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `g·bᵀ` for g (n×m), b (k×m).
pub fn matmul_bt<S: Scalar>(g: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (n, m, k) = (g.rows, g.cols, b.rows);
    let mut out = Tensor::zeros(n, k);
    for i in 0..n {
        let grow = &g.data[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &b.data[kk * m..(kk + 1) * m];
            let mut acc = S::from_f64(0.0);
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out.data[i * k + kk] = acc;
        }
    }
    out
}

/// `aᵀ·g` for a (n×k), g (n×m).
pub fn matmul_at<S: Scalar>(a: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let (n, k, m) = (a.rows, a.cols, g.cols);
    let mut out = Tensor::zeros(k, m);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let grow = &g.data[i * m..(i + 1) * m];
        for (kk, &aik) in arow.iter().enumerate() {
            let orow = &mut out.data[kk * m..(kk + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
    out
}

pub fn add_bias<S: Scalar>(x: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let m = x.cols;
    Tensor::from_fn(x.rows, m, |i| x.data[i] + b.data[i % m])
}

pub fn column_sums<S: Scalar>(g: &Tensor<S>) -> Tensor<S> {
    let mut out = Tensor::zeros(1, g.cols);
    for i in 0..g.rows {
        for (o, &v) in out.data.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

pub fn map<S: Scalar>(x: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    Tensor {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

pub fn zip<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

pub fn sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = S::from_f64(0.0);
    for &x in xs {
        acc += x;
    }
    acc
}

/// Returns `(log softmax(z)[pick], logsumexp(z))`.
pub fn log_softmax_pick<S: Scalar>(z: &[S], pick: usize) -> (S, S) {
    let mut m = z[0];
    for &v in &z[1..] {
        if v.re() > m.re() {
            m = v;
        }
    }
    let mut s = S::from_f64(0.0);
    for &v in z {
        s += (v - m).exp();
    }
    let lse = m + s.ln();
    (z[pick] - lse, lse)
}

pub fn gaussian_log_density<S: Scalar>(mean: S, log_std: S, action: f64) -> S {
    let z = (S::from_f64(action) - mean) * (-log_std).exp();
    (z * z).scale(-0.5) - log_std - S::from_f64(HALF_LN_2PI)
}
