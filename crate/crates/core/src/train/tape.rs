//! Reverse-mode differentiation over small dense row-major matrices.
//!
//! A [`Tape`] records every operation of one loss evaluation. `backward`
//! walks the records in reverse once and accumulates adjoints into a flat
//! gradient buffer for the nodes registered as parameters.

use crate::error::{Result, TsgError};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j] = m[(i, j)];
            }
        }
        out
    }

    /// One row per vector.
    pub fn from_rows(rows: &[nalgebra::DVector<f64>], cols: usize) -> Self {
        let mut out = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(r.as_slice());
        }
        out
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// `Y = X W^T` with `X: b x n`, `W: m x n`.
fn matmul_t(x: &Mat, w: &Mat) -> Mat {
    let mut y = Mat::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        for (o, yo) in yi.iter_mut().enumerate() {
            *yo = dot(xi, w.row(o));
        }
    }
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Index of a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    /// Parameter block starting at this offset of the flat parameter vector.
    Param(usize),
    /// `x W^T`.
    MatmulT(Var, Var),
    /// `x C^T` for a constant `C`.
    MatmulConstT(Var, Mat),
    /// Row `i` of the result is `C_i x_i`.
    RowMatmul(Var, Vec<Mat>),
    /// `x + 1 b^T`.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Row `i` multiplied by `s_i`.
    ScaleRows(Var, Vec<f64>),
    Tanh(Var),
    /// `1 - x^2`.
    OneMinusSq(Var),
    /// Selected rows, in order.
    Rows(Var, Vec<usize>),
    /// `sum x^2` as a 1x1 value.
    SumSq(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    /// Parameter block read from `theta[offset..offset + rows * cols]`.
    pub fn param(&mut self, theta: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let data = theta[offset..offset + rows * cols].to_vec();
        self.push(Mat::from_vec(rows, cols, data), Op::Param(offset))
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let y = matmul_t(self.value(x), self.value(w));
        self.push(y, Op::MatmulT(x, w))
    }

    pub fn matmul_const_t(&mut self, x: Var, c: Mat) -> Var {
        let y = matmul_t(self.value(x), &c);
        self.push(y, Op::MatmulConstT(x, c))
    }

    pub fn row_matmul(&mut self, x: Var, per_row: Vec<Mat>) -> Var {
        let xv = self.value(x);
        assert_eq!(per_row.len(), xv.rows, "one matrix per row");
        let out_cols = per_row.first().map_or(0, |c| c.rows);
        let mut y = Mat::zeros(xv.rows, out_cols);
        for (i, c) in per_row.iter().enumerate() {
            let xi = xv.row(i);
            for (o, yo) in y.row_mut(i).iter_mut().enumerate() {
                *yo = dot(c.row(o), xi);
            }
        }
        self.push(y, Op::RowMatmul(x, per_row))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut y = self.value(x).clone();
        let bv = &self.value(b).data;
        assert_eq!(bv.len(), y.cols, "bias length");
        for i in 0..y.rows {
            axpy(1.0, bv, y.row_mut(i));
        }
        self.push(y, Op::AddBias(x, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let y = Mat::from_vec(av.rows, av.cols, data);
        self.push(y, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let y = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| f(*x)).collect());
        self.push(y, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn one_minus_sq(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x * x, Op::OneMinusSq(a))
    }

    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Var {
        let mut y = self.value(a).clone();
        assert_eq!(s.len(), y.rows, "one scale per row");
        for (i, si) in s.iter().enumerate() {
            y.row_mut(i).iter_mut().for_each(|v| *v *= si);
        }
        self.push(y, Op::ScaleRows(a, s))
    }

    pub fn rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut y = Mat::zeros(idx.len(), av.cols);
        for (k, &i) in idx.iter().enumerate() {
            y.row_mut(k).copy_from_slice(av.row(i));
        }
        self.push(y, Op::Rows(a, idx))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().map(|x| x * x).sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumSq(a))
    }

    /// Gradient of the scalar `out` with respect to every parameter block,
    /// accumulated into a vector of length `n_params`.
    pub fn backward(&self, out: Var, n_params: usize) -> Result<Vec<f64>> {
        let v = self.scalar(out);
        if !v.is_finite() {
            return Err(TsgError::Numerical(format!("loss is not finite ({v})")));
        }
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut grad = vec![0.0; n_params];

        for k in (0..=out.0).rev() {
            let Some(g) = adj[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Const => {}
                Op::Param(offset) => {
                    for (gi, d) in grad[*offset..*offset + g.data.len()].iter_mut().zip(&g.data) {
                        *gi += d;
                    }
                }
                Op::MatmulT(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    let mut dw = Mat::zeros(wv.rows, wv.cols);
                    for i in 0..g.rows {
                        let gi = g.row(i);
                        let xi = xv.row(i);
                        for (o, &go) in gi.iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, wv.row(o), dx.row_mut(i));
                                axpy(go, xi, dw.row_mut(o));
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *w, dw);
                }
                Op::MatmulConstT(x, c) => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        for (o, &go) in g.row(i).iter().enumerate() {
                            axpy(go, c.row(o), dx.row_mut(i));
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::RowMatmul(x, per_row) => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (i, c) in per_row.iter().enumerate() {
                        for (o, &go) in g.row(i).iter().enumerate() {
                            axpy(go, c.row(o), dx.row_mut(i));
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::AddBias(x, b) => {
                    let mut db = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        axpy(1.0, g.row(i), &mut db.data);
                    }
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = Mat::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    accumulate(&mut adj, *b, neg);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    let db = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, Mat::from_vec(g.rows, g.cols, da));
                    accumulate(&mut adj, *b, Mat::from_vec(g.rows, g.cols, db));
                }
                Op::Scale(a, s) => {
                    let da = g.data.iter().map(|x| s * x).collect();
                    accumulate(&mut adj, *a, Mat::from_vec(g.rows, g.cols, da));
                }
                Op::ScaleRows(a, s) => {
                    let mut da = g;
                    for (i, si) in s.iter().enumerate() {
                        da.row_mut(i).iter_mut().for_each(|v| *v *= si);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = g.data.iter().zip(&y.data).map(|(d, h)| d * (1.0 - h * h)).collect();
                    accumulate(&mut adj, *a, Mat::from_vec(g.rows, g.cols, da));
                }
                Op::OneMinusSq(a) => {
                    let av = self.value(*a);
                    let da = g.data.iter().zip(&av.data).map(|(d, x)| -2.0 * x * d).collect();
                    accumulate(&mut adj, *a, Mat::from_vec(g.rows, g.cols, da));
                }
                Op::Rows(a, idx) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows, av.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(1.0, g.row(k), da.row_mut(i));
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::SumSq(a) => {
                    let av = self.value(*a);
                    let s = 2.0 * g.data[0];
                    let da = av.data.iter().map(|x| s * x).collect();
                    accumulate(&mut adj, *a, Mat::from_vec(av.rows, av.cols, da));
                }
            }
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(TsgError::Numerical(format!("gradient entry {bad} is not finite")));
        }
        Ok(grad)
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => axpy(1.0, &g.data, &mut existing.data),
        slot @ None => *slot = Some(g),
    }
}
