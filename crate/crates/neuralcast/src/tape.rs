//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; [`Tape::backward`]
//! returns gradients for the store's parameters only.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<R> {
    names: Vec<String>,
    values: Vec<Array2<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<R>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array2<R> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<R> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<R>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Array2<R>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<R>] {
        &mut self.values
    }

    pub fn zeros_like(&self) -> Vec<Array2<R>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| S::c(x.f64()))).collect(),
        }
    }
}

#[derive(Debug)]
enum Op<R> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Broadcasts a `[1, n]` row over every row of `a`.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    MulConst(Var, Array2<R>),
    Relu(Var),
    Gelu { x: Var, tanh: Array2<R> },
    Softmax { x: Var, k: R, causal: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<R>, rstd: Array1<R> },
    Window { x: Var, size: usize, pad: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Mse { pred: Var, target: Array2<R> },
}

struct Node<R> {
    value: Option<Array2<R>>,
    op: Op<R>,
}

pub struct Tape<'p, R> {
    store: &'p ParamStore<R>,
    nodes: Vec<Node<R>>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;
pub const LN_EPS: f64 = 1e-5;

const LANES: usize = 8;

/// Reductions over eight independent accumulators so the loops vectorize.
#[inline(always)]
fn lane_max<R: Real>(xs: &[R]) -> R {
    let mut acc = [R::neg_infinity(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a = if x > *a { x } else { *a };
        }
    }
    tail.iter().chain(&acc).fold(R::neg_infinity(), |m, &x| if x > m { x } else { m })
}

#[inline(always)]
fn lane_dot<R: Real>(xs: &[R], ys: &[R]) -> R {
    let mut acc = [R::zero(); LANES];
    let (cx, cy) = (xs.chunks_exact(LANES), ys.chunks_exact(LANES));
    let tail = cx.remainder().iter().zip(cy.remainder()).fold(R::zero(), |s, (&x, &y)| s + x * y);
    for (a, b) in cx.zip(cy) {
        for ((s, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *s += x * y;
        }
    }
    acc.iter().fold(tail, |s, &x| s + x)
}

#[inline(always)]
fn lane_sum<R: Real>(xs: &[R]) -> R {
    let mut acc = [R::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder().iter().fold(R::zero(), |s, &x| s + x);
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += x;
        }
    }
    acc.iter().fold(tail, |s, &x| s + x)
}

/// `y = exp(k (x - max))` in place, returning the sum.
#[inline(always)]
fn exp_shifted<R: Real>(ys: &mut [R], xs: &[R], k: R, max: R) -> R {
    for (y, &x) in ys.iter_mut().zip(xs) {
        *y = (k * (x - max)).fast_exp();
    }
    lane_sum(ys)
}

impl<'p, R: Real> Tape<'p, R> {
    pub fn new(store: &'p ParamStore<R>) -> Self {
        Tape { store, nodes: Vec::with_capacity(512) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<R> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    /// Leaves are constants; nothing upstream of them needs a gradient.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Array2<R>, op: Op<R>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<R>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        self.push(y, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let y = self.value(a) + self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: R) -> Var {
        let y = self.value(a) * k;
        self.push(y, Op::Scale(a, k))
    }

    pub fn mul_const(&mut self, a: Var, mask: Array2<R>) -> Var {
        let y = self.value(a) * &mask;
        self.push(y, Op::MulConst(a, mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(R::zero()));
        self.push(y, Op::Relu(a))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (k, c) = (R::c(GELU_K), R::c(GELU_A));
        let half = R::c(0.5);
        let xv = self.value(a).as_standard_layout();
        let xs = xv.as_slice().expect("contiguous");
        let mut tanh_v = Array2::zeros(xv.raw_dim());
        let mut y = Array2::zeros(xv.raw_dim());
        let ts = tanh_v.as_slice_mut().expect("contiguous");
        let two = R::one() + R::one();
        for (t, &x) in ts.iter_mut().zip(xs) {
            *t = (two * k * (x + c * x * x * x)).fast_exp();
        }
        for t in ts.iter_mut() {
            *t = R::one() - two / (*t + R::one());
        }
        for ((y, &t), &x) in y.as_slice_mut().expect("contiguous").iter_mut().zip(ts.iter()).zip(xs) {
            *y = half * x * (R::one() + t);
        }
        let tanh = tanh_v;
        self.push(y, Op::Gelu { x: a, tanh })
    }

    /// Row-wise softmax of `k · a`. With `causal`, entry `(i, j)` for `j > i`
    /// gets probability zero.
    pub fn softmax(&mut self, a: Var, k: R, causal: bool) -> Var {
        let xv = self.value(a);
        let (rows, cols) = xv.dim();
        let mut y = Array2::zeros((rows, cols));
        for (i, (xrow, mut yrow)) in xv.rows().into_iter().zip(y.rows_mut()).enumerate() {
            let visible = if causal { (i + 1).min(cols) } else { cols };
            let xs = xrow.as_slice().expect("contiguous");
            let ys = &mut yrow.as_slice_mut().expect("contiguous")[..visible];
            let max = lane_max(&xs[..visible]);
            let sum = exp_shifted(ys, &xs[..visible], k, max);
            let inv = R::one() / sum;
            ys.iter_mut().for_each(|y| *y *= inv);
        }
        self.push(y, Op::Softmax { x: a, k, causal })
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = R::c(xv.ncols() as f64);
        let eps = R::c(LN_EPS);
        let mut xhat = xv.as_standard_layout().into_owned();
        let mut rstd = Array1::zeros(xv.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let row = row.as_slice_mut().expect("contiguous");
            let mean = lane_sum(row) / n;
            row.iter_mut().for_each(|v| *v -= mean);
            let var = lane_dot(row, row) / n;
            *r = R::one() / (var + eps).sqrt();
            let rs = *r;
            row.iter_mut().for_each(|v| *v *= rs);
        }
        let y = &xhat * self.value(gamma) + self.value(beta);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Unfolds `size` consecutive rows into one row (im2col for a 1-D
    /// convolution over the row axis). `pad` zero rows are implied on both
    /// ends, so the output has `L + 2·pad − size + 1` rows.
    pub fn window(&mut self, x: Var, size: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (l, d) = xv.dim();
        let out_len = (l + 2 * pad + 1).saturating_sub(size);
        let mut y = Array2::zeros((out_len, size * d));
        for t in 0..out_len {
            for k in 0..size {
                let src = t + k;
                if src >= pad && src - pad < l {
                    y.slice_mut(s![t, k * d..(k + 1) * d]).assign(&xv.row(src - pad));
                }
            }
        }
        self.push(y, Op::Window { x, size, pad })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<R>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(y, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let y = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(y, Op::Slice { x, start })
    }

    /// Mean squared error against a constant target, as a `[1, 1]` node.
    pub fn mse(&mut self, pred: Var, target: Array2<R>) -> Var {
        let p = self.value(pred);
        let n = R::c(p.len() as f64);
        let sum = Zip::from(p).and(&target).fold(R::zero(), |acc, &a, &b| acc + (a - b) * (a - b));
        self.push(Array2::from_elem((1, 1), sum / n), Op::Mse { pred, target })
    }

    /// Gradients of the scalar node `loss` with respect to every parameter of
    /// the store, zero for parameters the pass did not touch.
    pub fn backward(&self, loss: Var) -> Vec<Array2<R>> {
        let mut param_grads = self.store.zeros_like();
        self.backward_into(loss, R::one(), &mut param_grads);
        param_grads
    }

    /// Adds `weight · ∂loss/∂θ` into `param_grads`.
    pub fn backward_into(&self, loss: Var, weight: R, param_grads: &mut [Array2<R>]) {
        let mut grads: Vec<Option<Array2<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem(self.value(loss).raw_dim(), weight));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, g: Array2<R>| match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => param_grads[id.0] += &gy,
                Op::MatMul(a, b) => {
                    if self.needs_grad(*a) {
                        acc(*a, gy.dot(&self.value(*b).t()));
                    }
                    if self.needs_grad(*b) {
                        acc(*b, self.value(*a).t().dot(&gy));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs_grad(*a) {
                        acc(*a, gy.dot(self.value(*b)));
                    }
                    if self.needs_grad(*b) {
                        acc(*b, gy.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*b, gy.clone());
                    acc(*a, gy);
                }
                Op::AddRow(a, row) => {
                    acc(*row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, gy);
                }
                Op::Mul(a, b) => {
                    acc(*a, &gy * self.value(*b));
                    acc(*b, &gy * self.value(*a));
                }
                Op::Scale(a, k) => acc(*a, gy * *k),
                Op::MulConst(a, mask) => acc(*a, gy * mask),
                Op::Relu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        *g = if x > R::zero() { *g } else { R::zero() };
                    });
                    acc(*a, g);
                }
                Op::Gelu { x: a, tanh } => {
                    let (k, c) = (R::c(GELU_K), R::c(GELU_A));
                    let (half, three) = (R::c(0.5), R::c(3.0));
                    let mut g = gy;
                    Zip::from(&mut g).and(self.value(*a)).and(tanh).for_each(|g, &x, &t| {
                        let d = half * (R::one() + t)
                            + half * x * (R::one() - t * t) * k * (R::one() + three * c * x * x);
                        *g *= d;
                    });
                    acc(*a, g);
                }
                Op::Softmax { x: a, k, causal } => {
                    let y = node.value.as_ref().expect("owned");
                    let mut g = if gy.is_standard_layout() { gy } else { gy.as_standard_layout().into_owned() };
                    let cols = y.ncols();
                    for (i, (mut grow, yrow)) in g.rows_mut().into_iter().zip(y.rows()).enumerate() {
                        let visible = if *causal { (i + 1).min(cols) } else { cols };
                        let gs = grow.as_slice_mut().expect("contiguous");
                        let ys = &yrow.as_slice().expect("contiguous")[..visible];
                        let dot = lane_dot(&gs[..visible], ys);
                        for (g, &y) in gs[..visible].iter_mut().zip(ys) {
                            *g = *k * y * (*g - dot);
                        }
                        gs[visible..].iter_mut().for_each(|g| *g = R::zero());
                    }
                    acc(*a, g);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    acc(*beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gamma, (&gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let mut gx = (gy * self.value(*gamma)).as_standard_layout().into_owned();
                    let n = R::c(gx.ncols() as f64);
                    for ((mut row, xh), &r) in gx.rows_mut().into_iter().zip(xhat.rows()).zip(rstd) {
                        let row = row.as_slice_mut().expect("contiguous");
                        let xh = xh.as_slice().expect("contiguous");
                        let mean_g = lane_sum(row) / n;
                        let mean_gx = lane_dot(row, xh) / n;
                        for (g, &h) in row.iter_mut().zip(xh) {
                            *g = r * (*g - mean_g - h * mean_gx);
                        }
                    }
                    acc(*x, gx);
                }
                Op::Window { x, size, pad } => {
                    let (l, d) = self.value(*x).dim();
                    let mut gx = Array2::zeros((l, d));
                    for t in 0..gy.nrows() {
                        for k in 0..*size {
                            let src = t + k;
                            if src >= *pad && src - pad < l {
                                let mut dst = gx.row_mut(src - pad);
                                dst += &gy.slice(s![t, k * d..(k + 1) * d]);
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, gy.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    acc(*x, gx);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let k = gy[(0, 0)] * R::c(2.0 / p.len() as f64);
                    let mut g = p - target;
                    g.mapv_inplace(|v| v * k);
                    acc(*pred, g);
                }
            }
        }
    }
}
