//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a [`ParamStore`] and appear once per graph no matter how often
//! they are used. [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar node with respect to every node that needs one.
//!
//! Shapes are checked with assertions: the public pipeline functions validate
//! their inputs before building a graph, so a failed assertion here is a bug.

use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2, Axis};

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::rotmath::{rodrigues, rodrigues_jacobian};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Static tree description captured by the kinematics node.
#[derive(Debug, Clone)]
pub struct Chain {
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vector3<f64>>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    LeakyRelu(Var, f64),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        src: Rc<Vec<usize>>,
        kernel: usize,
        cols: Tensor,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    GatherCols(Var, Rc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    NodeLinear {
        x: Var,
        w: Var,
        b: Var,
    },
    ScatterSym(Var, Rc<Vec<(usize, usize)>>),
    Rodrigues(Var),
    Kinematics(Var, Rc<Chain>),
    RowNorm(Var),
    GradScale(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Padding rule for temporal convolutions. Both variants replicate the
/// boundary frame rather than inserting zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPadding {
    /// Centered kernel; output frame `t` sees `t - k/2 ..= t + k/2`.
    Same,
    /// Output frame `t` sees only frames `t - k + 1 ..= t`.
    Causal,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of a backward pass.
pub struct Grads {
    nodes: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.dim(), (1, 1), "scalar() on non-scalar node");
        t[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (used by gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param_id(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    /// Parameter by name.
    ///
    /// # Panics
    /// If the store has no parameter of that name.
    pub fn param(&mut self, name: &str) -> Var {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not in store"));
        self.param_id(id)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape");
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    /// `x + b` with the `1 × c` row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (_, c) = self.shape(x);
        assert_eq!(self.shape(b), (1, c), "add_row shape");
        let v = self.value(x) + self.value(b);
        let ng = self.ng(x) || self.ng(b);
        self.push(v, Op::AddRow(x, b), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).0, "matmul inner dim");
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(v, Op::Clamp(a, lo, hi), ng)
    }

    /// `exp(clamp(a, -bound, bound))`.
    pub fn exp_clamped(&mut self, a: Var, bound: f64) -> Var {
        let c = self.clamp(a, -bound, bound);
        self.exp(c)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        let ng = self.ng(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Array2::from_elem((1, 1), t.sum() / t.len() as f64);
        let ng = self.ng(a);
        self.push(v, Op::Mean(a), ng)
    }

    /// Temporal convolution over the rows of `x` (`T × c_in`).
    ///
    /// `w` is `(kernel · c_in) × c_out` with tap-major rows, `b` is `1 × c_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, padding: ConvPadding) -> Var {
        let (t, cin) = self.shape(x);
        let (wr, cout) = self.shape(w);
        assert_eq!(wr, kernel * cin, "conv1d weight rows");
        assert_eq!(self.shape(b), (1, cout), "conv1d bias");
        let pad = match padding {
            ConvPadding::Same => {
                assert!(kernel % 2 == 1, "same padding needs an odd kernel");
                kernel / 2
            }
            ConvPadding::Causal => kernel - 1,
        };
        let src: Vec<usize> = (0..t)
            .flat_map(|row| {
                (0..kernel).map(move |k| (row + k).saturating_sub(pad).min(t - 1))
            })
            .collect();
        let xv = self.value(x);
        let mut cols = Array2::zeros((t, kernel * cin));
        for row in 0..t {
            for k in 0..kernel {
                let from = src[row * kernel + k];
                cols.slice_mut(s![row, k * cin..(k + 1) * cin])
                    .assign(&xv.row(from));
            }
        }
        let v = cols.dot(self.value(w)) + self.value(b);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            v,
            Op::Conv1d {
                x,
                w,
                b,
                src: Rc::new(src),
                kernel,
                cols,
            },
            ng,
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(a);
        let v = t.select(Axis(0), &idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    pub fn gather_cols(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(a);
        let v = t.select(Axis(1), &idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherCols(a, idx), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.gather_rows(a, Rc::new(vec![i]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows widths");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols heights");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row-major flatten into a `1 × (r·c)` row.
    pub fn flatten(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len();
        let v = Array2::from_shape_vec((1, n), t.iter().copied().collect()).expect("flatten");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// Row-wise affine maps: `out[i] = x[i] · W_i + b[i]`, where `W_i` is the
    /// `i`-th `d × o` block of the `(n·d) × o` weight.
    pub fn node_linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, d) = self.shape(x);
        let (wr, o) = self.shape(w);
        assert_eq!(wr, n * d, "node_linear weight rows");
        assert_eq!(self.shape(b), (n, o), "node_linear bias");
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = self.value(b).clone();
        for i in 0..n {
            let wi = wv.slice(s![i * d..(i + 1) * d, ..]);
            let yi = xv.row(i).dot(&wi);
            let mut row = out.row_mut(i);
            row += &yi;
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::NodeLinear { x, w, b }, ng)
    }

    /// Places the entries of a `1 × m` row into an `n × n` symmetric matrix:
    /// entry `k` goes to `(i, j)` and `(j, i)` for `slots[k] = (i, j)`.
    pub fn scatter_sym(&mut self, a: Var, n: usize, slots: Rc<Vec<(usize, usize)>>) -> Var {
        assert_eq!(self.shape(a), (1, slots.len()), "scatter_sym length");
        let src = self.value(a);
        let mut v = Array2::zeros((n, n));
        for (k, &(i, j)) in slots.iter().enumerate() {
            v[(i, j)] = src[(0, k)];
            v[(j, i)] = src[(0, k)];
        }
        let ng = self.ng(a);
        self.push(v, Op::ScatterSym(a, slots), ng)
    }

    /// Axis-angle rows (`n × 3`) to row-major rotation matrices (`n × 9`).
    pub fn rodrigues(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.ncols(), 3, "rodrigues expects n x 3");
        let mut v = Array2::zeros((t.nrows(), 9));
        for (i, r) in t.rows().into_iter().enumerate() {
            let m = rodrigues(&Vector3::new(r[0], r[1], r[2]));
            for a in 0..3 {
                for b in 0..3 {
                    v[(i, 3 * a + b)] = m[(a, b)];
                }
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Rodrigues(a), ng)
    }

    /// Forward kinematics from local rotations (`n × 9`) to joint positions
    /// (`n × 3`) with the root at the origin.
    pub fn kinematics(&mut self, local: Var, chain: Rc<Chain>) -> Var {
        let lv = self.value(local);
        let n = chain.parents.len();
        assert_eq!(lv.dim(), (n, 9), "kinematics input");
        let (pos, _) = chain_forward(&chain, lv);
        let mut v = Array2::zeros((n, 3));
        for j in 0..n {
            for a in 0..3 {
                v[(j, a)] = pos[j][a];
            }
        }
        let ng = self.ng(local);
        self.push(v, Op::Kinematics(local, chain), ng)
    }

    /// Euclidean norm of every row, as an `r × 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Array2::from_shape_vec(
            (t.nrows(), 1),
            t.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect(),
        )
        .expect("row_norm");
        let ng = self.ng(a);
        self.push(v, Op::RowNorm(a), ng)
    }

    /// Identity in the forward pass, scales the gradient by `k` on the way
    /// back. Only useful to build deliberately wrong gradients for testing the
    /// gradient checker.
    pub fn grad_scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).clone();
        let ng = self.ng(a);
        self.push(v, Op::GradScale(a, k), ng)
    }

    /// Reverse pass from scalar node `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { nodes: grads }
    }

    /// Sums a backward pass into per-parameter gradients.
    pub fn param_grads(&self, grads: &Grads, into: &mut ParamGrads) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.nodes[idx]) {
                into.accumulate(*id, g);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g * *k),
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*b) {
                    self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Exp(a) => self.acc(grads, *a, g * &node.value),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                self.acc(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= *slope;
                        }
                    });
                self.acc(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = g * &self.value(*a).mapv(f64::signum);
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(self.shape(*a), g[(0, 0)]);
                self.acc(grads, *a, d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let d = Array2::from_elem(self.shape(*a), g[(0, 0)] / n);
                self.acc(grads, *a, d);
            }
            Op::Conv1d {
                x,
                w,
                b,
                src,
                kernel,
                cols,
            } => {
                if self.ng(*w) {
                    self.acc(grads, *w, cols.t().dot(g));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let (t, cin) = self.shape(*x);
                    let dcols = g.dot(&self.value(*w).t());
                    let mut dx = Array2::zeros((t, cin));
                    for row in 0..t {
                        for k in 0..*kernel {
                            let to = src[row * kernel + k];
                            let mut dst = dx.row_mut(to);
                            dst += &dcols.slice(s![row, k * cin..(k + 1) * cin]);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(k);
                }
                self.acc(grads, *a, d);
            }
            Op::GatherCols(a, idx) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &i) in idx.iter().enumerate() {
                    let mut col = d.column_mut(i);
                    col += &g.column(k);
                }
                self.acc(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.ng(p) {
                        self.acc(grads, p, g.slice(s![start..start + r, ..]).to_owned());
                    }
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if self.ng(p) {
                        self.acc(grads, p, g.slice(s![.., start..start + c]).to_owned());
                    }
                    start += c;
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                let d = Array2::from_shape_vec(shape, g.iter().copied().collect()).expect("reshape");
                self.acc(grads, *a, d);
            }
            Op::NodeLinear { x, w, b } => {
                let (n, d) = self.shape(*x);
                if self.ng(*b) {
                    self.acc(grads, *b, g.clone());
                }
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.ng(*w) {
                    let o = wv.ncols();
                    let mut dw = Array2::zeros(wv.dim());
                    for i in 0..n {
                        let xi = xv.row(i);
                        let gi = g.row(i);
                        for a in 0..d {
                            let xa = xi[a];
                            if xa != 0.0 {
                                let mut r = dw.row_mut(i * d + a);
                                r.scaled_add(xa, &gi);
                            }
                        }
                        debug_assert_eq!(gi.len(), o);
                    }
                    self.acc(grads, *w, dw);
                }
                if self.ng(*x) {
                    let mut dx = Array2::zeros((n, d));
                    for i in 0..n {
                        let wi = wv.slice(s![i * d..(i + 1) * d, ..]);
                        dx.row_mut(i).assign(&wi.dot(&g.row(i)));
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::ScatterSym(a, slots) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &(i, j)) in slots.iter().enumerate() {
                    d[(0, k)] = if i == j {
                        g[(i, i)]
                    } else {
                        g[(i, j)] + g[(j, i)]
                    };
                }
                self.acc(grads, *a, d);
            }
            Op::Rodrigues(a) => {
                let av = self.value(*a);
                let mut d = Array2::zeros(av.dim());
                for i in 0..av.nrows() {
                    let jac = rodrigues_jacobian(&Vector3::new(av[(i, 0)], av[(i, 1)], av[(i, 2)]));
                    for (c, j) in jac.iter().enumerate() {
                        let mut acc = 0.0;
                        for r in 0..3 {
                            for q in 0..3 {
                                acc += g[(i, 3 * r + q)] * j[(r, q)];
                            }
                        }
                        d[(i, c)] = acc;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::Kinematics(local, chain) => {
                let lv = self.value(*local);
                let (_, glob) = chain_forward(chain, lv);
                let n = chain.parents.len();
                let mut dpos: Vec<Vector3<f64>> =
                    (0..n).map(|j| Vector3::new(g[(j, 0)], g[(j, 1)], g[(j, 2)])).collect();
                let mut dglob = vec![Matrix3::<f64>::zeros(); n];
                let mut dlocal = vec![Matrix3::<f64>::zeros(); n];
                for j in (0..n).rev() {
                    match chain.parents[j] {
                        None => dlocal[j] += dglob[j],
                        Some(p) => {
                            let lj = local_matrix(lv, j);
                            let dp = dpos[j];
                            dpos[p] += dp;
                            dglob[p] += dp * chain.offsets[j].transpose();
                            let dg = dglob[j];
                            dglob[p] += dg * lj.transpose();
                            dlocal[j] += glob[p].transpose() * dg;
                        }
                    }
                }
                let mut d = Array2::zeros((n, 9));
                for j in 0..n {
                    for a in 0..3 {
                        for b in 0..3 {
                            d[(j, 3 * a + b)] = dlocal[j][(a, b)];
                        }
                    }
                }
                self.acc(grads, *local, d);
            }
            Op::RowNorm(a) => {
                let av = self.value(*a);
                let mut d = Array2::zeros(av.dim());
                for i in 0..av.nrows() {
                    let nrm = node.value[(i, 0)];
                    if nrm > 0.0 {
                        let mut r = d.row_mut(i);
                        r.scaled_add(g[(i, 0)] / nrm, &av.row(i));
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::GradScale(a, k) => self.acc(grads, *a, g * *k),
        }
    }
}

fn local_matrix(t: &Tensor, j: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|a, b| t[(j, 3 * a + b)])
}

fn chain_forward(chain: &Chain, local: &Tensor) -> (Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    let n = chain.parents.len();
    let mut pos = vec![Vector3::zeros(); n];
    let mut glob = vec![Matrix3::identity(); n];
    for j in 0..n {
        let l = local_matrix(local, j);
        match chain.parents[j] {
            None => glob[j] = l,
            Some(p) => {
                glob[j] = glob[p] * l;
                pos[j] = pos[p] + glob[p] * chain.offsets[j];
            }
        }
    }
    (pos, glob)
}
