//! A small reverse-mode automatic differentiation core over dense `f64`
//! tensors of rank 1 or 2.
//!
//! A [`Tape`] records every primitive as it is evaluated. Parameters live in
//! a [`ParamRegistry`] that the tape borrows read-only, so any number of
//! tapes can run against one parameter snapshot at the same time. Calling
//! [`Tape::backward`] yields [`Gradients`]; the caller folds them into the
//! registry with [`ParamRegistry::accumulate`].
//!
//! The only broadcast supported is adding a vector to every row of a matrix.

pub mod gradcheck;
mod lstm;
mod params;

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

pub use lstm::{lstm_cell, LstmWeights};
pub use params::{read_checkpoint, write_checkpoint, Checkpoint, ParamGrads, ParamId, ParamRegistry};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("embedding id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::Shape {
        op,
        shapes: format!("{shapes:?}"),
    }
}

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != values.len() {
            return Err(shape_err("tensor", &[&shape, &[values.len()]]));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Embedding(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    Pick(Var, usize),
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
}

/// Records primitive operations for one forward pass.
pub struct Tape<'p> {
    params: Option<&'p ParamRegistry>,
    nodes: Vec<Node<'p>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of a plain slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Log-softmax of a plain slice.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

impl<'p> Tape<'p> {
    /// A tape with no parameter registry; only leaves can be created.
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamRegistry) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element of `v`; intended for scalars.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.values.clone(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape, t.values, Op::Leaf))
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Var {
        self.push(vec![values.len()], values, Op::Leaf)
    }

    /// Node for a registry parameter; repeated calls return the same node so
    /// all uses accumulate into one gradient buffer.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let registry = self.params.expect("tape created without a parameter registry");
        let t = registry.tensor(id);
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: Cow::Borrowed(&t.values),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let registry = self.params.ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let id = registry.id(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.param(id))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect());
        self.push(shape, value, op)
    }

    /// `[m,k]·[k,n] -> [m,n]` or `[m,k]·[k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (av, bv) = (self.value(a), self.value(b));
        match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                            *o += x * y;
                        }
                    }
                }
                Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
            }
            (&[m, k], &[k2]) if k == k2 => {
                let out = (0..m)
                    .map(|i| av[i * k..(i + 1) * k].iter().zip(bv).map(|(x, y)| x * y).sum())
                    .collect();
                Ok(self.push(vec![m], out, Op::MatMul(a, b)))
            }
            _ => Err(shape_err("matmul", &[&sa, &sb])),
        }
    }

    /// Elementwise sum of equal shapes, or a `[n]` bias added to each row of
    /// an `[m,n]` matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
            return Ok(self.push(sa, out, Op::Add(a, b)));
        }
        if let (&[m, n], &[n2]) = (sa.as_slice(), sb.as_slice()) {
            if n == n2 {
                let (av, bv) = (self.value(a), self.value(b));
                let out = (0..m * n).map(|i| av[i] + bv[i % n]).collect();
                return Ok(self.push(sa, out, Op::AddRow(a, b)));
            }
        }
        Err(shape_err("add", &[&sa, &sb]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", &[self.shape(s), self.shape(x)]));
        }
        let c = self.scalar(s);
        Ok(self.unary(x, Op::ScaleBy(s, x), |v| c * v))
    }

    /// Concatenation along the last axis. Inputs must share rank and leading
    /// extent.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
        let fail = || {
            let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
            shape_err("concat", &refs)
        };
        let first = shapes.first().ok_or_else(fail)?;
        let rank = first.len();
        if shapes.iter().any(|s| s.len() != rank || s[..rank - 1] != first[..rank - 1]) {
            return Err(fail());
        }
        let rows = if rank == 2 { first[0] } else { 1 };
        let widths: Vec<usize> = shapes.iter().map(|s| s[rank - 1]).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
        Ok(self.push(shape, out, Op::Concat(parts.to_vec())))
    }

    /// `x[start..start + len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(shape_err("slice", &[s, &[start, len]]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice(x, start)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", &[self.shape(x), &shape]));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    fn vector_only(&self, op: &'static str, x: Var) -> Result<()> {
        if self.shape(x).len() != 1 {
            return Err(shape_err(op, &[self.shape(x)]));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.vector_only("softmax", x)?;
        let out = softmax(self.value(x));
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.vector_only("log_softmax", x)?;
        let out = log_softmax(self.value(x));
        Ok(self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x)))
    }

    /// Gathers rows of a `[rows, d]` table into an `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        let (rows, d) = match s.as_slice() {
            &[r, d] if !ids.is_empty() => (r, d),
            _ => return Err(shape_err("embedding_lookup", &[&s, &[ids.len()]])),
        };
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IdOutOfRange { id, rows });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], out, Op::Embedding(table, ids.to_vec())))
    }

    /// A single row of a table as a `[d]` vector.
    pub fn row(&mut self, table: Var, id: usize) -> Result<Var> {
        let m = self.embedding(table, &[id])?;
        let d = self.shape(m)[1];
        self.reshape(m, vec![d])
    }

    /// Mean over rows for a matrix (`[m,n] -> [n]`), over all entries for a
    /// vector (`[n] -> [1]`).
    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let v = self.value(x);
        let (shape, out) = match s.as_slice() {
            &[m, n] => {
                let mut acc = vec![0.0; n];
                for r in 0..m {
                    for (a, &y) in acc.iter_mut().zip(&v[r * n..(r + 1) * n]) {
                        *a += y;
                    }
                }
                (vec![n], acc.into_iter().map(|a| a / m as f64).collect())
            }
            _ => (vec![1], vec![v.iter().sum::<f64>() / v.len() as f64]),
        };
        self.push(shape, out, Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        self.push(vec![1], vec![total], Op::Sum(x))
    }

    /// Element `i` of a vector as a scalar.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        self.vector_only("pick", x)?;
        if i >= self.value(x).len() {
            return Err(shape_err("pick", &[self.shape(x), &[i]]));
        }
        let v = self.value(x)[i];
        Ok(self.push(vec![1], vec![v], Op::Pick(x, i)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = &self.nodes[loss.0].shape;
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (sa[0], sa[1]);
                    if sb.len() == 2 {
                        let n = sb[1];
                        let ga = acc(&mut grads, *a, m * k);
                        for r in 0..m {
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[r * k + p] += g[r * n..(r + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                        let gb = acc(&mut grads, *b, k * n);
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, &gy) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * gy;
                                }
                            }
                        }
                    } else {
                        let ga = acc(&mut grads, *a, m * k);
                        for r in 0..m {
                            for p in 0..k {
                                ga[r * k + p] += g[r] * bv[p];
                            }
                        }
                        let gb = acc(&mut grads, *b, k);
                        for r in 0..m {
                            for p in 0..k {
                                gb[p] += av[r * k + p] * g[r];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let gv = acc(&mut grads, *v, g.len());
                        gv.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                    }
                }
                Op::AddRow(a, b) => {
                    let n = self.shape(*b)[0];
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                    let gb = acc(&mut grads, *b, n);
                    for (i, x) in g.iter().enumerate() {
                        gb[i % n] += x;
                    }
                }
                Op::Sub(a, b) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(o, x)| *o -= x);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, x), y) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += x * y;
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((o, x), y) in gb.iter_mut().zip(&g).zip(av) {
                        *o += x * y;
                    }
                }
                Op::Scale(x, c) => {
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(o, v)| *o += c * v);
                }
                Op::ScaleBy(s, x) => {
                    let c = self.scalar(*s);
                    let xv = self.value(*x);
                    let ds: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *s, 1)[0] += ds;
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(o, v)| *o += c * v);
                }
                Op::Concat(parts) => {
                    let rank = node.shape.len();
                    let rows = if rank == 2 { node.shape[0] } else { 1 };
                    let total = node.shape[rank - 1];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p)[rank - 1];
                        let gp = acc(&mut grads, *p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for (o, v) in gx[*start..*start + g.len()].iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::Reshape(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *o += v;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), yi) in gx.iter_mut().zip(&g).zip(y.iter()) {
                        *o += v * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), yi) in gx.iter_mut().zip(&g).zip(y.iter()) {
                        *o += v * yi * (1.0 - yi);
                    }
                }
                Op::Exp(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), yi) in gx.iter_mut().zip(&g).zip(y.iter()) {
                        *o += v * yi;
                    }
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *o += v / xi;
                    }
                }
                Op::Softmax(x) => {
                    let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), yi) in gx.iter_mut().zip(&g).zip(y.iter()) {
                        *o += yi * (v - dot);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, v), yi) in gx.iter_mut().zip(&g).zip(y.iter()) {
                        *o += v - yi.exp() * total;
                    }
                }
                Op::Embedding(table, ids) => {
                    let s = self.shape(*table);
                    let (rows, d) = (s[0], s[1]);
                    let gt = acc(&mut grads, *table, rows * d);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                }
                Op::Mean(x) => {
                    let s = self.shape(*x).to_vec();
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    if let &[m, cols] = s.as_slice() {
                        for r in 0..m {
                            for c in 0..cols {
                                gx[r * cols + c] += g[c] / m as f64;
                            }
                        }
                    } else {
                        gx.iter_mut().for_each(|o| *o += g[0] / n as f64);
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Pick(x, idx) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n)[*idx] += g[0];
                }
            }
            grads[i] = Some(g);
        }

        let params = self.param_nodes.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { nodes: grads, params })
    }
}

/// Result of a reverse pass: gradients of every reached node.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of registry parameters, dense and indexed by [`ParamId`].
    pub fn param_grads(&self, registry: &ParamRegistry) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(registry);
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out.add_slice(id, g, 1.0);
            }
        }
        out
    }
}

/// Draws an index from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() {
        return Err(TensorError::InvalidDistribution("empty".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(TensorError::InvalidDistribution(format!("{probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(TensorError::InvalidDistribution(format!("sums to {total}")));
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}
