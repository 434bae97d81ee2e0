//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and the [`Var`] handles of its inputs, so the
//! recorded order is already a topological order. [`Tape::backward`] walks the
//! nodes once, last to first, accumulating adjoints into their inputs.
//!
//! Leaves are either parameters (which receive gradients) or constants (which
//! do not). Nodes whose inputs are all constants are marked as not requiring a
//! gradient and are skipped during the reverse sweep.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{contract_err, shape_err, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `w · x (+ b)`, `w` is `out × n`.
    Linear { x: Var, w: Var, b: Option<Var> },
    /// `a · bᵀ`, `a` is `r × n`, `b` is `c × n`.
    MatMulT { a: Var, b: Var },
    /// Adds a length-`c` vector to every row of an `r × c` matrix.
    AddRow { a: Var, row: Var },
    /// `Σ_i w_i x_i` over the rows `x_i` of an `m × k` matrix.
    WeightedRows { weights: Var, x: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Sum(Var),
    /// Summed binary cross-entropy of logits against a constant 0/1 target.
    BceLogits { logits: Var, target: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    dims: Vec<Vec<usize>>,
    ops_replayed: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; all zeros when `var` does not reach the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.dims[var.0]),
        }
    }

    /// `None` when the loss does not depend on `var`.
    pub fn get_opt(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Number of recorded operations whose adjoint rule ran.
    pub fn ops_replayed(&self) -> usize {
        self.ops_replayed
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite() || !value.data().iter().any(|v| v.is_nan()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (out, n) = self.value(w).shape2()?;
        let xv = self.value(x).data();
        if xv.len() != n {
            return shape_err(format!("linear: weight is {out}x{n}, input has {}", xv.len()));
        }
        let wv = self.value(w).data();
        let mut y: Vec<f64> = wv.chunks_exact(n).map(|row| dot(row, xv)).collect();
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != out {
                return shape_err(format!("linear: bias has {} entries, expected {out}", bv.len()));
            }
            for (yi, bi) in y.iter_mut().zip(bv) {
                *yi += bi;
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::vector(y), Op::Linear { x, w, b }, rg))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, n) = self.value(a).shape2()?;
        let (c, n2) = self.value(b).shape2()?;
        if n != n2 {
            return shape_err(format!("matmul_t: {r}x{n} against {c}x{n2}"));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for arow in av.chunks_exact(n) {
            for brow in bv.chunks_exact(n) {
                out.push(dot(arow, brow));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::MatMulT { a, b }, rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape2()?;
        let rv = self.value(row).data();
        if rv.len() != c {
            return shape_err(format!("add_row: {r}x{c} matrix with row of {}", rv.len()));
        }
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (o, v) in chunk.iter_mut().zip(rv) {
                *o += v;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow { a, row }, rg))
    }

    pub fn weighted_rows(&mut self, weights: Var, x: Var) -> Result<Var> {
        let (m, k) = self.value(x).shape2()?;
        let wv = self.value(weights).data();
        if wv.len() != m {
            return shape_err(format!("weighted_rows: {} weights for {m} rows", wv.len()));
        }
        let mut out = vec![0.0; k];
        for (w, row) in wv.iter().zip(self.value(x).data().chunks_exact(k)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        let rg = self.rg(&[weights, x]);
        Ok(self.push(Tensor::vector(out), Op::WeightedRows { weights, x }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return shape_err(format!("elementwise op on lengths {} and {}", av.len(), bv.len()));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.dims().to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(av.dims().to_vec(), out).expect("same dims");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return shape_err("softmax of an empty tensor");
        }
        let t = Tensor::vector(math::softmax(av.data()));
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Flattens and joins the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of nothing");
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), rg))
    }

    /// Entries `start..start + len` of the flattened input.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a).data();
        if len == 0 || start + len > av.len() {
            return shape_err(format!("slice {start}..{} of {}", start + len, av.len()));
        }
        let t = Tensor::vector(av[start..start + len].to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Slice { a, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `-Σ_i [y_i ln σ(p_i) + (1 - y_i) ln(1 - σ(p_i))]`, evaluated as `softplus(p) - y p`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(logits).data();
        if pv.len() != target.len() {
            return shape_err(format!(
                "bce: {} logits against {} targets",
                pv.len(),
                target.len()
            ));
        }
        if target.iter().any(|&y| y != 0.0 && y != 1.0) {
            return contract_err("bce targets must be 0 or 1");
        }
        let loss: f64 = pv
            .iter()
            .zip(target)
            .map(|(&p, &y)| math::bce_with_logit(p, y))
            .sum();
        let rg = self.rg(&[logits]);
        let op = Op::BceLogits {
            logits,
            target: target.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut ops_replayed = 0;

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            ops_replayed += 1;
            self.replay(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|d| Tensor::new(node.value.dims().to_vec(), d).expect("grad dims"))
            })
            .collect();
        Ok(Gradients {
            grads,
            dims,
            ops_replayed,
        })
    }

    fn replay(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let n = val(*x).len();
                let (xv, wv) = (val(*x), val(*w));
                acc(*x, &mut |gx| {
                    for (gi, row) in g.iter().zip(wv.chunks_exact(n)) {
                        axpy(*gi, row, gx);
                    }
                });
                acc(*w, &mut |gw| {
                    for (gi, grow) in g.iter().zip(gw.chunks_exact_mut(n)) {
                        axpy(*gi, xv, grow);
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |gb| axpy(1.0, g, gb));
                }
            }
            Op::MatMulT { a, b } => {
                let ad = &self.nodes[a.0].value;
                let bd = &self.nodes[b.0].value;
                let (_, n) = ad.shape2().expect("matrix");
                let (c, _) = bd.shape2().expect("matrix");
                acc(*a, &mut |ga| {
                    for (grow, garow) in g.chunks_exact(c).zip(ga.chunks_exact_mut(n)) {
                        for (gij, brow) in grow.iter().zip(bd.data().chunks_exact(n)) {
                            axpy(*gij, brow, garow);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (grow, arow) in g.chunks_exact(c).zip(ad.data().chunks_exact(n)) {
                        for (gij, gbrow) in grow.iter().zip(gb.chunks_exact_mut(n)) {
                            axpy(*gij, arow, gbrow);
                        }
                    }
                });
            }
            Op::AddRow { a, row } => {
                let c = val(*row).len();
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks_exact(c) {
                        axpy(1.0, chunk, gr);
                    }
                });
            }
            Op::WeightedRows { weights, x } => {
                let k = g.len();
                let (wv, xv) = (val(*weights), val(*x));
                acc(*weights, &mut |gw| {
                    for (gwi, row) in gw.iter_mut().zip(xv.chunks_exact(k)) {
                        *gwi += dot(row, g);
                    }
                });
                acc(*x, &mut |gx| {
                    for (wi, grow) in wv.iter().zip(gx.chunks_exact_mut(k)) {
                        axpy(*wi, g, grow);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*b, &mut |gb| axpy(1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let gy = dot(g, y);
                acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += yi * (gi - gy);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(*p, &mut |gp| axpy(1.0, &g[offset..offset + len], gp));
                    offset += len;
                }
            }
            Op::Slice { a, start } => {
                acc(*a, &mut |ga| axpy(1.0, g, &mut ga[*start..*start + g.len()]));
            }
            Op::Sum(a) => {
                acc(*a, &mut |ga| {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::BceLogits { logits, target } => {
                let pv = val(*logits);
                acc(*logits, &mut |gp| {
                    for ((o, p), y) in gp.iter_mut().zip(pv).zip(target) {
                        *o += g[0] * (math::sigmoid(*p) - y);
                    }
                });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `W x + b` evaluated on a throwaway tape.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (x, w, b) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.linear(x, w, Some(b))?;
    Ok(tape.value(y).clone())
}

pub fn softmax(e: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let e = tape.constant(e.clone());
    let y = tape.softmax(e)?;
    Ok(tape.value(y).clone())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| math::sigmoid(v)).collect();
    Tensor::new(x.dims().to_vec(), data).expect("same dims")
}

pub fn bce_loss(logits: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(logits.clone());
    let l = tape.bce_with_logits(p, target.data())?;
    Ok(tape.value(l).data()[0])
}
