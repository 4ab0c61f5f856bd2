//! Reverse-mode gradient tape over a small, fixed set of vector operations.
//!
//! Parameters are borrowed onto the tape by slot number; [`Tape::backward`]
//! returns the adjoint of every registered slot. Forward values are computed
//! with the same kernels the plain (tape-free) forward passes use, so a value
//! read off the tape is bit-identical to the plain evaluation of the same
//! expression.

use std::borrow::Cow;

use super::tensor::{gaussian_log_density, log_sum_exp, matvec, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param { slot: usize },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Sum(Var),
    LogSumExp(Var),
    GaussLogPdf { x: Var, mu: Var, log_sigma: Var },
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// Per-slot parameter gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: usize) -> Option<&[f64]> {
        self.slots
            .get(slot)
            .filter(|g| !g.is_empty())
            .map(Vec::as_slice)
    }

    fn slot_mut(&mut self, slot: usize, len: usize) -> &mut Vec<f64> {
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, Vec::new);
        }
        let g = &mut self.slots[slot];
        if g.is_empty() {
            g.resize(len, 0.0);
        }
        g
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (slot, g) in other.slots.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let dst = self.slot_mut(slot, g.len());
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.slots {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Gradients for slots `0..count`, zero-filled where a slot was unused,
    /// shaped like `params`.
    pub fn dense_for(&self, params: &[&Tensor]) -> Vec<Vec<f64>> {
        params
            .iter()
            .enumerate()
            .map(|(slot, p)| match self.get(slot) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.len()],
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            cols: 1,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Const, false)
    }

    pub fn param(&mut self, tensor: &'a Tensor, slot: usize) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(tensor.as_slice()),
            cols: tensor.cols(),
            op: Op::Param { slot },
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let wn = &self.nodes[w.0];
        let cols = wn.cols;
        let rows = wn.value.len() / cols.max(1);
        assert_eq!(self.nodes[x.0].value.len(), cols, "matvec inner dimension");
        let mut out = vec![0.0; rows];
        matvec(&wn.value, rows, cols, &self.nodes[x.0].value, &mut out);
        let ng = self.ng(w) || self.ng(x);
        self.push(out, Op::MatVec { w, x }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise operand lengths");
        let out = va.iter().zip(vb.iter()).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        let ng = self.ng(a);
        self.push(out, Op::Slice { a, start }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let ng = self.ng(a);
        self.push(vec![s], Op::Sum(a), ng)
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp(&self.nodes[a.0].value);
        let ng = self.ng(a);
        self.push(vec![s], Op::LogSumExp(a), ng)
    }

    /// Elementwise Gaussian log density with `sigma = exp(log_sigma)`.
    pub fn gauss_log_pdf(&mut self, x: Var, mu: Var, log_sigma: Var) -> Var {
        let (vx, vm, vs) = (
            &self.nodes[x.0].value,
            &self.nodes[mu.0].value,
            &self.nodes[log_sigma.0].value,
        );
        assert!(vx.len() == vm.len() && vm.len() == vs.len(), "gauss_log_pdf operand lengths");
        let out = (0..vx.len())
            .map(|i| gaussian_log_density(vx[i], vm[i], vs[i]))
            .collect();
        let ng = self.ng(x) || self.ng(mu) || self.ng(log_sigma);
        self.push(out, Op::GaussLogPdf { x, mu, log_sigma }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`], accumulating into `out`.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        let node = self.nodes.get(loss.0).ok_or_else(|| {
            Error::Usage(format!(
                "loss variable {} was not recorded on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            ))
        })?;
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got a vector of length {}",
                node.value.len()
            )));
        }

        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];

        fn acc(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let g = &mut adj[v.0];
            if g.is_empty() {
                g.resize(len, 0.0);
            }
            g
        }

        for i in (0..=loss.0).rev() {
            if adj[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Const => {}
                Op::Param { slot } => {
                    let dst = out.slot_mut(*slot, g.len());
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::MatVec { w, x } => {
                    let wn = &self.nodes[w.0];
                    let cols = wn.cols;
                    let xv = &self.nodes[x.0].value;
                    if wn.needs_grad {
                        let gw = acc(&mut adj, *w, wn.value.len());
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            for (d, xv) in row.iter_mut().zip(xv.iter()) {
                                *d += gr * xv;
                            }
                        }
                    }
                    if self.ng(*x) {
                        let gx = acc(&mut adj, *x, cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &wn.value[r * cols..(r + 1) * cols];
                            for (d, w) in gx.iter_mut().zip(row) {
                                *d += gr * w;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if self.ng(v) {
                            let ga = acc(&mut adj, v, g.len());
                            ga.iter_mut().zip(&g).for_each(|(d, s)| *d += sign * s);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if self.ng(v) {
                            let ga = acc(&mut adj, v, g.len());
                            ga.iter_mut().zip(&g).for_each(|(d, s)| *d += sign * s);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.ng(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for k in 0..g.len() {
                            ga[k] += g[k] * vb[k];
                        }
                    }
                    if self.ng(*b) {
                        let gb = acc(&mut adj, *b, g.len());
                        for k in 0..g.len() {
                            gb[k] += g[k] * va[k];
                        }
                    }
                }
                Op::Neg(a) => self.unary_back(&mut adj, *a, &g, |_, _| -1.0),
                Op::Scale(a, c) => {
                    let c = *c;
                    self.unary_back(&mut adj, *a, &g, move |_, _| c)
                }
                Op::AddConst(a) => self.unary_back(&mut adj, *a, &g, |_, _| 1.0),
                Op::Sigmoid(a) => self.unary_back_y(&mut adj, *a, &g, y, |y| y * (1.0 - y)),
                Op::Tanh(a) => self.unary_back_y(&mut adj, *a, &g, y, |y| 1.0 - y * y),
                Op::Softplus(a) => self.unary_back(&mut adj, *a, &g, |x, _| sigmoid(x)),
                Op::Exp(a) => self.unary_back_y(&mut adj, *a, &g, y, |y| y),
                Op::Log(a) => self.unary_back(&mut adj, *a, &g, |x, _| 1.0 / x),
                Op::Square(a) => self.unary_back(&mut adj, *a, &g, |x, _| 2.0 * x),
                Op::OneMinus(a) => self.unary_back(&mut adj, *a, &g, |_, _| -1.0),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.ng(*p) {
                            let gp = acc(&mut adj, *p, len);
                            for k in 0..len {
                                gp[k] += g[offset + k];
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { a, start } => {
                    let len = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, len);
                    for (k, s) in g.iter().enumerate() {
                        ga[start + k] += s;
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, len);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::LogSumExp(a) => {
                    let va = &self.nodes[a.0].value;
                    let total = y[0];
                    let ga = acc(&mut adj, *a, va.len());
                    for (d, v) in ga.iter_mut().zip(va.iter()) {
                        *d += g[0] * (v - total).exp();
                    }
                }
                Op::GaussLogPdf { x, mu, log_sigma } => {
                    let (vx, vm, vs) = (
                        &self.nodes[x.0].value,
                        &self.nodes[mu.0].value,
                        &self.nodes[log_sigma.0].value,
                    );
                    let n = g.len();
                    let mut dx = vec![0.0; n];
                    let mut ds = vec![0.0; n];
                    for k in 0..n {
                        let inv = (-vs[k]).exp();
                        let z = (vx[k] - vm[k]) * inv;
                        dx[k] = -z * inv * g[k];
                        ds[k] = (z * z - 1.0) * g[k];
                    }
                    if self.ng(*x) {
                        let gx = acc(&mut adj, *x, n);
                        gx.iter_mut().zip(&dx).for_each(|(d, s)| *d += s);
                    }
                    if self.ng(*mu) {
                        let gm = acc(&mut adj, *mu, n);
                        gm.iter_mut().zip(&dx).for_each(|(d, s)| *d -= s);
                    }
                    if self.ng(*log_sigma) {
                        let gs = acc(&mut adj, *log_sigma, n);
                        gs.iter_mut().zip(&ds).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        Ok(())
    }

    fn unary_back(&self, adj: &mut [Vec<f64>], a: Var, g: &[f64], d: impl Fn(f64, f64) -> f64) {
        if !self.ng(a) {
            return;
        }
        let va = &self.nodes[a.0].value;
        let ga = &mut adj[a.0];
        if ga.is_empty() {
            ga.resize(va.len(), 0.0);
        }
        for k in 0..g.len() {
            ga[k] += g[k] * d(va[k], g[k]);
        }
    }

    fn unary_back_y(&self, adj: &mut [Vec<f64>], a: Var, g: &[f64], y: &[f64], d: impl Fn(f64) -> f64) {
        if !self.ng(a) {
            return;
        }
        let ga = &mut adj[a.0];
        if ga.is_empty() {
            ga.resize(y.len(), 0.0);
        }
        for k in 0..g.len() {
            ga[k] += g[k] * d(y[k]);
        }
    }
}
