use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    /// `max(x, 0.1x)`
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu { slope: 0.1 };
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Log,
    Neg,
    Sqrt,
    Square,
    Recip,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Affine { x: Var, scale: S },
    Act(Activation, Var),
    Clamp { x: Var, lo: S, hi: S },
    Sum { x: Var, axis: Option<usize>, mean: bool },
    LogSumExp { x: Var, axis: usize },
    Reshape(Var),
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Recording of one forward computation. Nodes are appended in execution
/// order, so replaying them in reverse is a valid topological order.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite<S: Scalar>(op: &str, t: &Tensor<S>) -> Result<()> {
    if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(
            op,
            format!("non-finite value at flat index {pos} of output {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient in [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Which side of its breakpoint every leaky-ReLU and clamp element fell
    /// on, in recording order. Two forward passes with equal patterns lie on
    /// the same smooth piece of the loss.
    pub fn branch_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Act(Activation::LeakyRelu { .. }, a) => {
                    out.extend(self.value(a).data().iter().map(|&x| (x > S::zero()) as u8));
                }
                Op::Clamp { x, lo, hi } => {
                    out.extend(self.value(x).data().iter().map(|&v| {
                        if v < lo {
                            0
                        } else if v > hi {
                            2
                        } else {
                            1
                        }
                    }));
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::config(format!(
                "matmul shape mismatch: {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        S::gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            S::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        ensure_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast_ok = va.shape() == vb.shape()
            || vb.shape() == [1]
            || (vb.shape().len() == 1 && vb.cols() == va.cols());
        if !broadcast_ok {
            return Err(Error::config(format!(
                "{name}: cannot combine shapes {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let bl = vb.len();
        let bd = vb.data();
        if let Binary::Div = kind {
            if let Some(pos) = bd.iter().position(|v| *v == S::zero()) {
                return Err(Error::numeric(
                    "div",
                    format!("division by zero at divisor index {pos}"),
                ));
            }
        }
        let data: Vec<S> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i % bl];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        ensure_finite(name, &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    /// Elementwise sum; `b` may also be a trailing-dimension vector or a
    /// one-element tensor, broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let va = self.value(a);
        let name = match kind {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Neg => "neg",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Recip => "recip",
        };
        match kind {
            Unary::Log => {
                if let Some(pos) = va.data().iter().position(|v| *v <= S::zero()) {
                    return Err(Error::numeric(
                        "log",
                        format!("non-positive argument {} at index {pos}", va.data()[pos]),
                    ));
                }
            }
            Unary::Sqrt => {
                if let Some(pos) = va.data().iter().position(|v| *v < S::zero()) {
                    return Err(Error::numeric(
                        "sqrt",
                        format!("negative argument at index {pos}"),
                    ));
                }
            }
            Unary::Recip => {
                if let Some(pos) = va.data().iter().position(|v| *v == S::zero()) {
                    return Err(Error::numeric("recip", format!("zero at index {pos}")));
                }
            }
            _ => {}
        }
        let out = va.map(|x| match kind {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Neg => -x,
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Recip => x.recip(),
        });
        ensure_finite(name, &out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Unary(kind, a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Recip, a)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, t) = (S::of(scale), S::of(shift));
        let out = self.value(x).map(|v| s * v + t);
        ensure_finite("affine", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Affine { x, scale: s }, rg))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var> {
        let out = match kind {
            Activation::LeakyRelu { slope } => {
                let s = S::of(slope);
                self.value(a)
                    .map(|x| if x > S::zero() { x } else { s * x })
            }
            Activation::Tanh => self.value(a).map(|x| x.tanh()),
            Activation::Sigmoid => self.value(a).map(sigmoid),
            Activation::Softplus => self.value(a).map(softplus),
        };
        ensure_finite("activation", &out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Act(kind, a), rg))
    }

    /// Elementwise clamp into `[lo, hi]`; zero gradient where clamped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (S::of(lo), S::of(hi));
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Clamp { x, lo, hi }, rg))
    }

    fn reduced_shape(&self, x: Var, axis: Option<usize>) -> Result<Vec<usize>> {
        let s = self.shape(x);
        match axis {
            None => Ok(vec![1]),
            Some(0) if s.len() == 1 => Ok(vec![1]),
            Some(0) => Ok(vec![s[1]]),
            Some(1) if s.len() == 2 => Ok(vec![s[0]]),
            Some(ax) => Err(Error::config(format!(
                "reduction axis {ax} out of range for shape {s:?}"
            ))),
        }
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let out_shape = self.reduced_shape(x, axis)?;
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let mut out = vec![S::zero(); out_shape.iter().product()];
        let count = match (axis, v.shape().len()) {
            (None, _) | (Some(0), 1) => {
                out[0] = v.data().iter().fold(S::zero(), |acc, &y| acc + y);
                v.len()
            }
            (Some(0), _) => {
                for r in 0..rows {
                    for (o, &y) in out.iter_mut().zip(v.row(r)) {
                        *o = *o + y;
                    }
                }
                rows
            }
            _ => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = v.row(r).iter().fold(S::zero(), |acc, &y| acc + y);
                }
                cols
            }
        };
        if mean {
            let c = S::of(count as f64);
            for o in &mut out {
                *o = *o / c;
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        ensure_finite(if mean { "mean" } else { "sum" }, &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum { x, axis, mean }, rg))
    }

    /// Sum over one axis, or over everything when `axis` is `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Max-shifted `log Σ exp` along `axis`.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduced_shape(x, Some(axis))?;
        let v = self.value(x);
        let lanes = lanes(v.shape(), axis);
        let mut out = Vec::with_capacity(lanes.len());
        for lane in &lanes {
            let vals: Vec<S> = lane.iter().map(|&i| v.data()[i]).collect();
            out.push(logsumexp_values(&vals));
        }
        let out = Tensor::new(&out_shape, out)?;
        ensure_finite("logsumexp", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSumExp { x, axis }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reverse-mode sweep from a one-element `loss`. Gradients accumulate into
    /// every node that requires them; call [`Graph::zero_grad`] before reuse.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let seed = Tensor::new(self.shape(loss), vec![S::one()])?;
        self.accumulate(loss, &seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: &Tensor<S>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(contribution.data()) {
                    *a = *a + b;
                }
            }
            None => node.grad = Some(contribution.clone()),
        }
    }

    fn take_grad_buffer(&mut self, v: Var) -> Tensor<S> {
        let node = &mut self.nodes[v.0];
        node.grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    fn propagate(&mut self, i: usize, g: &Tensor<S>) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.rg(a) {
                    // grad_a += g · bᵀ
                    let mut ga = self.take_grad_buffer(a);
                    S::gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        g.data(),
                        n as isize,
                        1,
                        self.value(b).data(),
                        1,
                        n as isize,
                        S::one(),
                        ga.data_mut(),
                        k as isize,
                        1,
                    );
                    self.nodes[a.0].grad = Some(ga);
                }
                if self.rg(b) {
                    // grad_b += aᵀ · g
                    let mut gb = self.take_grad_buffer(b);
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        self.value(a).data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        S::one(),
                        gb.data_mut(),
                        n as isize,
                        1,
                    );
                    self.nodes[b.0].grad = Some(gb);
                }
            }
            Op::Binary(kind, a, b) => self.binary_backward(kind, a, b, g),
            Op::Unary(kind, a) => {
                if !self.rg(a) {
                    return;
                }
                let x = self.value(a);
                let y = &self.nodes[i].value;
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| match kind {
                        Unary::Exp => g * y,
                        Unary::Log => g / x,
                        Unary::Neg => -g,
                        Unary::Sqrt => g / (S::of(2.0) * y),
                        Unary::Square => g * S::of(2.0) * x,
                        Unary::Recip => -g * y * y,
                    })
                    .collect();
                let c = Tensor::new(x.shape(), data).expect("same shape");
                self.accumulate(a, &c);
            }
            Op::Affine { x, scale } => {
                if self.rg(x) {
                    let c = g.map(|v| v * scale);
                    self.accumulate(x, &c);
                }
            }
            Op::Act(kind, a) => {
                if !self.rg(a) {
                    return;
                }
                let x = self.value(a);
                let y = &self.nodes[i].value;
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| match kind {
                        Activation::LeakyRelu { slope } => {
                            if x > S::zero() {
                                g
                            } else {
                                g * S::of(slope)
                            }
                        }
                        Activation::Tanh => g * (S::one() - y * y),
                        Activation::Sigmoid => g * y * (S::one() - y),
                        Activation::Softplus => g * sigmoid(x),
                    })
                    .collect();
                let c = Tensor::new(x.shape(), data).expect("same shape");
                self.accumulate(a, &c);
            }
            Op::Clamp { x, lo, hi } => {
                if !self.rg(x) {
                    return;
                }
                let xv = self.value(x);
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&g, &v)| if v < lo || v > hi { S::zero() } else { g })
                    .collect();
                let c = Tensor::new(xv.shape(), data).expect("same shape");
                self.accumulate(x, &c);
            }
            Op::Sum { x, axis, mean } => {
                if !self.rg(x) {
                    return;
                }
                let xv = self.value(x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let count = match (axis, xv.shape().len()) {
                    (None, _) | (Some(0), 1) => xv.len(),
                    (Some(0), _) => rows,
                    _ => cols,
                };
                let norm = if mean {
                    S::one() / S::of(count as f64)
                } else {
                    S::one()
                };
                let gd = g.data();
                let data: Vec<S> = (0..xv.len())
                    .map(|idx| {
                        let gi = match (axis, xv.shape().len()) {
                            (None, _) | (Some(0), 1) => gd[0],
                            (Some(0), _) => gd[idx % cols],
                            _ => gd[idx / cols],
                        };
                        gi * norm
                    })
                    .collect();
                let c = Tensor::new(xv.shape(), data).expect("same shape");
                self.accumulate(x, &c);
            }
            Op::LogSumExp { x, axis } => {
                if !self.rg(x) {
                    return;
                }
                let xv = self.value(x);
                let y = &self.nodes[i].value;
                let mut data = vec![S::zero(); xv.len()];
                for (l, lane) in lanes(xv.shape(), axis).iter().enumerate() {
                    for &idx in lane {
                        data[idx] = g.data()[l] * (xv.data()[idx] - y.data()[l]).exp();
                    }
                }
                let c = Tensor::new(xv.shape(), data).expect("same shape");
                self.accumulate(x, &c);
            }
            Op::Reshape(x) => {
                if self.rg(x) {
                    let c = g.reshape(self.shape(x)).expect("same length");
                    self.accumulate(x, &c);
                }
            }
        }
    }

    fn binary_backward(&mut self, kind: Binary, a: Var, b: Var, g: &Tensor<S>) {
        let (va, vb) = (self.value(a), self.value(b));
        let bl = vb.len();
        let (ad, bd, gd) = (va.data(), vb.data(), g.data());
        let ga = if self.rg(a) {
            let data: Vec<S> = gd
                .iter()
                .enumerate()
                .map(|(i, &g)| match kind {
                    Binary::Add | Binary::Sub => g,
                    Binary::Mul => g * bd[i % bl],
                    Binary::Div => g / bd[i % bl],
                })
                .collect();
            Some(Tensor::new(va.shape(), data).expect("same shape"))
        } else {
            None
        };
        let gb = if self.rg(b) {
            let mut acc = vec![S::zero(); bl];
            for (i, &g) in gd.iter().enumerate() {
                let j = i % bl;
                let y = bd[j];
                acc[j] = acc[j]
                    + match kind {
                        Binary::Add => g,
                        Binary::Sub => -g,
                        Binary::Mul => g * ad[i],
                        Binary::Div => -g * ad[i] / (y * y),
                    };
            }
            Some(Tensor::new(vb.shape(), acc).expect("same shape"))
        } else {
            None
        };
        if let Some(c) = ga {
            self.accumulate(a, &c);
        }
        if let Some(c) = gb {
            self.accumulate(b, &c);
        }
    }
}

/// Flat indices of each lane reduced by `axis`, in output order.
fn lanes(shape: &[usize], axis: usize) -> Vec<Vec<usize>> {
    if shape.len() == 1 {
        return vec![(0..shape[0]).collect()];
    }
    let (rows, cols) = (shape[0], shape[1]);
    if axis == 0 {
        (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect()
    } else {
        (0..rows)
            .map(|r| (0..cols).map(|c| r * cols + c).collect())
            .collect()
    }
}

/// Stable `log Σ exp(v)`; returns the element itself for one-element input.
pub fn logsumexp_values<S: Scalar>(v: &[S]) -> S {
    let m = v.iter().copied().fold(S::neg_infinity(), S::max);
    if !m.is_finite() {
        return m;
    }
    if v.len() == 1 {
        return v[0];
    }
    let s = v.iter().fold(S::zero(), |acc, &x| acc + (x - m).exp());
    m + s.ln()
}
