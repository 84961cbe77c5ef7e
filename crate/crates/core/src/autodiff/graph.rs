use crate::autodiff::shape::{
    broadcast_offsets, broadcast_shapes, can_broadcast_to, remove_axis, split_axis,
};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Divisor used by the variance primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divisor {
    /// Population statistic (divide by N).
    N,
    /// Sample statistic (divide by N-1).
    NMinusOne,
}

impl Divisor {
    fn value(self, n: usize) -> f64 {
        match self {
            Divisor::N => n as f64,
            Divisor::NMinusOne => n as f64 - 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom, out_ch: usize },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom, in_ch: usize },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Variance(Var, usize, Divisor),
    Reshape(Var),
    Broadcast(Var),
    Transpose(Var),
    Clamp(Var, f64, f64),
    L2Norm(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward pass is a single reverse sweep. Inputs created with
/// [`Graph::constant`] never receive gradient.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient of `v`, or zeros of its shape when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf detached from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shapes(op, sa, sb)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(sa, &shape);
            let ob = broadcast_offsets(sb, &shape);
            oa.iter().zip(&ob).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), node, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, node, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiplies by a constant (no gradient flows to `c`).
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let s = self.scalar(c);
        self.mul(x, s)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let s = self.scalar(c);
        self.add(x, s)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x` is `N×C×H×W`, `w` is `O×C×k×k`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch = || Error::ShapeMismatch { op: "conv2d", shapes: vec![xs.clone(), ws.clone()] };
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(mismatch());
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], stride, padding).map_err(|_| mismatch())?;
        let out_ch = ws[0];
        let y = kernels::conv2d(&geom, xs[0], self.value(x).data(), self.value(w).data(), out_ch);
        let shape = vec![xs[0], out_ch, geom.out_height, geom.out_width];
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::from_parts(shape, y), Op::Conv2d { x, w, geom, out_ch }, rg))
    }

    /// `x` is `N×Ci×H×W`, `w` is `Ci×Co×k×k`; output spatial extent is
    /// `(H-1)·stride - 2·padding + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch =
            || Error::ShapeMismatch { op: "conv_transpose2d", shapes: vec![xs.clone(), ws.clone()] };
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(mismatch());
        }
        let geom = ConvGeom::for_transposed(ws[1], xs[2], xs[3], ws[2], stride, padding)
            .map_err(|_| mismatch())?;
        let in_ch = ws[0];
        let y = kernels::conv_transpose2d(&geom, xs[0], self.value(x).data(), self.value(w).data(), in_ch);
        let shape = vec![xs[0], geom.channels, geom.height, geom.width];
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::from_parts(shape, y), Op::ConvTranspose2d { x, w, geom, in_ch }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { alpha * v }, Op::LeakyRelu(x, alpha))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain { op: "log", detail: format!("input {bad}") });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain { op: "sqrt", detail: format!("input {bad}") });
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::ShapeMismatch { op, shapes: vec![self.shape(x).to_vec(), vec![axis]] });
        }
        Ok(())
    }

    fn reduce_axis(&self, x: Var, axis: usize, f: impl Fn(&[f64], usize) -> f64) -> Tensor {
        let shape = self.shape(x);
        let (outer, len, inner) = split_axis(shape, axis);
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = data[(o * len + k) * inner + i];
                }
                out[o * inner + i] = f(&buf, len);
            }
        }
        Tensor::from_parts(remove_axis(shape, axis), out)
    }

    /// Sum over one axis (removed from the shape) or over everything.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = match axis {
            None => Tensor::scalar(self.value(x).data().iter().sum()),
            Some(a) => {
                self.check_axis("sum", x, a)?;
                self.reduce_axis(x, a, |v, _| v.iter().sum())
            }
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Sum(x, axis), rg))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = match axis {
            None => {
                let d = self.value(x).data();
                Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64)
            }
            Some(a) => {
                self.check_axis("mean", x, a)?;
                self.reduce_axis(x, a, |v, n| v.iter().sum::<f64>() / n as f64)
            }
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Mean(x, axis), rg))
    }

    pub fn variance(&mut self, x: Var, axis: usize, divisor: Divisor) -> Result<Var> {
        self.check_axis("variance", x, axis)?;
        let n = self.shape(x)[axis];
        if divisor.value(n) <= 0.0 {
            return Err(Error::ShapeMismatch { op: "variance", shapes: vec![self.shape(x).to_vec()] });
        }
        let value = self.reduce_axis(x, axis, |v, n| {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / divisor.value(n)
        });
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Variance(x, axis, divisor), rg))
    }

    /// Euclidean norm along `axis` (removed from the shape).
    pub fn l2norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2norm", x, axis)?;
        let value = self.reduce_axis(x, axis, |v, _| v.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::L2Norm(x, axis), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::ShapeMismatch { op: "transpose", shapes: vec![self.shape(x).to_vec()] });
        }
        let value = self.value(x).transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if !can_broadcast_to(xs, shape) {
            return Err(Error::ShapeMismatch { op: "broadcast", shapes: vec![xs.to_vec(), shape.to_vec()] });
        }
        let src = self.value(x).data();
        let data = broadcast_offsets(xs, shape).into_iter().map(|i| src[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Broadcast(x), rg))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (n, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(t),
            }
        };
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| {
            let xd = val(x).data();
            let data = g.data().iter().zip(xd).zip(y.data()).map(|((&g, &x), &y)| f(g, x, y)).collect();
            Tensor::from_parts(val(x).shape().to_vec(), data)
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(a) {
                    acc(a, reduce_to(g, val(a).shape()));
                }
                if wants(b) {
                    acc(b, reduce_to(g, val(b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    acc(a, reduce_to(g, val(a).shape()));
                }
                if wants(b) {
                    acc(b, reduce_to(&g.scale(-1.0), val(b).shape()));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let shape = y.shape();
                let (ad, bd) = (val(a).data(), val(b).data());
                let oa = broadcast_offsets(val(a).shape(), shape);
                let ob = broadcast_offsets(val(b).shape(), shape);
                if wants(a) {
                    let full: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(&ob)
                        .map(|(&g, &j)| if is_div { g / bd[j] } else { g * bd[j] })
                        .collect();
                    acc(a, reduce_to(&Tensor::from_parts(shape.to_vec(), full), val(a).shape()));
                }
                if wants(b) {
                    let full: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(oa.iter().zip(&ob))
                        .map(|(&g, (&i, &j))| {
                            if is_div {
                                -g * ad[i] / (bd[j] * bd[j])
                            } else {
                                g * ad[i]
                            }
                        })
                        .collect();
                    acc(b, reduce_to(&Tensor::from_parts(shape.to_vec(), full), val(b).shape()));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                    acc(a, Tensor::from_parts(vec![m, k], da));
                }
                if wants(b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                    acc(b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Conv2d { x, w, geom, out_ch } => {
                let batch = val(x).shape()[0];
                let (dx, dw) = kernels::conv2d_backward(
                    &geom,
                    batch,
                    val(x).data(),
                    val(w).data(),
                    out_ch,
                    g.data(),
                    wants(x),
                    wants(w),
                );
                if let Some(dx) = dx {
                    acc(x, Tensor::from_parts(val(x).shape().to_vec(), dx));
                }
                if let Some(dw) = dw {
                    acc(w, Tensor::from_parts(val(w).shape().to_vec(), dw));
                }
            }
            Op::ConvTranspose2d { x, w, geom, in_ch } => {
                let batch = val(x).shape()[0];
                let (dx, dw) = kernels::conv_transpose2d_backward(
                    &geom,
                    batch,
                    val(x).data(),
                    val(w).data(),
                    in_ch,
                    g.data(),
                    wants(x),
                    wants(w),
                );
                if let Some(dx) = dx {
                    acc(x, Tensor::from_parts(val(x).shape().to_vec(), dx));
                }
                if let Some(dw) = dw {
                    acc(w, Tensor::from_parts(val(w).shape().to_vec(), dw));
                }
            }
            Op::LeakyRelu(x, alpha) => {
                acc(x, elementwise(x, &|g, x, _| if x > 0.0 { g } else { alpha * g }))
            }
            Op::Sigmoid(x) => acc(x, elementwise(x, &|g, _, y| g * y * (1.0 - y))),
            Op::Log(x) => acc(x, elementwise(x, &|g, x, _| g / x)),
            Op::Exp(x) => acc(x, elementwise(x, &|g, _, y| g * y)),
            Op::Sqrt(x) => acc(x, elementwise(x, &|g, _, y| if y > 0.0 { 0.5 * g / y } else { 0.0 })),
            Op::Square(x) => acc(x, elementwise(x, &|g, x, _| 2.0 * g * x)),
            Op::Abs(x) => acc(x, elementwise(x, &|g, x, _| g * sign(x))),
            Op::Clamp(x, lo, hi) => {
                acc(x, elementwise(x, &|g, x, _| if x >= lo && x <= hi { g } else { 0.0 }))
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let xs = val(x).shape();
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), None) => 1.0 / val(x).len() as f64,
                    (Op::Mean(..), Some(a)) => 1.0 / xs[a] as f64,
                    _ => 1.0,
                };
                let t = match axis {
                    None => Tensor::full(xs, g.item() * scale),
                    Some(a) => expand_axis(g, xs, a, |gv, _| gv * scale),
                };
                acc(x, t);
            }
            Op::Variance(x, axis, divisor) => {
                let xs = val(x).shape();
                let (outer, len, inner) = split_axis(xs, axis);
                let xd = val(x).data();
                let d = divisor.value(len);
                let mut out = vec![0.0; xd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let mean = (0..len).map(|k| xd[at(k)]).sum::<f64>() / len as f64;
                        let gv = g.data()[o * inner + i];
                        for k in 0..len {
                            out[at(k)] = gv * 2.0 * (xd[at(k)] - mean) / d;
                        }
                    }
                }
                acc(x, Tensor::from_parts(xs.to_vec(), out));
            }
            Op::L2Norm(x, axis) => {
                let xs = val(x).shape();
                let (outer, len, inner) = split_axis(xs, axis);
                let xd = val(x).data();
                let mut out = vec![0.0; xd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let norm = y.data()[o * inner + i];
                        if norm == 0.0 {
                            continue;
                        }
                        let gv = g.data()[o * inner + i];
                        for k in 0..len {
                            let at = (o * len + k) * inner + i;
                            out[at] = gv * xd[at] / norm;
                        }
                    }
                }
                acc(x, Tensor::from_parts(xs.to_vec(), out));
            }
            Op::Reshape(x) => acc(x, Tensor::from_parts(val(x).shape().to_vec(), g.data().to_vec())),
            Op::Broadcast(x) => acc(x, reduce_to(g, val(x).shape())),
            Op::Transpose(x) => acc(x, g.transpose()),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = vec![0.0; shape.iter().product()];
    for (gv, off) in g.data().iter().zip(broadcast_offsets(shape, g.shape())) {
        out[off] += gv;
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// Re-inserts a reduced axis, mapping each input position to `f(g, k)`.
fn expand_axis(g: &Tensor, full: &[usize], axis: usize, f: impl Fn(f64, usize) -> f64) -> Tensor {
    let (outer, len, inner) = split_axis(full, axis);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[(o * len + k) * inner + i] = f(g.data()[o * inner + i], k);
            }
        }
    }
    Tensor::from_parts(full.to_vec(), out)
}
