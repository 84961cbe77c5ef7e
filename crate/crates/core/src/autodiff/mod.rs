//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Computation is recorded on a [`Graph`]; [`Graph::backward`] returns the
//! gradient of a scalar output with respect to every differentiable leaf.

mod graph;
pub mod shape;

pub use graph::{Divisor, Gradients, Graph, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The primitive set, for generic dispatch through [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Conv2d { stride: usize, padding: usize },
    ConvTranspose2d { stride: usize, padding: usize },
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Log,
    Exp,
    Sqrt,
    Square,
    Mean { axis: Option<usize> },
    Sum { axis: Option<usize> },
    Variance { axis: usize, divisor: Divisor },
    Reshape { shape: Vec<usize> },
    Broadcast { shape: Vec<usize> },
    Transpose,
    Clamp { lo: f64, hi: f64 },
    Abs,
    L2Norm { axis: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::ConvTranspose2d { .. } => "conv_transpose2d",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Sqrt => "sqrt",
            Primitive::Square => "square",
            Primitive::Mean { .. } => "mean",
            Primitive::Sum { .. } => "sum",
            Primitive::Variance { .. } => "variance",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Broadcast { .. } => "broadcast",
            Primitive::Transpose => "transpose",
            Primitive::Clamp { .. } => "clamp",
            Primitive::Abs => "abs",
            Primitive::L2Norm { .. } => "l2norm",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::MatMul
            | Primitive::Conv2d { .. }
            | Primitive::ConvTranspose2d { .. } => 2,
            _ => 1,
        }
    }
}

impl Graph {
    /// Applies `p` to `inputs`, recording the node for the backward pass.
    pub fn apply(&mut self, p: &Primitive, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != p.arity() {
            return Err(Error::InvalidArgument(format!(
                "{} takes {} inputs, got {}",
                p.name(),
                p.arity(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        let b = inputs.get(1).copied();
        match p {
            Primitive::Add => self.add(a, b.unwrap()),
            Primitive::Sub => self.sub(a, b.unwrap()),
            Primitive::Mul => self.mul(a, b.unwrap()),
            Primitive::Div => self.div(a, b.unwrap()),
            Primitive::MatMul => self.matmul(a, b.unwrap()),
            Primitive::Conv2d { stride, padding } => self.conv2d(a, b.unwrap(), *stride, *padding),
            Primitive::ConvTranspose2d { stride, padding } => {
                self.conv_transpose2d(a, b.unwrap(), *stride, *padding)
            }
            Primitive::LeakyRelu { alpha } => Ok(self.leaky_relu(a, *alpha)),
            Primitive::Sigmoid => Ok(self.sigmoid(a)),
            Primitive::Log => self.log(a),
            Primitive::Exp => Ok(self.exp(a)),
            Primitive::Sqrt => self.sqrt(a),
            Primitive::Square => Ok(self.square(a)),
            Primitive::Mean { axis } => self.mean(a, *axis),
            Primitive::Sum { axis } => self.sum(a, *axis),
            Primitive::Variance { axis, divisor } => self.variance(a, *axis, *divisor),
            Primitive::Reshape { shape } => self.reshape(a, shape),
            Primitive::Broadcast { shape } => self.broadcast(a, shape),
            Primitive::Transpose => self.transpose(a),
            Primitive::Clamp { lo, hi } => Ok(self.clamp(a, *lo, *hi)),
            Primitive::Abs => Ok(self.abs(a)),
            Primitive::L2Norm { axis } => self.l2norm(a, *axis),
        }
    }
}

/// Value and gradient of a scalar function built on a fresh graph.
pub fn value_and_grad<F>(f: F, x: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let value = g.value(out).item();
    let mut grads = g.backward(out)?;
    Ok((value, grads.take(xv)))
}

fn eval_constant<F>(f: &F, x: Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = f(&mut g, xv)?;
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("function value {v}")));
    }
    Ok(v)
}

/// Compares the analytic gradient of `f` at `x` with central differences of
/// step `h`. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let (value, analytic) = value_and_grad(&f, x)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("function value {value}")));
    }
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval_constant(&f, plus)? - eval_constant(&f, minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut r = CounterRng::new(seed, 11);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform(lo, hi)).collect()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x, 0.2);
        assert!((g.value(y).item() + 0.2).abs() < 1e-15);
        let z = g.scalar(0.0);
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let xt = rand_tensor(&[2, 3, 5, 5], 1, -1.0, 1.0);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = g.constant(xt.clone());
        let w = g.constant(w);
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn backward_examples() {
        let (_, gr) = value_and_grad(|g, x| Ok(g.square(x)), &Tensor::scalar(3.0)).unwrap();
        assert_eq!(gr.item(), 6.0);
        let (_, gr) = value_and_grad(|g, x| g.mean(x, None), &Tensor::vector(&[1.0, 5.0])).unwrap();
        assert_eq!(gr.data(), &[0.5, 0.5]);
    }

    #[test]
    fn std_gradient_against_central_differences() {
        let x = rand_tensor(&[16], 3, -2.0, 2.0);
        let err = finite_difference_check(
            |g, z| {
                let v = g.variance(z, 0, Divisor::NMinusOne)?;
                g.sqrt(v)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn gradcheck_sum_of_squares_and_constant() {
        let x = rand_tensor(&[8], 4, -1.0, 1.0);
        let err = finite_difference_check(
            |g, z| {
                let s = g.square(z);
                g.sum(s, None)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "err {err}");
        let err = finite_difference_check(
            |g, z| {
                let zero = g.scale(z, 0.0)?;
                let s = g.sum(zero, None)?;
                g.add_scalar(s, 3.0)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn unreachable_and_detached_inputs_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(&[1.0, 2.0]));
        let unused = g.param(Tensor::vector(&[3.0]));
        let c = g.constant(Tensor::vector(&[4.0, 5.0]));
        let p = g.mul(a, c).unwrap();
        let s = g.sum(p, None).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[4.0, 5.0]);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get_or_zeros(unused).data(), &[0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*x + x  => f' = 2x + 1
        let (_, gr) = value_and_grad(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.add(sq, x)
            },
            &Tensor::scalar(2.0),
        )
        .unwrap();
        assert_eq!(gr.item(), 5.0);
    }

    #[test]
    fn errors_are_structured() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let neg = g.constant(Tensor::vector(&[-1.0]));
        assert!(matches!(g.sqrt(neg), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(g.log(neg), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(g.backward(a), Err(Error::NonScalarOutput(_))));
        assert!(g.apply(&Primitive::Add, &[a]).is_err());
    }

    #[test]
    fn broadcast_gradient_mass_is_conserved() {
        // sum(broadcast(x)) has gradient equal to the number of copies.
        let x = rand_tensor(&[3], 9, -1.0, 1.0);
        let (_, gr) = value_and_grad(
            |g, v| {
                let b = g.broadcast(v, &[4, 3])?;
                g.sum(b, None)
            },
            &x,
        )
        .unwrap();
        assert_eq!(gr.data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let x = rand_tensor(&[2, 3, 8, 8], 5, -1.0, 1.0);
        let w = rand_tensor(&[4, 3, 4, 4], 6, -1.0, 1.0);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.param(w.clone());
            let y = g.conv2d(xv, wv, 2, 1).unwrap();
            let s = g.square(y);
            let out = g.mean(s, None).unwrap();
            let grads = g.backward(out).unwrap();
            (g.value(out).clone(), grads.get_or_zeros(wv))
        };
        assert_eq!(run(), run());
    }
}
