//! Dense, convolutional and transposed-convolutional layers with optional
//! spectral normalization.
//!
//! A normalized layer divides its weight by a power-iteration estimate of
//! the operator norm of its linear map. The estimate is refreshed outside
//! the differentiation graph and enters the forward pass as a constant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Guard on the divisor when normalizing by an estimated norm.
pub const SIGMA_EPS: f64 = 1e-12;
/// Power iterations used by evaluation-mode re-estimation.
pub const EVAL_ITERS: usize = 50;
/// Power iterations used when certifying a Lipschitz bound.
pub const CERTIFY_ITERS: usize = 200;
/// Cap on the iterations spent converging an eval or certification estimate.
pub const MAX_ITERS: usize = 20_000;
/// Relative change in σ between 10-step blocks treated as converged.
pub const CONVERGE_TOL: f64 = 1e-10;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn lipschitz(&self) -> f64 {
        match self {
            Activation::LeakyRelu(a) => a.abs().max(1.0),
            Activation::Sigmoid => 0.25,
            Activation::Identity => 1.0,
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        match *self {
            Activation::LeakyRelu(a) => g.leaky_relu(x, a),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// How a normalized layer refreshes its norm estimate before a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// One power-iteration step from the persistent vector.
    Train,
    /// A fixed number of steps from the persistent vector.
    Steps(usize),
    /// At least [`EVAL_ITERS`] steps from the persistent vector, continued
    /// until the estimate settles.
    Eval,
}

/// Result of a power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub u: Tensor,
    /// The map annihilated the iterate (zero operator); `sigma` is 0.
    pub degenerate: bool,
}

/// Persistent power-iteration state of a normalized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub u: Tensor,
    pub sigma: f64,
    pub degenerate: bool,
}

impl SpectralState {
    fn divisor(&self) -> f64 {
        if self.degenerate {
            1.0
        } else {
            self.sigma.max(SIGMA_EPS)
        }
    }

    fn absorb(&mut self, est: SpectralEstimate) {
        if !est.degenerate {
            self.u = est.u;
        }
        self.sigma = est.sigma;
        self.degenerate = est.degenerate;
    }
}

/// Runs `min_iters` steps, then 10-step blocks until σ settles or `MAX_ITERS`.
pub fn iterate_to_tolerance(
    mut step: impl FnMut(&Tensor, usize) -> Result<SpectralEstimate>,
    u: &Tensor,
    min_iters: usize,
) -> Result<SpectralEstimate> {
    let mut est = step(u, min_iters)?;
    let mut done = min_iters;
    while !est.degenerate && done < MAX_ITERS {
        let next = step(&est.u, 10)?;
        done += 10;
        let settled = (next.sigma - est.sigma).abs() <= CONVERGE_TOL * next.sigma;
        est = next;
        if settled {
            break;
        }
    }
    Ok(est)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Power iteration for the largest singular value of an `out×in` matrix.
///
/// Each step: `v = normalize(Wᵀu)`, `u' = normalize(Wv)`, `σ = u'ᵀWv`.
/// `u` has length `out`.
pub fn dense_spectral_norm(weight: &Tensor, u: &Tensor, iters: usize) -> Result<SpectralEstimate> {
    if weight.rank() != 2 || u.len() != weight.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "dense_spectral_norm",
            shapes: vec![weight.shape().to_vec(), u.shape().to_vec()],
        });
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut uu = u.data().to_vec();
    if normalize(&mut uu) == 0.0 {
        return Err(Error::InvalidArgument("power iteration start vector is zero".into()));
    }
    let mut v = vec![0.0; inp];
    let mut wv = vec![0.0; out];
    let mut sigma = 0.0;
    for _ in 0..iters {
        kernels::gemm(inp, out, 1, w, true, &uu, false, &mut v, 0.0);
        if normalize(&mut v) == 0.0 {
            return Ok(SpectralEstimate { sigma: 0.0, u: u.clone(), degenerate: true });
        }
        kernels::gemm(out, inp, 1, w, false, &v, false, &mut wv, 0.0);
        uu.copy_from_slice(&wv);
        if normalize(&mut uu) == 0.0 {
            return Ok(SpectralEstimate { sigma: 0.0, u: u.clone(), degenerate: true });
        }
        sigma = uu.iter().zip(&wv).map(|(a, b)| a * b).sum();
    }
    Ok(SpectralEstimate { sigma, u: Tensor::from_parts(vec![out], uu), degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvDirection {
    Forward,
    Transposed,
}

/// The linear map of a bias-free (transposed) convolution on a fixed input
/// shape `C×H×W`.
///
/// Kernel layout is `out×in×k×k` for [`ConvDirection::Forward`] and
/// `in×out×k×k` for [`ConvDirection::Transposed`], so the two directions
/// with the same kernel are adjoint to each other.
#[derive(Debug, Clone, Copy)]
pub struct ConvOperator<'a> {
    pub kernel: &'a Tensor,
    pub direction: ConvDirection,
    pub input_shape: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

impl<'a> ConvOperator<'a> {
    pub fn new(
        kernel: &'a Tensor,
        direction: ConvDirection,
        input_shape: [usize; 3],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let op = Self { kernel, direction, input_shape, stride, padding };
        op.geom()?;
        Ok(op)
    }

    /// The standard layer configuration (kernel 4, stride 2, padding 1).
    pub fn standard(kernel: &'a Tensor, direction: ConvDirection, input_shape: [usize; 3]) -> Result<Self> {
        Self::new(kernel, direction, input_shape, STRIDE, PADDING)
    }

    /// Conv geometry on the forward-conv input side, and the channel count
    /// on the other side.
    fn geom(&self) -> Result<(ConvGeom, usize)> {
        let ks = self.kernel.shape();
        let [c, h, w] = self.input_shape;
        let bad = || Error::ShapeMismatch {
            op: "conv_operator",
            shapes: vec![ks.to_vec(), self.input_shape.to_vec()],
        };
        if ks.len() != 4 || ks[2] != ks[3] {
            return Err(bad());
        }
        match self.direction {
            ConvDirection::Forward => {
                if ks[1] != c {
                    return Err(bad());
                }
                let g = ConvGeom::new(c, h, w, ks[2], self.stride, self.padding).map_err(|_| bad())?;
                Ok((g, ks[0]))
            }
            ConvDirection::Transposed => {
                if ks[0] != c {
                    return Err(bad());
                }
                let g = ConvGeom::for_transposed(ks[1], h, w, ks[2], self.stride, self.padding)
                    .map_err(|_| bad())?;
                Ok((g, ks[0]))
            }
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let (g, other) = self.geom().expect("validated at construction");
        match self.direction {
            ConvDirection::Forward => [other, g.out_height, g.out_width],
            ConvDirection::Transposed => [g.channels, g.height, g.width],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (g, other) = self.geom().expect("validated at construction");
        match self.direction {
            ConvDirection::Forward => kernels::conv2d(&g, 1, x, self.kernel.data(), other),
            ConvDirection::Transposed => kernels::conv_transpose2d(&g, 1, x, self.kernel.data(), other),
        }
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (g, other) = self.geom().expect("validated at construction");
        match self.direction {
            ConvDirection::Forward => kernels::conv_transpose2d(&g, 1, y, self.kernel.data(), other),
            ConvDirection::Transposed => kernels::conv2d(&g, 1, y, self.kernel.data(), other),
        }
    }

    /// Power iteration alternating the map and its adjoint on input-shaped
    /// vectors starting from `u`. Returns `σ = ‖A·u_k‖` for the final
    /// normalized iterate `u_k`.
    pub fn power_iteration(&self, u: &Tensor, iters: usize) -> Result<SpectralEstimate> {
        if u.len() != self.input_len() {
            return Err(Error::ShapeMismatch {
                op: "conv_operator_norm",
                shapes: vec![u.shape().to_vec(), self.input_shape.to_vec()],
            });
        }
        if iters == 0 {
            return Err(Error::InvalidArgument("power iteration needs iters >= 1".into()));
        }
        let mut x = u.data().to_vec();
        if normalize(&mut x) == 0.0 {
            return Err(Error::InvalidArgument("power iteration start vector is zero".into()));
        }
        let degenerate = || SpectralEstimate { sigma: 0.0, u: u.clone(), degenerate: true };
        let mut sigma = 0.0;
        for _ in 0..iters {
            let mut y = self.apply(&x);
            if normalize(&mut y) == 0.0 {
                return Ok(degenerate());
            }
            x = self.adjoint(&y);
            if normalize(&mut x) == 0.0 {
                return Ok(degenerate());
            }
            sigma = self.apply(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        Ok(SpectralEstimate {
            sigma,
            u: Tensor::from_parts(self.input_shape.to_vec(), x),
            degenerate: false,
        })
    }

    /// Dense matrix `M` with `M·vec(x) = vec(A(x))`.
    pub fn materialize(&self) -> Result<Tensor> {
        let (rows, cols) = (self.output_len(), self.input_len());
        if rows > 4096 || cols > 4096 {
            return Err(Error::InvalidArgument(format!(
                "conv matrix {rows}x{cols} exceeds the 4096x4096 guard"
            )));
        }
        let mut m = vec![0.0; rows * cols];
        let mut e = vec![0.0; cols];
        for j in 0..cols {
            e[j] = 1.0;
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                m[i * cols + j] = v;
            }
            e[j] = 0.0;
        }
        Ok(Tensor::from_parts(vec![rows, cols], m))
    }
}

/// Operator-norm estimate of a standard convolution (kernel 4, stride 2,
/// padding 1) on `input_shape`, from a deterministic start vector.
pub fn conv_operator_norm(
    kernel: &Tensor,
    direction: ConvDirection,
    input_shape: [usize; 3],
    iters: usize,
) -> Result<f64> {
    let op = ConvOperator::standard(kernel, direction, input_shape)?;
    Ok(op.power_iteration(&start_vector(op.input_len(), &input_shape, 0), iters)?.sigma)
}

/// Dense matrix of a standard convolution on `input_shape`.
pub fn materialize_conv_matrix(kernel: &Tensor, direction: ConvDirection, input_shape: [usize; 3]) -> Result<Tensor> {
    ConvOperator::standard(kernel, direction, input_shape)?.materialize()
}

pub fn start_vector(n: usize, shape: &[usize], seed: u64) -> Tensor {
    let mut r = CounterRng::new(seed, 0x5eed);
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| r.normal()).collect())
}

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut CounterRng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.uniform(-bound, bound)).collect())
}

/// `σ = uᵀWv` with `v = normalize(Wᵀu)`, i.e. `‖Wᵀu‖` for unit `u`.
fn dense_sigma(weight: &Tensor, u: &Tensor) -> (f64, Vec<f64>) {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let mut v = vec![0.0; inp];
    kernels::gemm(inp, out, 1, weight.data(), true, u.data(), false, &mut v, 0.0);
    let sigma = normalize(&mut v);
    (sigma, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out×in`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub spectral: Option<SpectralState>,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, normalized: bool) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                shapes: vec![weight.shape().to_vec(), bias.shape().to_vec()],
            });
        }
        let spectral = normalized.then(|| SpectralState {
            u: start_vector(weight.shape()[0], &[weight.shape()[0]], 1),
            sigma: 1.0,
            degenerate: false,
        });
        let mut layer = Self { weight, bias, spectral };
        layer.refresh(NormMode::Eval)?;
        Ok(layer)
    }

    pub fn init(inp: usize, out: usize, normalized: bool, rng: &mut CounterRng) -> Result<Self> {
        let weight = uniform_init(&[out, inp], inp, rng);
        let bias = uniform_init(&[out], inp, rng);
        let mut layer = Self::new(weight, bias, false)?;
        if normalized {
            let u = Tensor::from_parts(vec![out], (0..out).map(|_| rng.normal()).collect());
            layer.spectral = Some(SpectralState { u, sigma: 1.0, degenerate: false });
            layer.refresh(NormMode::Eval)?;
        }
        Ok(layer)
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn is_normalized(&self) -> bool {
        self.spectral.is_some()
    }

    /// Updates the persistent norm estimate; a no-op when not normalized.
    pub fn refresh(&mut self, mode: NormMode) -> Result<()> {
        if let Some(state) = self.spectral.as_mut() {
            let w = &self.weight;
            let est = match mode {
                NormMode::Train => dense_spectral_norm(w, &state.u, 1)?,
                NormMode::Steps(k) => dense_spectral_norm(w, &state.u, k)?,
                NormMode::Eval => iterate_to_tolerance(|u, k| dense_spectral_norm(w, u, k), &state.u, EVAL_ITERS)?,
            };
            state.absorb(est);
            if !state.degenerate {
                state.sigma = dense_sigma(w, &state.u).0;
            }
        }
        Ok(())
    }

    /// Divides the stored weight by its current norm estimate.
    pub fn rescale_normalized(&mut self) {
        if let Some(state) = self.spectral.as_mut() {
            let sigma = dense_sigma(&self.weight, &state.u).0;
            if !state.degenerate && sigma > SIGMA_EPS {
                self.weight = self.weight.scale(1.0 / sigma);
                state.sigma = dense_sigma(&self.weight, &state.u).0;
            }
        }
    }

    /// Weight actually applied in the forward pass.
    pub fn effective_weight(&self) -> Tensor {
        match &self.spectral {
            Some(s) => self.weight.scale(1.0 / s.divisor()),
            None => self.weight.clone(),
        }
    }

    /// Operator norm of the effective weight from a fresh long power iteration.
    pub fn certified_norm(&self) -> Result<f64> {
        let w = self.effective_weight();
        let out = w.shape()[0];
        let est = iterate_to_tolerance(|u, k| dense_spectral_norm(&w, u, k), &start_vector(out, &[out], 2), CERTIFY_ITERS)?;
        Ok(est.sigma)
    }

    /// `x` is `N×in`; `weight` and `bias` are the bound parameter leaves.
    pub fn forward(&self, g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.in_features() {
            return Err(Error::ShapeMismatch {
                op: "dense",
                shapes: vec![g.shape(x).to_vec(), self.weight.shape().to_vec()],
            });
        }
        let w = match &self.spectral {
            Some(s) if !s.degenerate && s.sigma > SIGMA_EPS => {
                let (out, inp) = (self.out_features(), self.in_features());
                let (_, v) = dense_sigma(&self.weight, &s.u);
                let u = g.constant(Tensor::from_parts(vec![1, out], s.u.data().to_vec()));
                let v = g.constant(Tensor::from_parts(vec![inp, 1], v));
                let uw = g.matmul(u, weight)?;
                let sigma = g.matmul(uw, v)?;
                g.div(weight, sigma)?
            }
            Some(s) => g.scale(weight, 1.0 / s.divisor())?,
            None => weight,
        };
        let wt = g.transpose(w)?;
        let y = g.matmul(x, wt)?;
        g.add(y, bias)
    }

    /// Value-level forward pass, refreshing the norm estimate per `mode`.
    pub fn forward_value(&mut self, x: &Tensor, mode: NormMode) -> Result<Tensor> {
        self.refresh(mode)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        let y = self.forward(&mut g, xv, w, b)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `out×in×k×k` (forward) or `in×out×k×k` (transposed).
    pub kernel: Tensor,
    pub bias: Tensor,
    pub direction: ConvDirection,
    /// Per-sample input shape `C×H×W` the operator norm is certified for.
    pub input_shape: [usize; 3],
    pub spectral: Option<SpectralState>,
}

impl ConvLayer {
    pub fn init(
        direction: ConvDirection,
        input_shape: [usize; 3],
        out_channels: usize,
        normalized: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let in_ch = input_shape[0];
        let shape = match direction {
            ConvDirection::Forward => [out_channels, in_ch, KERNEL, KERNEL],
            ConvDirection::Transposed => [in_ch, out_channels, KERNEL, KERNEL],
        };
        let fan_in = in_ch * KERNEL * KERNEL;
        let kernel = uniform_init(&shape, fan_in, rng);
        let bias = uniform_init(&[out_channels], fan_in, rng);
        let mut layer = Self { kernel, bias, direction, input_shape, spectral: None };
        if normalized {
            let n = input_shape.iter().product();
            let u = Tensor::from_parts(input_shape.to_vec(), (0..n).map(|_| rng.normal()).collect());
            layer.spectral = Some(SpectralState { u, sigma: 1.0, degenerate: false });
        }
        layer.operator()?;
        layer.refresh(NormMode::Eval)?;
        Ok(layer)
    }

    pub fn operator(&self) -> Result<ConvOperator<'_>> {
        ConvOperator::standard(&self.kernel, self.direction, self.input_shape)
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.operator().expect("validated at construction").output_shape()
    }

    pub fn is_normalized(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn refresh(&mut self, mode: NormMode) -> Result<()> {
        if let Some(u) = self.spectral.as_ref().map(|s| s.u.clone()) {
            let op = self.operator()?;
            let est = match mode {
                NormMode::Train => op.power_iteration(&u, 1)?,
                NormMode::Steps(k) => op.power_iteration(&u, k)?,
                NormMode::Eval => iterate_to_tolerance(|u, k| op.power_iteration(u, k), &u, EVAL_ITERS)?,
            };
            self.spectral.as_mut().unwrap().absorb(est);
        }
        Ok(())
    }

    /// Divides the stored kernel by its current norm estimate.
    pub fn rescale_normalized(&mut self) {
        let Some(state) = self.spectral.as_ref() else { return };
        if state.degenerate {
            return;
        }
        let norm = |k: &Tensor, u: &Tensor| -> Result<f64> {
            let op = ConvOperator::standard(k, self.direction, self.input_shape)?;
            Ok(op.apply(u.data()).iter().map(|v| v * v).sum::<f64>().sqrt())
        };
        let Ok(sigma) = norm(&self.kernel, &state.u) else { return };
        if sigma > SIGMA_EPS {
            self.kernel = self.kernel.scale(1.0 / sigma);
            let s = norm(&self.kernel, &state.u).unwrap_or(1.0);
            self.spectral.as_mut().unwrap().sigma = s;
        }
    }

    pub fn effective_kernel(&self) -> Tensor {
        match &self.spectral {
            Some(s) => self.kernel.scale(1.0 / s.divisor()),
            None => self.kernel.clone(),
        }
    }

    pub fn certified_norm(&self) -> Result<f64> {
        let k = self.effective_kernel();
        let op = ConvOperator::standard(&k, self.direction, self.input_shape)?;
        let u = start_vector(op.input_len(), &self.input_shape, 2);
        Ok(iterate_to_tolerance(|u, k| op.power_iteration(u, k), &u, CERTIFY_ITERS)?.sigma)
    }

    /// `x` is `N×C×H×W` matching `input_shape`.
    pub fn forward(&self, g: &mut Graph, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != self.input_shape {
            return Err(Error::ShapeMismatch {
                op: "conv_layer",
                shapes: vec![xs, self.input_shape.to_vec()],
            });
        }
        let k = match &self.spectral {
            Some(s) if !s.degenerate && s.sigma > SIGMA_EPS => {
                let op = self.operator()?;
                let mut y = op.apply(s.u.data());
                normalize(&mut y);
                let mut xshape = vec![1];
                xshape.extend_from_slice(&self.input_shape);
                let mut yshape = vec![1];
                yshape.extend_from_slice(&op.output_shape());
                let u = g.constant(Tensor::from_parts(xshape, s.u.data().to_vec()));
                let y = g.constant(Tensor::from_parts(yshape, y));
                let ax = match self.direction {
                    ConvDirection::Forward => g.conv2d(u, kernel, STRIDE, PADDING)?,
                    ConvDirection::Transposed => g.conv_transpose2d(u, kernel, STRIDE, PADDING)?,
                };
                let prod = g.mul(ax, y)?;
                let sigma = g.sum(prod, None)?;
                g.div(kernel, sigma)?
            }
            Some(s) => g.scale(kernel, 1.0 / s.divisor())?,
            None => kernel,
        };
        let y = match self.direction {
            ConvDirection::Forward => g.conv2d(x, k, STRIDE, PADDING)?,
            ConvDirection::Transposed => g.conv_transpose2d(x, k, STRIDE, PADDING)?,
        };
        let c = self.bias.len();
        let b = g.reshape(bias, &[c, 1, 1])?;
        g.add(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_identity_norms() {
        let w = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let est = dense_spectral_norm(&w, &Tensor::vector(&[0.3, 1.0]), 50).unwrap();
        assert!((est.sigma - 3.0).abs() < 1e-9);
        let est = dense_spectral_norm(&Tensor::eye(4), &Tensor::vector(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert!((est.sigma - 1.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let est = dense_spectral_norm(&Tensor::zeros(&[3, 2]), &Tensor::vector(&[1.0, 0.0, 0.0]), 5).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.sigma, 0.0);
        let layer = DenseLayer::new(Tensor::zeros(&[2, 2]), Tensor::zeros(&[2]), true).unwrap();
        assert!(layer.effective_weight().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_tap_kernel_scales_identity() {
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        for dir in [ConvDirection::Forward, ConvDirection::Transposed] {
            let op = ConvOperator::new(&k, dir, [1, 5, 7], 1, 0).unwrap();
            let est = op.power_iteration(&start_vector(35, &[1, 5, 7], 3), 3).unwrap();
            assert!((est.sigma - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kernel_has_zero_norm() {
        let k = Tensor::zeros(&[2, 3, 4, 4]);
        let s = conv_operator_norm(&k, ConvDirection::Forward, [3, 8, 8], 10).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn identity_kernel_materializes_identity() {
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let m = ConvOperator::new(&k, ConvDirection::Forward, [1, 2, 2], 1, 0).unwrap().materialize().unwrap();
        assert_eq!(m, Tensor::eye(4));
    }

    #[test]
    fn materialize_size_guard() {
        let k = Tensor::zeros(&[8, 8, 4, 4]);
        assert!(materialize_conv_matrix(&k, ConvDirection::Forward, [8, 32, 32]).is_err());
    }

    #[test]
    fn incompatible_shapes_are_rejected() {
        let k = Tensor::zeros(&[2, 3, 4, 4]);
        assert!(conv_operator_norm(&k, ConvDirection::Forward, [2, 8, 8], 1).is_err());
        assert!(conv_operator_norm(&k, ConvDirection::Transposed, [3, 8, 8], 1).is_err());
    }

    #[test]
    fn dense_forward_examples() {
        let mut id = DenseLayer::new(Tensor::eye(3), Tensor::zeros(&[3]), true).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        assert!(id.forward_value(&x, NormMode::Train).unwrap().max_abs_diff(&x) < 1e-15);

        let mut two = DenseLayer::new(Tensor::eye(3).scale(2.0), Tensor::zeros(&[3]), true).unwrap();
        assert!(two.forward_value(&x, NormMode::Eval).unwrap().max_abs_diff(&x) < 1e-12);

        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut plain = DenseLayer::new(w, Tensor::vector(&[1.0, -1.0]), false).unwrap();
        let y = plain.forward_value(&Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(), NormMode::Eval).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn train_mode_estimates_increase_monotonically() {
        let mut rng = CounterRng::new(4, 0);
        let mut layer = DenseLayer::init(6, 9, true, &mut rng).unwrap();
        layer.spectral.as_mut().unwrap().u = Tensor::from_parts(vec![9], (0..9).map(|_| rng.normal()).collect());
        let mut prev = 0.0;
        for _ in 0..300 {
            layer.refresh(NormMode::Train).unwrap();
            let s = layer.spectral.as_ref().unwrap().sigma;
            assert!(s >= prev - 1e-9, "{s} < {prev}");
            prev = s;
        }
        let train = prev;
        layer.refresh(NormMode::Eval).unwrap();
        assert!((layer.spectral.as_ref().unwrap().sigma - train).abs() < 1e-9);
    }

    #[test]
    fn normalized_conv_layer_certifies_near_one() {
        let mut rng = CounterRng::new(8, 0);
        for dir in [ConvDirection::Forward, ConvDirection::Transposed] {
            let mut layer = ConvLayer::init(dir, [3, 4, 4], 5, true, &mut rng).unwrap();
            for _ in 0..4 {
                layer.refresh(NormMode::Eval).unwrap();
            }
            let c = layer.certified_norm().unwrap();
            assert!((c - 1.0).abs() < 1e-2, "{dir:?}: {c}");
        }
    }
}
