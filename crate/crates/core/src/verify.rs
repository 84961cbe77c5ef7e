//! Property suites checking the implementation against independent oracles.
//!
//! Each suite returns a [`VerifyReport`] listing every check with its measured
//! value and tolerance.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analysis::{pca_compare, volume_determinant_check, Analyzer, Metric};
use crate::autodiff::{finite_difference_check, value_and_grad, Divisor, Graph, Primitive, Var};
use crate::data::{gen_circles, gen_curve1d, gen_surface2d, surface2d_clean, Dataset};
use crate::error::{Error, Result};
use crate::layers::{dense_spectral_norm, iterate_to_tolerance, start_vector, ConvDirection, ConvOperator, CERTIFY_ITERS};
use crate::model::{build_autoencoder, Model, ModelSpec};
use crate::objectives::{self, LossKind, RegularizerKind};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig, TrainingHistory};

/// Finite-difference step used by the gradient suite.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// How `measured` is compared with `tolerance`.
    pub relation: &'static str,
    pub pass: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, relation: "<", pass: measured < tolerance }
    }

    pub fn above(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, relation: ">", pass: measured > tolerance }
    }

    pub fn equal(name: impl Into<String>, measured: f64, expected: f64) -> Self {
        Self { name: name.into(), measured, tolerance: expected, relation: "==", pass: measured == expected }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn new(suite: impl Into<String>, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { suite: suite.into(), pass, checks }
    }

    pub fn merge(suite: impl Into<String>, reports: Vec<VerifyReport>) -> Self {
        Self::new(suite, reports.into_iter().flat_map(|r| r.checks).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn rand_tensor(r: &mut CounterRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform(lo, hi)).collect()).unwrap()
}

/// Values with magnitude in `[lo, hi]` and random sign, away from kinks at 0.
fn rand_signed(r: &mut CounterRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = rand_tensor(r, shape, lo, hi);
    for v in t.data_mut() {
        if r.next_f64() < 0.5 {
            *v = -*v;
        }
    }
    t
}

/// Scalarizes `y` by a fixed random weighting so every output entry matters.
fn weighted_sum(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    g.sum(p, None)
}

type Case = (String, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>, Tensor);

fn unary(name: &str, p: Primitive, x: Tensor, out_shape: &[usize], r: &mut CounterRng) -> Case {
    let w = rand_tensor(r, out_shape, 0.5, 1.5);
    (name.to_string(), Box::new(move |g: &mut Graph, v: Var| {
        let y = g.apply(&p, &[v])?;
        weighted_sum(g, y, &w)
    }), x)
}

/// Both argument slots of a binary primitive, each checked with the other fixed.
fn binary(name: &str, p: Primitive, a: Tensor, b: Tensor, out_shape: &[usize], r: &mut CounterRng) -> Vec<Case> {
    let w = rand_tensor(r, out_shape, 0.5, 1.5);
    let (p1, b1, w1) = (p.clone(), b.clone(), w.clone());
    let (p2, a2, w2) = (p, a.clone(), w);
    vec![
        (format!("{name}/lhs"), Box::new(move |g: &mut Graph, v: Var| {
            let c = g.constant(b1.clone());
            let y = g.apply(&p1, &[v, c])?;
            weighted_sum(g, y, &w1)
        }), a),
        (format!("{name}/rhs"), Box::new(move |g: &mut Graph, v: Var| {
            let c = g.constant(a2.clone());
            let y = g.apply(&p2, &[c, v])?;
            weighted_sum(g, y, &w2)
        }), b),
    ]
}

fn clamp_input(r: &mut CounterRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = rand_tensor(r, shape, -1.0, 1.0);
    for v in t.data_mut() {
        while (*v - lo).abs() < 1e-3 || (*v - hi).abs() < 1e-3 {
            *v = r.uniform(-1.0, 1.0);
        }
    }
    t
}

/// One random instance of every primitive, regularizer and loss.
fn gradient_cases(r: &mut CounterRng) -> Vec<Case> {
    let mut cases = Vec::new();
    let a = rand_tensor(r, &[4, 3], -1.0, 1.0);
    let b = rand_tensor(r, &[1, 3], -1.0, 1.0);
    cases.extend(binary("add", Primitive::Add, a.clone(), b.clone(), &[4, 3], r));
    cases.extend(binary("sub", Primitive::Sub, a.clone(), b.clone(), &[4, 3], r));
    cases.extend(binary("mul", Primitive::Mul, a.clone(), rand_tensor(r, &[4, 3], -1.0, 1.0), &[4, 3], r));
    cases.extend(binary("div", Primitive::Div, a.clone(), rand_signed(r, &[1, 3], 0.5, 2.0), &[4, 3], r));
    cases.extend(binary("matmul", Primitive::MatMul, rand_tensor(r, &[3, 4], -1.0, 1.0), rand_tensor(r, &[4, 2], -1.0, 1.0), &[3, 2], r));
    let conv = Primitive::Conv2d { stride: 2, padding: 1 };
    cases.extend(binary("conv2d", conv, rand_tensor(r, &[1, 2, 4, 4], -1.0, 1.0), rand_tensor(r, &[3, 2, 4, 4], -0.5, 0.5), &[1, 3, 2, 2], r));
    let deconv = Primitive::ConvTranspose2d { stride: 2, padding: 1 };
    cases.extend(binary("conv_transpose2d", deconv, rand_tensor(r, &[1, 2, 2, 2], -1.0, 1.0), rand_tensor(r, &[2, 2, 4, 4], -0.5, 0.5), &[1, 2, 4, 4], r));
    let s = [3, 4];
    cases.push(unary("leaky_relu", Primitive::LeakyRelu { alpha: 0.2 }, rand_signed(r, &s, 0.1, 1.0), &s, r));
    cases.push(unary("sigmoid", Primitive::Sigmoid, rand_tensor(r, &s, -3.0, 3.0), &s, r));
    cases.push(unary("log", Primitive::Log, rand_tensor(r, &s, 0.5, 2.0), &s, r));
    cases.push(unary("exp", Primitive::Exp, rand_tensor(r, &s, -1.0, 1.0), &s, r));
    cases.push(unary("sqrt", Primitive::Sqrt, rand_tensor(r, &s, 0.5, 2.0), &s, r));
    cases.push(unary("square", Primitive::Square, rand_tensor(r, &s, -1.0, 1.0), &s, r));
    cases.push(unary("mean/all", Primitive::Mean { axis: None }, rand_tensor(r, &s, -1.0, 1.0), &[], r));
    cases.push(unary("mean/axis1", Primitive::Mean { axis: Some(1) }, rand_tensor(r, &s, -1.0, 1.0), &[3], r));
    cases.push(unary("sum/axis0", Primitive::Sum { axis: Some(0) }, rand_tensor(r, &s, -1.0, 1.0), &[4], r));
    cases.push(unary("variance/n", Primitive::Variance { axis: 0, divisor: Divisor::N }, rand_tensor(r, &[5, 3], -1.0, 1.0), &[3], r));
    cases.push(unary("variance/n-1", Primitive::Variance { axis: 1, divisor: Divisor::NMinusOne }, rand_tensor(r, &[3, 5], -1.0, 1.0), &[3], r));
    cases.push(unary("reshape", Primitive::Reshape { shape: vec![2, 6] }, rand_tensor(r, &s, -1.0, 1.0), &[2, 6], r));
    cases.push(unary("broadcast", Primitive::Broadcast { shape: vec![4, 3] }, rand_tensor(r, &[1, 3], -1.0, 1.0), &[4, 3], r));
    cases.push(unary("transpose", Primitive::Transpose, rand_tensor(r, &s, -1.0, 1.0), &[4, 3], r));
    cases.push(unary("clamp", Primitive::Clamp { lo: -0.5, hi: 0.5 }, clamp_input(r, &s, -0.5, 0.5), &s, r));
    cases.push(unary("abs", Primitive::Abs, rand_signed(r, &s, 0.1, 1.0), &s, r));
    cases.push(unary("l2norm", Primitive::L2Norm { axis: 1 }, rand_signed(r, &s, 0.1, 1.0), &[3], r));

    let eta = if r.next_f64() < 0.5 { 0.0 } else { r.uniform(0.01, 1.0) };
    let regs = [
        ("reg/vol", RegularizerKind::Vol, rand_tensor(r, &[6, 3], -1.0, 1.0)),
        ("reg/l1_std", RegularizerKind::L1Std, rand_tensor(r, &[6, 3], -1.0, 1.0)),
        ("reg/lasso", RegularizerKind::Lasso, rand_signed(r, &[6, 3], 0.1, 1.0)),
        ("reg/st", RegularizerKind::St, rand_tensor(r, &[6, 3], -2.0, 2.0)),
    ];
    for (name, kind, z) in regs {
        cases.push((name.to_string(), Box::new(move |g: &mut Graph, v: Var| objectives::regularizer(g, kind, eta, v)), z));
    }
    for (name, kind, lo, hi) in [("loss/bce", LossKind::Bce, 0.05, 0.95), ("loss/mse", LossKind::Mse, -1.0, 1.0)] {
        let target = rand_tensor(r, &[4, 3], 0.0, 1.0);
        cases.push((name.to_string(), Box::new(move |g: &mut Graph, v: Var| {
            let t = g.constant(target.clone());
            objectives::reconstruction_loss(g, v, t, kind)
        }), rand_tensor(r, &[4, 3], lo, hi)));
    }
    cases
}

/// Finite-difference checks over `instances` random draws of every case.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<VerifyReport> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for k in 0..instances {
        let mut r = CounterRng::new(seed, k as u64);
        for (i, (name, f, x)) in gradient_cases(&mut r).into_iter().enumerate() {
            let err = finite_difference_check(&f, &x, FD_STEP)?;
            if k == 0 {
                worst.push((name, err));
            } else {
                worst[i].1 = worst[i].1.max(err);
            }
        }
    }
    let checks = worst.into_iter().map(|(n, e)| Check::below(format!("gradient/{n}"), e, 1e-4)).collect();
    Ok(VerifyReport::new("gradients", checks))
}

/// Largest singular value from an SVD oracle.
pub fn svd_norm(m: &Tensor) -> f64 {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    DMatrix::from_row_slice(r, c, m.data()).singular_values().max()
}

/// Converged dense power-iteration norm from a seeded start.
pub fn dense_norm(w: &Tensor, seed: u64) -> Result<f64> {
    let out = w.shape()[0];
    Ok(iterate_to_tolerance(|u, k| dense_spectral_norm(w, u, k), &start_vector(out, &[out], seed), CERTIFY_ITERS)?.sigma)
}

pub fn spectral_suite(dense: usize, conv: usize, seed: u64) -> Result<VerifyReport> {
    let mut worst_dense = 0.0f64;
    for k in 0..dense {
        let mut r = CounterRng::new(seed, 1000 + k as u64);
        let (rows, cols) = (1 + r.below(64) as usize, 1 + r.below(64) as usize);
        let w = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.normal()).collect())?;
        worst_dense = worst_dense.max((dense_norm(&w, k as u64)? - svd_norm(&w)).abs());
    }
    let mut worst_conv = 0.0f64;
    for k in 0..conv {
        let mut r = CounterRng::new(seed, 5000 + k as u64);
        let c = 1 + r.below(3) as usize;
        let side = [2usize, 4, 6, 8][r.below(4) as usize];
        let o = 1 + r.below(4) as usize;
        let direction = if k % 2 == 0 { ConvDirection::Forward } else { ConvDirection::Transposed };
        let shape = match direction {
            ConvDirection::Forward => [o, c, 4, 4],
            ConvDirection::Transposed => [c, o, 4, 4],
        };
        let kernel = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let op = ConvOperator::standard(&kernel, direction, [c, side, side])?;
        let est = iterate_to_tolerance(|u, k| op.power_iteration(u, k), &start_vector(op.input_len(), &[c, side, side], k as u64), CERTIFY_ITERS)?;
        worst_conv = worst_conv.max((est.sigma - svd_norm(&op.materialize()?)).abs());
    }
    Ok(VerifyReport::new(
        "spectral",
        vec![
            Check::below("spectral/dense_vs_svd", worst_dense, 1e-6),
            Check::below("spectral/conv_vs_materialized_svd", worst_conv, 1e-4),
        ],
    ))
}

/// Random PSD `MMᵀ` and diagonal cases against `Π S_ii ≥ det S`.
pub fn determinant_checks(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut worst_violation = 0.0f64;
    let mut worst_equality = 0.0f64;
    for k in 0..count {
        let mut r = CounterRng::new(seed, 9000 + k as u64);
        let d = 1 + r.below(8) as usize;
        let m = Tensor::new(vec![d, d], (0..d * d).map(|_| r.normal()).collect())?;
        let s = m.matmul(&m.transpose())?;
        let c = volume_determinant_check(&s)?;
        let rel = (c.det - c.diag_product) / c.det.abs().max(f64::MIN_POSITIVE);
        worst_violation = worst_violation.max(rel);
        let diag: Vec<f64> = (0..d).map(|_| r.uniform(0.1, 3.0)).collect();
        let mut dm = Tensor::zeros(&[d, d]);
        for (i, v) in diag.iter().enumerate() {
            dm.data_mut()[i * d + i] = *v;
        }
        let c = volume_determinant_check(&dm)?;
        worst_equality = worst_equality.max((c.diag_product - c.det).abs() / c.det.abs());
    }
    Ok(vec![
        Check::below("determinant/psd_violation_relative", worst_violation, 1e-9),
        Check::below("determinant/diagonal_equality_relative", worst_equality, 1e-12),
    ])
}

/// All singleton, pair and ascending-σ prefix prune sets on a certified model.
pub fn pruning_checks(name: &str, model: &Model, data: &Tensor) -> Result<Vec<Check>> {
    let k = model.spec().lipschitz_bound.ok_or_else(|| Error::InvalidArgument("uncertified model".into()))?;
    let a = Analyzer::new(model, data)?;
    let m = a.latent_dim();
    let mut sets = a.standard_prune_sets();
    for i in 0..m {
        for j in i + 1..m {
            sets.push(vec![i, j]);
        }
    }
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for p in &sets {
        let c = a.pruning_bound_check(p, k)?;
        if !c.pass {
            violations += 1;
        }
        if c.bound > 0.0 {
            worst_ratio = worst_ratio.max(c.delta / c.bound);
        }
    }
    Ok(vec![
        Check::equal(format!("pruning_bound/{name}/violations"), violations as f64, 0.0),
        Check::below(format!("pruning_bound/{name}/max_delta_over_bound"), worst_ratio, 1.0 + 1e-6),
    ])
}

/// Determinant inequality plus pruning bounds on briefly trained toy models.
pub fn bounds_suite(epochs: usize, seed: u64) -> Result<VerifyReport> {
    let mut checks = determinant_checks(1000, seed)?;
    let curve = gen_curve1d(50, seed)?;
    let cfg = TrainConfig { epochs, seed, record_time: false, ..TrainConfig::toy1d() };
    let (m, _) = train(build_autoencoder(&ModelSpec::toy1d(), seed)?, &curve.samples, &cfg)?;
    checks.extend(pruning_checks("toy1d", &m, &curve.samples)?);
    let surf = gen_surface2d(100, seed, 0.1)?;
    let cfg = TrainConfig { epochs, seed, learning_rate: 1e-3, record_time: false, ..TrainConfig::toy2d() };
    let (m, _) = train(build_autoencoder(&ModelSpec::toy2d(), seed)?, &surf.samples, &cfg)?;
    checks.extend(pruning_checks("toy2d", &m, &surf.samples)?);
    Ok(VerifyReport::new("bounds", checks))
}

/// Volume-penalty gradient at large η against the `(1/m)·L1` gradient.
pub fn interpolation_suite(instances: usize, seed: u64) -> Result<VerifyReport> {
    let eta = 1e4;
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut r = CounterRng::new(seed, 20_000 + k as u64);
        let sigma = rand_tensor(&mut r, &[8], 0.0, 1.0);
        let (_, gv) = value_and_grad(|g, s| objectives::volume_penalty(g, s, eta), &sigma)?;
        let (_, gl) = value_and_grad(objectives::l1_std_penalty, &sigma)?;
        worst = worst.max(gv.max_abs_diff(&gl));
    }
    Ok(VerifyReport::new("interpolation", vec![Check::below("interpolation/vol_vs_l1_grad_maxnorm", worst, 1e-3)]))
}

/// Setup of the linear-autoencoder PCA experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSetup {
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub latent_dim: usize,
    pub eta: f64,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for PcaSetup {
    fn default() -> Self {
        Self {
            eigenvalues: vec![10.0, 8.0, 6.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.05],
            n: 500,
            latent_dim: 4,
            eta: 0.01,
            seed: 0,
            train: TrainConfig {
                batch_size: 500,
                epochs: 300_000,
                learning_rate: 3e-4,
                lambda: 0.01,
                eta: 0.01,
                regularizer: RegularizerKind::Vol,
                loss: LossKind::Mse,
                record_time: false,
                power_iterations: 20,
                ..TrainConfig::default()
            },
        }
    }
}

/// Gaussian data with covariance `Q·diag(eigenvalues)·Qᵀ` for a random rotation `Q`.
pub fn gaussian_with_spectrum(n: usize, eigenvalues: &[f64], seed: u64) -> Result<Tensor> {
    let d = eigenvalues.len();
    let mut r = CounterRng::new(seed, 0x0070_6361);
    let g = DMatrix::from_fn(d, d, |_, _| r.normal());
    let q = g.qr().q();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let e: Vec<f64> = eigenvalues.iter().map(|l| l.sqrt() * r.normal()).collect();
        for i in 0..d {
            data.push((0..d).map(|k| q[(i, k)] * e[k]).sum());
        }
    }
    Tensor::new(vec![n, d], data)
}

/// Trains the linear model of a [`PcaSetup`].
pub fn run_pca_experiment(setup: &PcaSetup) -> Result<(Model, Tensor, TrainingHistory)> {
    let data = gaussian_with_spectrum(setup.n, &setup.eigenvalues, setup.seed)?;
    let spec = ModelSpec::linear(setup.eigenvalues.len(), setup.latent_dim);
    let cfg = TrainConfig { eta: setup.eta, seed: setup.seed, ..setup.train.clone() };
    let (model, history) = train(build_autoencoder(&spec, setup.seed)?, &data, &cfg)?;
    Ok((model, data, history))
}

/// Principal-component recovery and explained-reconstruction ratios.
pub fn pca_checks(model: &Model, data: &Tensor) -> Result<Vec<Check>> {
    let rep = pca_compare(model, data)?;
    let m = model.latent_dim();
    let mut checks = vec![
        Check::above("pca/min_abs_cos", rep.alignment.iter().cloned().fold(f64::INFINITY, f64::min), 0.99),
        Check::below("pca/btb_minus_identity_max", rep.btb_deviation, 0.02),
        Check::below("pca/latent_variance_relative_error", rep.max_variance_error(), 0.05),
        Check::below("pca/max_relative_residual", rep.max_relative_residual, 0.02),
    ];
    let a = Analyzer::new(model, data)?;
    let top: f64 = rep.eigenvalues[..m].iter().sum();
    let singles: Vec<f64> = (0..m).map(|i| a.induced_error(&[i], Metric::SquaredL2)).collect::<Result<_>>()?;
    let mut worst_ratio = 0.0f64;
    for i in 0..m {
        let want = rep.eigenvalues[rep.matched[i]] / top;
        let got = a.explained(&[i], Metric::SquaredL2)?;
        worst_ratio = worst_ratio.max((got - want).abs() / want);
    }
    let mut worst_add = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            let joint = a.induced_error(&[i, j], Metric::SquaredL2)?;
            let sum = singles[i] + singles[j];
            worst_add = worst_add.max((joint - sum).abs() / sum.abs());
        }
    }
    checks.push(Check::below("explained/ratio_relative_error", worst_ratio, 0.02));
    checks.push(Check::below("explained/pair_additivity_relative_error", worst_add, 0.02));
    Ok(checks)
}

pub fn pca_suite(setup: &PcaSetup) -> Result<VerifyReport> {
    let (model, data, _) = run_pca_experiment(setup)?;
    Ok(VerifyReport::new("pca", pca_checks(&model, &data)?))
}

/// A trained model with its data and history.
#[derive(Debug, Clone)]
pub struct Run {
    pub model: Model,
    pub data: Dataset,
    pub history: TrainingHistory,
}

impl Run {
    pub fn analyzer(&self) -> Result<Analyzer> {
        Analyzer::new(&self.model, &self.data.samples)
    }
}

/// Toy curve (`m = 2`) trained with `cfg`.
pub fn run_toy1d(cfg: &TrainConfig, spectral_norm: bool) -> Result<Run> {
    let data = gen_curve1d(50, cfg.seed)?;
    let spec = if spectral_norm { ModelSpec::toy1d() } else { ModelSpec::toy1d().without_spectral_norm() };
    let (model, history) = train(build_autoencoder(&spec, cfg.seed)?, &data.samples, cfg)?;
    Ok(Run { model, data, history })
}

/// Noisy toy surface (`m = 3`, noise 0.1) trained with `cfg`.
pub fn run_toy2d(cfg: &TrainConfig, spectral_norm: bool) -> Result<Run> {
    let data = gen_surface2d(100, cfg.seed, 0.1)?;
    let spec = if spectral_norm { ModelSpec::toy2d() } else { ModelSpec::toy2d().without_spectral_norm() };
    let (model, history) = train(build_autoencoder(&spec, cfg.seed)?, &data.samples, cfg)?;
    Ok(Run { model, data, history })
}

/// Mean squared error of the reconstructions and of the noisy samples
/// against the noiseless surface.
pub fn denoising_errors(run: &Run) -> Result<(f64, f64)> {
    let factors = run.data.factors.as_ref().ok_or_else(|| Error::InvalidArgument("dataset has no factors".into()))?;
    let clean = surface2d_clean(factors)?;
    let recon = run.model.reconstruct(&run.data.samples)?;
    Ok((Metric::Mse.mean_distance(&recon, &clean), Metric::Mse.mean_distance(&run.data.samples, &clean)))
}

/// Setup of a reduced circle-image experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CirclesSetup {
    pub n: usize,
    pub latent_dim: usize,
    pub train: TrainConfig,
}

impl Default for CirclesSetup {
    /// 1000 images at 16×16, 60 epochs.
    fn default() -> Self {
        Self {
            n: 1000,
            latent_dim: 16,
            train: TrainConfig {
                epochs: 60,
                learning_rate: 1e-3,
                lambda: 3e-3,
                record_time: false,
                ..TrainConfig::synthetic()
            },
        }
    }
}

pub fn run_circles(setup: &CirclesSetup) -> Result<Run> {
    let data = gen_circles(setup.n, 16, setup.train.seed)?;
    let spec = ModelSpec::conv_synthetic_small(setup.latent_dim);
    let (model, history) = train(build_autoencoder(&spec, setup.train.seed)?, &data.samples, &setup.train)?;
    Ok(Run { model, data, history })
}

pub const SUITES: [&str; 6] = ["gradients", "spectral", "bounds", "pca", "interpolation", "all"];

/// Runs a suite by name with its standard sizes.
pub fn run_suite(suite: &str, seed: u64) -> Result<VerifyReport> {
    match suite {
        "gradients" => gradient_suite(100, seed),
        "spectral" => spectral_suite(100, 20, seed),
        "bounds" => bounds_suite(2000, seed),
        "pca" => pca_suite(&PcaSetup { seed, ..PcaSetup::default() }),
        "interpolation" => interpolation_suite(100, seed),
        "all" => {
            let reports = SUITES[..5].iter().map(|s| run_suite(s, seed)).collect::<Result<Vec<_>>>()?;
            Ok(VerifyReport::merge("all", reports))
        }
        other => Err(Error::InvalidArgument(format!("unknown suite {other:?}; expected one of {SUITES:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_small() {
        let r = gradient_suite(3, 1).unwrap();
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(r.checks.len() > 30);
    }

    #[test]
    fn interpolation_and_determinants() {
        assert!(interpolation_suite(10, 0).unwrap().pass);
        assert!(determinant_checks(50, 0).unwrap().iter().all(|c| c.pass));
    }

    #[test]
    fn spectral_small() {
        let r = spectral_suite(5, 4, 3).unwrap();
        assert!(r.pass, "{:?}", r.checks);
    }

    #[test]
    fn gaussian_spectrum_matches() {
        let x = gaussian_with_spectrum(20_000, &[4.0, 1.0, 0.25], 0).unwrap();
        let p = crate::analysis::pca(&x).unwrap();
        for (got, want) in p.eigenvalues.iter().zip([4.0, 1.0, 0.25]) {
            assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
        }
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", 0).is_err());
        let r = VerifyReport::new("x", vec![Check::below("a", 1.0, 2.0), Check::above("b", 1.0, 2.0)]);
        assert!(!r.pass);
        assert!(r.to_json().contains("\"relation\": \">\""));
    }
}
