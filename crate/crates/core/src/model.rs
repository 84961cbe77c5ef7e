//! Declarative autoencoder specs and the models built from them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, ConvDirection, ConvLayer, DenseLayer, NormMode};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Rows per forward chunk in the value-level `encode`/`decode`.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out: usize,
        #[serde(default)]
        spectral_norm: bool,
    },
    Conv {
        out_channels: usize,
        #[serde(default)]
        spectral_norm: bool,
    },
    Deconv {
        out_channels: usize,
        #[serde(default)]
        spectral_norm: bool,
    },
    /// Per-sample target shape.
    Reshape { shape: Vec<usize> },
    Act { activation: Activation },
}

impl LayerSpec {
    fn normalized(&self) -> Option<bool> {
        match self {
            LayerSpec::Dense { spectral_norm, .. }
            | LayerSpec::Conv { spectral_norm, .. }
            | LayerSpec::Deconv { spectral_norm, .. } => Some(*spectral_norm),
            _ => None,
        }
    }

    fn set_normalized(&mut self, on: bool) {
        match self {
            LayerSpec::Dense { spectral_norm, .. }
            | LayerSpec::Conv { spectral_norm, .. }
            | LayerSpec::Deconv { spectral_norm, .. } => *spectral_norm = on,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-sample input shape: `[d]` for vectors, `[C, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
    /// Decoder Lipschitz target `K`. `None` builds an unconstrained decoder.
    pub lipschitz_bound: Option<f64>,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

fn leaky() -> LayerSpec {
    LayerSpec::Act { activation: Activation::LeakyRelu(0.2) }
}

impl ModelSpec {
    /// Fully connected autoencoder: four hidden layers of `width` with
    /// LeakyReLU(0.2), latent size equal to the input size.
    pub fn mlp(input_dim: usize, width: usize, latent_dim: usize) -> Self {
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for _ in 0..4 {
            encoder.push(LayerSpec::Dense { out: width, spectral_norm: false });
            encoder.push(leaky());
            decoder.push(LayerSpec::Dense { out: width, spectral_norm: true });
            decoder.push(leaky());
        }
        encoder.push(LayerSpec::Dense { out: latent_dim, spectral_norm: false });
        decoder.push(LayerSpec::Dense { out: input_dim, spectral_norm: true });
        Self { input_shape: vec![input_dim], latent_dim, lipschitz_bound: Some(1.0), encoder, decoder }
    }

    /// 2 → 32×4 → 2 toy curve model.
    pub fn toy1d() -> Self {
        Self::mlp(2, 32, 2)
    }

    /// 3 → 128×4 → 3 toy surface model.
    pub fn toy2d() -> Self {
        Self::mlp(3, 128, 3)
    }

    /// `e(x) = Ax + a`, `g(z) = Bz + b` with a normalized `B`.
    pub fn linear(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_shape: vec![input_dim],
            latent_dim,
            lipschitz_bound: Some(1.0),
            encoder: vec![LayerSpec::Dense { out: latent_dim, spectral_norm: false }],
            decoder: vec![LayerSpec::Dense { out: input_dim, spectral_norm: true }],
        }
    }

    /// Convolutional autoencoder with k=4, s=2, p=1 layers. `widths` lists the
    /// encoder channel counts; the decoder mirrors them and ends in a Sigmoid.
    pub fn conv(channels: usize, size: usize, widths: &[usize], latent_dim: usize) -> Result<Self> {
        let scale = 1usize << widths.len();
        if widths.is_empty() || !size.is_multiple_of(scale) {
            return Err(Error::InvalidSpec(format!(
                "image size {size} must be divisible by 2^{} for {} conv layers",
                widths.len(),
                widths.len()
            )));
        }
        let last = *widths.last().unwrap();
        let side = size / scale;
        let flat = last * side * side;
        let mut encoder = Vec::new();
        for &w in widths {
            encoder.push(LayerSpec::Conv { out_channels: w, spectral_norm: false });
            encoder.push(leaky());
        }
        encoder.push(LayerSpec::Reshape { shape: vec![flat] });
        encoder.push(LayerSpec::Dense { out: latent_dim, spectral_norm: false });

        let mut decoder = vec![
            LayerSpec::Dense { out: flat, spectral_norm: true },
            LayerSpec::Reshape { shape: vec![last, side, side] },
        ];
        for &w in widths.iter().rev().skip(1) {
            decoder.push(LayerSpec::Deconv { out_channels: w, spectral_norm: true });
            decoder.push(leaky());
        }
        decoder.push(LayerSpec::Deconv { out_channels: channels, spectral_norm: true });
        decoder.push(LayerSpec::Act { activation: Activation::Sigmoid });
        Ok(Self { input_shape: vec![channels, size, size], latent_dim, lipschitz_bound: Some(1.0), encoder, decoder })
    }

    /// The 32×32×3 synthetic-image architecture.
    pub fn conv_synthetic() -> Self {
        Self::conv(3, 32, &[32, 64, 128, 256], 50).expect("valid preset")
    }

    /// Reduced 16×16×3 variant of [`ModelSpec::conv_synthetic`].
    pub fn conv_synthetic_small(latent_dim: usize) -> Self {
        Self::conv(3, 16, &[32, 64, 128], latent_dim).expect("valid preset")
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy1d" => Ok(Self::toy1d()),
            "toy2d" => Ok(Self::toy2d()),
            "conv_synthetic" => Ok(Self::conv_synthetic()),
            "conv_synthetic_small" => Ok(Self::conv_synthetic_small(50)),
            other => Err(Error::InvalidSpec(format!("unknown architecture preset {other:?}"))),
        }
    }

    /// Architecture `arch` sized for samples of `sample_shape`, optionally
    /// with a different latent size. `linear` defaults to `min(d, 2)` codes.
    pub fn for_data(arch: &str, latent_dim: Option<usize>, sample_shape: &[usize]) -> Result<Self> {
        let flat: usize = sample_shape.iter().product();
        let spec = match (arch, latent_dim) {
            ("toy1d", None) => Self::toy1d(),
            ("toy1d", Some(m)) => Self::mlp(2, 32, m),
            ("toy2d", None) => Self::toy2d(),
            ("toy2d", Some(m)) => Self::mlp(3, 128, m),
            ("conv_synthetic", m) => Self::conv(3, 32, &[32, 64, 128, 256], m.unwrap_or(50))?,
            ("conv_synthetic_small", m) => Self::conv_synthetic_small(m.unwrap_or(50)),
            ("linear", m) => Self::linear(flat, m.unwrap_or(flat.min(2))),
            (other, _) => return Err(Error::InvalidSpec(format!("unknown architecture {other:?}"))),
        };
        if spec.input_shape != sample_shape {
            return Err(Error::InvalidSpec(format!(
                "{arch} expects samples of shape {:?}, data has {sample_shape:?}",
                spec.input_shape
            )));
        }
        Ok(spec)
    }

    /// Same architecture with every decoder normalization removed.
    pub fn without_spectral_norm(mut self) -> Self {
        self.decoder.iter_mut().for_each(|l| l.set_normalized(false));
        self.lipschitz_bound = None;
        self
    }

    /// Checks layer wiring and returns the per-sample output shape of each stack.
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidSpec("latent_dim must be positive".into()));
        }
        match self.lipschitz_bound {
            Some(k) if !(k > 0.0 && k.is_finite()) => {
                return Err(Error::InvalidSpec(format!("lipschitz_bound {k} must be positive")));
            }
            _ => {}
        }
        let want = self.lipschitz_bound.is_some();
        if self.decoder.iter().filter_map(LayerSpec::normalized).any(|n| n != want) {
            return Err(Error::InvalidSpec(format!(
                "decoder normalization flags must all be {want} when lipschitz_bound is {:?}",
                self.lipschitz_bound
            )));
        }
        let z = stack_output(&self.encoder, &self.input_shape, "encoder")?;
        if z != [self.latent_dim] {
            return Err(Error::InvalidSpec(format!("encoder output {z:?} != latent_dim {}", self.latent_dim)));
        }
        let out = stack_output(&self.decoder, &[self.latent_dim], "decoder")?;
        if out != self.input_shape {
            return Err(Error::InvalidSpec(format!(
                "decoder output {out:?} != input shape {:?}",
                self.input_shape
            )));
        }
        Ok(())
    }
}

fn conv_out(spec: &LayerSpec, shape: &[usize], stack: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidSpec(format!("{stack}: {spec:?} cannot follow per-sample shape {shape:?}"));
    match spec {
        LayerSpec::Dense { out, .. } => {
            if shape.len() != 1 || *out == 0 {
                return Err(bad());
            }
            Ok(vec![*out])
        }
        LayerSpec::Conv { out_channels, .. } | LayerSpec::Deconv { out_channels, .. } => {
            if shape.len() != 3 || *out_channels == 0 {
                return Err(bad());
            }
            let transposed = matches!(spec, LayerSpec::Deconv { .. });
            let (h, w) = (shape[1], shape[2]);
            let k = crate::layers::KERNEL;
            let (s, p) = (crate::layers::STRIDE, crate::layers::PADDING);
            let side = |n: usize| -> Option<usize> {
                if transposed {
                    ((n - 1) * s + k).checked_sub(2 * p)
                } else {
                    (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
                }
            };
            match (side(h), side(w)) {
                (Some(a), Some(b)) if a > 0 && b > 0 && h > 0 && w > 0 => Ok(vec![*out_channels, a, b]),
                _ => Err(bad()),
            }
        }
        LayerSpec::Reshape { shape: target } => {
            if target.iter().product::<usize>() != shape.iter().product::<usize>() {
                return Err(bad());
            }
            Ok(target.clone())
        }
        LayerSpec::Act { .. } => Ok(shape.to_vec()),
    }
}

fn stack_output(layers: &[LayerSpec], input: &[usize], stack: &str) -> Result<Vec<usize>> {
    layers.iter().try_fold(input.to_vec(), |s, l| conv_out(l, &s, stack))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    Reshape(Vec<usize>),
    Act(Activation),
}

impl Layer {
    fn param_count(&self) -> usize {
        match self {
            Layer::Dense(_) | Layer::Conv(_) => 2,
            _ => 0,
        }
    }

    fn refresh(&mut self, mode: NormMode) -> Result<()> {
        match self {
            Layer::Dense(l) => l.refresh(mode),
            Layer::Conv(l) => l.refresh(mode),
            _ => Ok(()),
        }
    }

    fn rescale_normalized(&mut self) {
        match self {
            Layer::Dense(l) => l.rescale_normalized(),
            Layer::Conv(l) => l.rescale_normalized(),
            _ => {}
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var> {
        match self {
            Layer::Dense(l) => l.forward(g, x, params[0], params[1]),
            Layer::Conv(l) => l.forward(g, x, params[0], params[1]),
            Layer::Reshape(shape) => {
                let mut full = vec![g.shape(x)[0]];
                full.extend_from_slice(shape);
                g.reshape(x, &full)
            }
            Layer::Act(a) => Ok(a.apply(g, x)),
        }
    }
}

/// An autoencoder built from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

/// Parameter leaves of a model bound into a graph, in [`Model::parameters`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    split: usize,
}

fn build_stack(layers: &[LayerSpec], input: &[usize], rng: &mut CounterRng) -> Result<Vec<Layer>> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(layers.len());
    for spec in layers {
        let next = conv_out(spec, &shape, "stack")?;
        out.push(match spec {
            LayerSpec::Dense { out, spectral_norm } => Layer::Dense(DenseLayer::init(shape[0], *out, *spectral_norm, rng)?),
            LayerSpec::Conv { out_channels, spectral_norm } => Layer::Conv(ConvLayer::init(
                ConvDirection::Forward,
                [shape[0], shape[1], shape[2]],
                *out_channels,
                *spectral_norm,
                rng,
            )?),
            LayerSpec::Deconv { out_channels, spectral_norm } => Layer::Conv(ConvLayer::init(
                ConvDirection::Transposed,
                [shape[0], shape[1], shape[2]],
                *out_channels,
                *spectral_norm,
                rng,
            )?),
            LayerSpec::Reshape { shape } => Layer::Reshape(shape.clone()),
            LayerSpec::Act { activation } => Layer::Act(*activation),
        });
        shape = next;
    }
    Ok(out)
}

/// Initializes a model from `spec`; identical seeds give identical parameters.
pub fn build_autoencoder(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut enc_rng = CounterRng::new(seed, 0x656e63);
    let mut dec_rng = CounterRng::new(seed, 0x646563);
    let encoder = build_stack(&spec.encoder, &spec.input_shape, &mut enc_rng)?;
    let decoder = build_stack(&spec.decoder, &[spec.latent_dim], &mut dec_rng)?;
    Ok(Model { spec: spec.clone(), encoder, decoder })
}

fn stack_params<'a>(prefix: &str, layers: &'a [Layer], out: &mut Vec<(String, &'a Tensor)>) {
    for (i, l) in layers.iter().enumerate() {
        match l {
            Layer::Dense(d) => {
                out.push((format!("{prefix}.{i}.weight"), &d.weight));
                out.push((format!("{prefix}.{i}.bias"), &d.bias));
            }
            Layer::Conv(c) => {
                out.push((format!("{prefix}.{i}.kernel"), &c.kernel));
                out.push((format!("{prefix}.{i}.bias"), &c.bias));
            }
            _ => {}
        }
    }
}

fn stack_params_mut<'a>(layers: &'a mut [Layer], out: &mut Vec<&'a mut Tensor>) {
    for l in layers.iter_mut() {
        match l {
            Layer::Dense(d) => {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
            Layer::Conv(c) => {
                out.push(&mut c.kernel);
                out.push(&mut c.bias);
            }
            _ => {}
        }
    }
}

fn run_stack(layers: &[Layer], g: &mut Graph, mut x: Var, vars: &[Var]) -> Result<Var> {
    let mut at = 0;
    for l in layers {
        let n = l.param_count();
        x = l.forward(g, x, &vars[at..at + n])?;
        at += n;
    }
    Ok(x)
}

impl Model {
    /// Rebuilds a model from its spec and layers; `layers` must match the spec.
    pub fn from_parts(spec: ModelSpec, encoder: Vec<Layer>, decoder: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let probe = build_autoencoder(&spec, 0)?;
        let shapes = |m: &Model| m.parameters().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect::<Vec<_>>();
        let model = Self { spec, encoder, decoder };
        if shapes(&model) != shapes(&probe) {
            return Err(Error::InvalidSpec("layer parameters do not match the spec".into()));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    /// Named parameters, encoder first.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        stack_params("encoder", &self.encoder, &mut out);
        stack_params("decoder", &self.decoder, &mut out);
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters().into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        stack_params_mut(&mut self.encoder, &mut out);
        stack_params_mut(&mut self.decoder, &mut out);
        out
    }

    /// Spectral state of every normalized decoder layer, keyed by layer index.
    pub fn spectral_states(&self) -> Vec<(usize, &crate::layers::SpectralState)> {
        self.decoder
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Dense(d) => d.spectral.as_ref().map(|s| (i, s)),
                Layer::Conv(c) => c.spectral.as_ref().map(|s| (i, s)),
                _ => None,
            })
            .collect()
    }

    /// Refreshes all normalization estimates.
    pub fn refresh(&mut self, mode: NormMode) -> Result<()> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).try_for_each(|l| l.refresh(mode))
    }

    /// Rescales every normalized weight to unit estimated norm; the forward
    /// pass is unchanged.
    pub fn rescale_normalized(&mut self) {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).for_each(Layer::rescale_normalized);
    }

    /// Binds parameters as graph leaves (`trainable` selects param vs constant).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let params = self.parameters();
        let split = params.iter().filter(|(n, _)| n.starts_with("encoder.")).count();
        let vars = params
            .into_iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars, split }
    }

    fn check_input(&self, shape: &[usize], expected: &[usize], op: &'static str) -> Result<()> {
        if shape.len() != expected.len() + 1 || shape[1..] != *expected || shape[0] == 0 {
            let mut want = vec![0];
            want.extend_from_slice(expected);
            return Err(Error::ShapeMismatch { op, shapes: vec![shape.to_vec(), want] });
        }
        Ok(())
    }

    pub fn encode_graph(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.shape(x), &self.spec.input_shape, "encode")?;
        run_stack(&self.encoder, g, x, &bound.vars[..bound.split])
    }

    pub fn decode_graph(&self, g: &mut Graph, bound: &Bound, z: Var) -> Result<Var> {
        self.check_input(g.shape(z), &[self.spec.latent_dim], "decode")?;
        let z = match self.spec.lipschitz_bound {
            Some(k) if k != 1.0 => g.scale(z, k)?,
            _ => z,
        };
        run_stack(&self.decoder, g, z, &bound.vars[bound.split..])
    }

    fn chunked(&self, x: &Tensor, f: impl Fn(&mut Graph, &Bound, Var) -> Result<Var>) -> Result<Tensor> {
        let n = x.shape()[0];
        let row = x.len() / n.max(1);
        let mut out_shape = Vec::new();
        let mut data = Vec::new();
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, x.data()[start * row..end * row].to_vec())?;
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let xv = g.constant(chunk);
            let y = f(&mut g, &bound, xv)?;
            out_shape = g.shape(y).to_vec();
            data.extend_from_slice(g.value(y).data());
        }
        out_shape[0] = n;
        Tensor::new(out_shape, data)
    }

    /// Latent codes `N×m` for inputs `N×input_shape`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape(), &self.spec.input_shape, "encode")?;
        self.chunked(x, |g, b, v| self.encode_graph(g, b, v))
    }

    /// Reconstructions from codes, using the current normalization estimates.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input(z.shape(), &[self.spec.latent_dim], "decode")?;
        self.chunked(z, |g, b, v| self.decode_graph(g, b, v))
    }

    /// Refreshes the normalization estimates per `mode`, then decodes.
    pub fn decode_with_mode(&mut self, z: &Tensor, mode: NormMode) -> Result<Tensor> {
        self.refresh(mode)?;
        self.decode(z)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }

    /// Upper bound on the decoder Lipschitz constant: `K` times the product of
    /// certified layer norms and activation constants.
    pub fn decoder_lipschitz_certificate(&self) -> Result<f64> {
        let mut bound = self.spec.lipschitz_bound.unwrap_or(1.0);
        for l in &self.decoder {
            bound *= match l {
                Layer::Dense(d) => d.certified_norm()?,
                Layer::Conv(c) => c.certified_norm()?,
                Layer::Reshape(_) => 1.0,
                Layer::Act(a) => a.lipschitz(),
            };
        }
        Ok(bound)
    }
}
