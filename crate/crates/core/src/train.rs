//! Training configuration, the minibatch loop and per-epoch history.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::NormMode;
use crate::model::Model;
use crate::objectives::{reconstruction_loss, regularizer, total_loss, LossKind, RegularizerKind};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// Linear ramp reaching the target λ at the end of epoch `epochs`.
    Warmup { epochs: usize },
}

impl LambdaSchedule {
    /// Warmup over 10% of `total_epochs`.
    pub fn default_warmup(total_epochs: usize) -> Self {
        Self::Warmup { epochs: (total_epochs / 10).max(1) }
    }

    /// λ used during 0-based `epoch`.
    pub fn lambda_at(&self, target: f64, epoch: usize) -> f64 {
        match *self {
            Self::Constant => target,
            Self::Warmup { epochs } => target * ((epoch + 1) as f64 / epochs.max(1) as f64).min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub eta: f64,
    pub regularizer: RegularizerKind,
    pub loss: LossKind,
    pub seed: u64,
    pub lambda_schedule: LambdaSchedule,
    /// When set, `lambda` is a reference value for this latent size and is
    /// scaled by `m / lambda_ref_dim`.
    pub lambda_ref_dim: Option<usize>,
    pub adam: AdamConfig,
    /// Record wall time per epoch; when off the `seconds` column is 0.
    pub record_time: bool,
    /// Power-iteration steps per batch for normalized layers.
    pub power_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 100,
            learning_rate: 1e-3,
            lambda: 1e-3,
            eta: 0.0,
            regularizer: RegularizerKind::Vol,
            loss: LossKind::Mse,
            seed: 0,
            lambda_schedule: LambdaSchedule::Constant,
            lambda_ref_dim: None,
            adam: AdamConfig::default(),
            record_time: true,
            power_iterations: 1,
        }
    }
}

impl TrainConfig {
    /// Toy curve hyperparameters.
    pub fn toy1d() -> Self {
        Self { batch_size: 50, epochs: 10_000, learning_rate: 1e-3, lambda: 1e-3, ..Self::default() }
    }

    /// Toy surface hyperparameters, with λ warmed up over the first 10% of epochs.
    pub fn toy2d() -> Self {
        Self {
            batch_size: 100,
            epochs: 10_000,
            learning_rate: 1e-4,
            lambda: 1e-2,
            lambda_schedule: LambdaSchedule::default_warmup(10_000),
            ..Self::default()
        }
    }

    /// Synthetic image hyperparameters.
    pub fn synthetic() -> Self {
        Self {
            batch_size: 100,
            epochs: 400,
            learning_rate: 1e-4,
            lambda: 1e-3,
            eta: 1.0,
            loss: LossKind::Bce,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy1d" => Ok(Self::toy1d()),
            "toy2d" => Ok(Self::toy2d()),
            "synthetic" | "conv_synthetic" | "conv_synthetic_small" => Ok(Self::synthetic()),
            other => Err(Error::InvalidArgument(format!("unknown training preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be >= 2", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("lambda {} and eta {} must be finite and >= 0", self.lambda, self.eta));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid adam parameters {a:?}"));
        }
        if let LambdaSchedule::Warmup { epochs: 0 } = self.lambda_schedule {
            return bad("warmup epochs must be positive".into());
        }
        if self.lambda_ref_dim == Some(0) {
            return bad("lambda_ref_dim must be positive".into());
        }
        if self.power_iterations == 0 {
            return bad("power_iterations must be positive".into());
        }
        Ok(())
    }

    pub fn norm_mode(&self) -> NormMode {
        match self.power_iterations {
            1 => NormMode::Train,
            k => NormMode::Steps(k),
        }
    }

    /// Target λ for a model with `latent_dim` codes.
    pub fn effective_lambda(&self, latent_dim: usize) -> f64 {
        match self.lambda_ref_dim {
            Some(r) => self.lambda * latent_dim as f64 / r as f64,
            None => self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon_loss: f64,
    pub reg_value: f64,
    pub total_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "epoch,recon_loss,reg_value,total_loss,seconds";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.recon_loss, r.reg_value, r.total_loss, r.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Format("history csv header mismatch".into()));
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Format(format!("bad history line {l:?}")))
                };
                Ok(EpochRecord {
                    epoch: num(0)? as usize,
                    recon_loss: num(1)?,
                    reg_value: num(2)?,
                    total_loss: num(3)?,
                    seconds: num(4)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

/// Minibatch index lists for one epoch; a trailing single-sample batch is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let perm = CounterRng::new(seed, SHUFFLE_STREAM ^ epoch as u64).permutation(n);
    perm.chunks(batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Trains `model` on `data` (leading axis indexes samples).
pub fn train(model: Model, data: &Tensor, cfg: &TrainConfig) -> Result<(Model, TrainingHistory)> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    mut model: Model,
    data: &Tensor,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainingHistory)> {
    cfg.validate()?;
    let n = data.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("dataset needs at least 2 samples, got {n}")));
    }
    let mut want = vec![n];
    want.extend_from_slice(&model.spec().input_shape);
    if data.shape() != want {
        return Err(Error::ShapeMismatch { op: "train", shapes: vec![data.shape().to_vec(), want] });
    }
    let names = model.parameter_names();
    let mut state = AdamState::new(model.parameters().iter().map(|(_, t)| t.shape()));
    let target = cfg.effective_lambda(model.latent_dim());
    let mut history = TrainingHistory::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lambda = cfg.lambda_schedule.lambda_at(target, epoch);
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
        let (mut sj, mut sr, mut sl) = (0.0, 0.0, 0.0);
        for (bi, idx) in batches.iter().enumerate() {
            let diverged = |detail: String| Error::Diverged { epoch, batch: bi, detail };
            model.refresh(cfg.norm_mode())?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let x = g.constant(data.select_rows(idx));
            let z = model.encode_graph(&mut g, &bound, x)?;
            let r = regularizer(&mut g, cfg.regularizer, cfg.eta, z).map_err(|e| diverged(e.to_string()))?;
            let xh = model.decode_graph(&mut g, &bound, z)?;
            let j = reconstruction_loss(&mut g, xh, x, cfg.loss)?;
            let l = total_loss(&mut g, j, r, lambda)?;
            let (jv, rv, lv) = (g.value(j).item(), g.value(r).item(), g.value(l).item());
            if !lv.is_finite() {
                return Err(diverged(format!("loss {lv} (recon {jv}, reg {rv})")));
            }
            let mut grads = g.backward(l)?;
            let grads: Vec<Tensor> = bound.vars.iter().map(|v| grads.take(*v)).collect();
            adam_step(&mut model.parameters_mut(), &names, &grads, &mut state, cfg.learning_rate, &cfg.adam)
                .map_err(|e| diverged(e.to_string()))?;
            model.rescale_normalized();
            sj += jv;
            sr += rv;
            sl += lv;
        }
        let k = batches.len().max(1) as f64;
        let rec = EpochRecord {
            epoch,
            recon_loss: sj / k,
            reg_value: sr / k,
            total_loss: sl / k,
            seconds: if cfg.record_time { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&rec);
        history.records.push(rec);
    }
    model.refresh(NormMode::Eval)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_autoencoder, ModelSpec};

    fn toy_data(n: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = -0.5 + i as f64 / (n - 1) as f64;
                vec![x, 10.0 * x * (x - 0.4) * (x + 0.35)]
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn batches_cover_and_drop_singletons() {
        let b = epoch_batches(101, 50, 3, 0);
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        assert_eq!(all.len(), 100);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_ne!(epoch_batches(101, 50, 3, 1), b);
        assert_eq!(epoch_batches(101, 50, 3, 0), b);
        assert_eq!(epoch_batches(7, 3, 0, 0).iter().map(Vec::len).collect::<Vec<_>>(), [3, 3]);
    }

    #[test]
    fn schedule_reaches_target() {
        let s = LambdaSchedule::Warmup { epochs: 10 };
        assert!((s.lambda_at(1.0, 0) - 0.1).abs() < 1e-15);
        assert_eq!(s.lambda_at(1.0, 9), 1.0);
        assert_eq!(s.lambda_at(1.0, 50), 1.0);
        assert_eq!(LambdaSchedule::Constant.lambda_at(0.3, 0), 0.3);
        assert_eq!(LambdaSchedule::default_warmup(1000), LambdaSchedule::Warmup { epochs: 100 });
    }

    #[test]
    fn lambda_scaling_by_latent_dim() {
        let mut c = TrainConfig { lambda: 0.01, ..TrainConfig::default() };
        assert_eq!(c.effective_lambda(7), 0.01);
        c.lambda_ref_dim = Some(7);
        assert_eq!(c.effective_lambda(7), 0.01);
        assert!((c.effective_lambda(14) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        for c in [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { lambda: f64::NAN, ..Default::default() },
            TrainConfig { adam: AdamConfig { beta1: 1.0, ..Default::default() }, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy_data(50);
        let cfg = TrainConfig { epochs: 200, batch_size: 25, record_time: false, ..TrainConfig::toy1d() };
        let run = || train(build_autoencoder(&ModelSpec::toy1d(), 5).unwrap(), &data, &cfg).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1.to_csv(), h2.to_csv());
        assert_eq!(m1, m2);
        assert_eq!(h1.len(), 200);
        assert!(h1.last().unwrap().recon_loss < h1.records[0].recon_loss);
        assert!(m1.decoder_lipschitz_certificate().unwrap() <= 1.0 + 1e-2);
        assert_eq!(TrainingHistory::from_csv(&h1.to_csv()).unwrap(), h1);
    }

    #[test]
    fn divergence_reports_context() {
        let data = toy_data(10).map(|v| v * 1e200);
        let cfg = TrainConfig { epochs: 3, batch_size: 5, ..TrainConfig::toy1d() };
        let err = train(build_autoencoder(&ModelSpec::toy1d(), 0).unwrap(), &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, batch: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_datasets() {
        let m = build_autoencoder(&ModelSpec::toy1d(), 0).unwrap();
        assert!(train(m.clone(), &Tensor::zeros(&[1, 2]), &TrainConfig::default()).is_err());
        assert!(train(m, &Tensor::zeros(&[5, 3]), &TrainConfig::default()).is_err());
    }
}
