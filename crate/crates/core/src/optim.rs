//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self { step: 0, v: m.clone(), m }
    }
}

/// One Adam update of `params` in place.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step(
    params: &mut [&mut Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map(String::as_str).unwrap_or("?");
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec(), state.m[i].shape().to_vec()],
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grad: f64, steps: usize) -> (Tensor, AdamState, f64) {
        let mut p = Tensor::vector(&[1.0]);
        let mut st = AdamState::new([p.shape()]);
        let names = vec!["w".to_string()];
        let mut last = 0.0;
        for _ in 0..steps {
            let before = p.data()[0];
            adam_step(&mut [&mut p], &names, &[Tensor::vector(&[grad])], &mut st, 0.01, &AdamConfig::default()).unwrap();
            last = p.data()[0] - before;
        }
        (p, st, last)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (p, st, _) = run(0.0, 5);
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(st.m[0].data()[0], 0.0);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e3] {
            let (_, _, step) = run(g, 1);
            let want = -0.01 * g / (g.abs() + 1e-8);
            assert!((step - want).abs() < 1e-12, "{step} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_step_converges_to_lr() {
        let (_, _, step) = run(0.5, 5000);
        assert!((step.abs() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = Tensor::vector(&[0.0]);
        let mut st = AdamState::new([p.shape()]);
        let names = vec!["w".to_string()];
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &names, &[Tensor::vector(&[1.0])], &mut st, 0.1, &cfg).unwrap();
        let m1 = st.m[0].data()[0];
        adam_step(&mut [&mut p], &names, &[Tensor::vector(&[0.0])], &mut st, 0.1, &cfg).unwrap();
        assert!((st.m[0].data()[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::vector(&[0.0, 1.0]);
        let mut q = Tensor::vector(&[0.0]);
        let mut st = AdamState::new([p.shape(), q.shape()]);
        let names = vec!["a".to_string(), "decoder.0.bias".to_string()];
        let err = adam_step(
            &mut [&mut p, &mut q],
            &names,
            &[Tensor::vector(&[0.0, 0.0]), Tensor::vector(&[f64::NAN])],
            &mut st,
            0.1,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("decoder.0.bias"));
        assert_eq!(st.step, 0);
        assert_eq!(p.data(), [0.0, 1.0]);
    }
}
