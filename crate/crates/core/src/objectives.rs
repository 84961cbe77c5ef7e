//! Reconstruction losses, latent regularizers and the combined objective.
//!
//! `vol` and `l1_std` act on the batch STD vector of the latent codes;
//! `lasso` and `st` act on the codes themselves, averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Divisor, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to the variance before the square root inside the STD.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Prediction clamp used by the binary cross entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    Vol,
    L1Std,
    Lasso,
    St,
    None,
}

impl std::str::FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vol" => Self::Vol,
            "l1" | "l1_std" => Self::L1Std,
            "lasso" => Self::Lasso,
            "st" => Self::St,
            "none" => Self::None,
            other => return Err(Error::InvalidArgument(format!("unknown regularizer {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// Supplement added to each STD by the volume penalty.
    pub eta: f64,
    pub lambda: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, eta: f64, lambda: f64) -> Result<Self> {
        if !(eta >= 0.0) || !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta {eta} and lambda {lambda} must be >= 0")));
        }
        Ok(Self { kind, eta, lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mse,
    /// Mean per-sample Euclidean distance (reporting metric).
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bce" => Self::Bce,
            "mse" => Self::Mse,
            "l2" => Self::L2,
            other => return Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        })
    }
}

fn check_batch(g: &Graph, z: Var) -> Result<()> {
    let s = g.shape(z);
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "latent statistics need a batch×m matrix with batch >= 2, got {s:?}"
        )));
    }
    Ok(())
}

/// Per-dimension sample STD (divisor N-1) of a `batch×m` code matrix.
pub fn latent_std(g: &mut Graph, z: Var) -> Result<Var> {
    check_batch(g, z)?;
    let var = g.variance(z, 0, Divisor::NMinusOne)?;
    let var = g.clamp(var, VARIANCE_FLOOR, f64::INFINITY);
    g.sqrt(var)
}

/// Geometric mean of `σ_i + η`, evaluated as `exp(mean(log(σ_i + η)))`.
pub fn volume_penalty(g: &mut Graph, sigma: Var, eta: f64) -> Result<Var> {
    if let Some(bad) = g.value(sigma).data().iter().find(|s| !(**s + eta > 0.0)) {
        return Err(Error::Domain { op: "volume_penalty", detail: format!("sigma {bad} + eta {eta} <= 0") });
    }
    let shifted = g.add_scalar(sigma, eta)?;
    let logs = g.log(shifted)?;
    let mean = g.mean(logs, None)?;
    Ok(g.exp(mean))
}

/// `(1/m)·‖σ‖₁`.
pub fn l1_std_penalty(g: &mut Graph, sigma: Var) -> Result<Var> {
    let a = g.abs(sigma);
    g.mean(a, None)
}

/// Mean absolute code value.
pub fn lasso_penalty(g: &mut Graph, z: Var) -> Result<Var> {
    let a = g.abs(z);
    g.mean(a, None)
}

/// Mean of `log(1 + z²)` (negative log of a Student-t density, up to constants).
pub fn st_penalty(g: &mut Graph, z: Var) -> Result<Var> {
    let sq = g.square(z);
    let shifted = g.add_scalar(sq, 1.0)?;
    let logs = g.log(shifted)?;
    g.mean(logs, None)
}

/// The configured regularizer on a batch of codes.
pub fn regularizer(g: &mut Graph, kind: RegularizerKind, eta: f64, z: Var) -> Result<Var> {
    match kind {
        RegularizerKind::Vol => {
            let s = latent_std(g, z)?;
            volume_penalty(g, s, eta)
        }
        RegularizerKind::L1Std => {
            let s = latent_std(g, z)?;
            l1_std_penalty(g, s)
        }
        RegularizerKind::Lasso => lasso_penalty(g, z),
        RegularizerKind::St => st_penalty(g, z),
        RegularizerKind::None => Ok(g.scalar(0.0)),
    }
}

fn flatten_batch(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let n = s.first().copied().unwrap_or(1);
    let rest = s.iter().skip(1).product::<usize>();
    g.reshape(x, &[n, rest])
}

/// Reconstruction loss of `x_hat` against the targets `x`.
pub fn reconstruction_loss(g: &mut Graph, x_hat: Var, x: Var, kind: LossKind) -> Result<Var> {
    if g.shape(x_hat) != g.shape(x) {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_loss",
            shapes: vec![g.shape(x_hat).to_vec(), g.shape(x).to_vec()],
        });
    }
    match kind {
        LossKind::Bce => {
            if let Some(bad) = g.value(x).data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain { op: "bce", detail: format!("target {bad} outside [0, 1]") });
            }
            let p = g.clamp(x_hat, BCE_CLAMP, 1.0 - BCE_CLAMP);
            let log_p = g.log(p)?;
            let neg = g.scale(p, -1.0)?;
            let q = g.add_scalar(neg, 1.0)?;
            let log_q = g.log(q)?;
            let x_neg = g.scale(x, -1.0)?;
            let one_minus_x = g.add_scalar(x_neg, 1.0)?;
            let a = g.mul(x, log_p)?;
            let b = g.mul(one_minus_x, log_q)?;
            let s = g.add(a, b)?;
            let m = g.mean(s, None)?;
            g.scale(m, -1.0)
        }
        LossKind::Mse => {
            let d = g.sub(x_hat, x)?;
            let sq = g.square(d);
            g.mean(sq, None)
        }
        LossKind::L2 => {
            let d = g.sub(x_hat, x)?;
            let d = flatten_batch(g, d)?;
            let n = g.l2norm(d, 1)?;
            g.mean(n, None)
        }
    }
}

/// `J + λ·R`.
pub fn total_loss(g: &mut Graph, recon: Var, reg: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    let weighted = g.scale(reg, lambda)?;
    g.add(recon, weighted)
}

/// Plain-value volume penalty.
pub fn volume_penalty_value(sigma: &[f64], eta: f64) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::vector(sigma));
    let v = volume_penalty(&mut g, s, eta)?;
    Ok(g.value(v).item())
}

/// Gradient of the volume penalty with respect to `σ`, in closed form:
/// `∂/∂σ_i = V / (m·(σ_i + η))`.
pub fn volume_penalty_grad(sigma: &[f64], eta: f64) -> Result<Vec<f64>> {
    let v = volume_penalty_value(sigma, eta)?;
    let m = sigma.len() as f64;
    Ok(sigma.iter().map(|s| v / (m * (s + eta))).collect())
}

/// Per-coordinate sample STD (divisor n-1) of an `n×d` point set.
pub fn uniform_point_set_std(points: &Tensor) -> Result<Vec<f64>> {
    if points.rank() != 2 || points.shape()[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "point set must be n×d with n >= 2, got {:?}",
            points.shape()
        )));
    }
    let (n, d) = (points.shape()[0], points.shape()[1]);
    let data = points.data();
    Ok((0..d)
        .map(|j| {
            let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
            let ss = (0..n).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>();
            (ss / (n as f64 - 1.0)).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::value_and_grad;
    use crate::rng::CounterRng;

    fn std_of(rows: &[Vec<f64>]) -> Vec<f64> {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(rows).unwrap());
        let s = latent_std(&mut g, z).unwrap();
        g.value(s).data().to_vec()
    }

    #[test]
    fn latent_std_examples() {
        let s = std_of(&[vec![1.0], vec![1.0], vec![1.0]]);
        assert!(s[0] <= 1e-6, "floor keeps sigma at sqrt(1e-12)");
        let s = std_of(&[vec![0.0], vec![2.0]]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15);
        let mut g = Graph::new();
        let one = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        assert!(latent_std(&mut g, one).is_err());
    }

    #[test]
    fn latent_std_matches_covariance_diagonal() {
        let mut r = CounterRng::new(3, 0);
        let (n, m) = (64, 5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.normal()).collect()).collect();
        let s = std_of(&rows);
        for j in 0..m {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let cov = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / (n - 1) as f64;
            assert!((s[j] - cov.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn volume_examples() {
        assert!((volume_penalty_value(&[0.0, 0.0, 0.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((volume_penalty_value(&[2.0, 2.0, 2.0], 0.0).unwrap() - 2.0).abs() < 1e-14);
        assert!((volume_penalty_value(&[1.0, 3.0], 1.0).unwrap() - 8f64.sqrt()).abs() < 1e-14);
        assert!(matches!(
            volume_penalty_value(&[0.0, 1.0], 0.0),
            Err(Error::Domain { op: "volume_penalty", .. })
        ));
    }

    #[test]
    fn volume_gradient_matches_closed_form() {
        let sigma = [0.3, 0.9, 0.05, 1.7];
        let (_, grad) = value_and_grad(|g, s| volume_penalty(g, s, 0.1), &Tensor::vector(&sigma)).unwrap();
        let closed = volume_penalty_grad(&sigma, 0.1).unwrap();
        for (a, b) in grad.data().iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn other_penalties() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::vector(&[1.0, 3.0]));
        let v = l1_std_penalty(&mut g, s).unwrap();
        assert_eq!(g.value(v).item(), 2.0);
        let z = g.constant(Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap());
        let v = lasso_penalty(&mut g, z).unwrap();
        assert_eq!(g.value(v).item(), 1.5);
        let z0 = g.constant(Tensor::zeros(&[1, 2]));
        let v = st_penalty(&mut g, z0).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
        let none = regularizer(&mut g, RegularizerKind::None, 0.0, z).unwrap();
        assert_eq!(g.value(none).item(), 0.0);
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.2, 0.7], vec![0.1, 0.4]]).unwrap());
        let mse = reconstruction_loss(&mut g, x, x, LossKind::Mse).unwrap();
        assert_eq!(g.value(mse).item(), 0.0);

        let half = g.constant(Tensor::full(&[2, 3], 0.5));
        let ones = g.constant(Tensor::full(&[2, 3], 1.0));
        let bce = reconstruction_loss(&mut g, half, ones, LossKind::Bce).unwrap();
        assert!((g.value(bce).item() - 2f64.ln()).abs() < 1e-12);

        let a = g.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap());
        let l2 = reconstruction_loss(&mut g, a, b, LossKind::L2).unwrap();
        assert!((g.value(l2).item() - 1.0).abs() < 1e-15);

        let bad = g.constant(Tensor::full(&[2, 3], 1.5));
        assert!(reconstruction_loss(&mut g, half, bad, LossKind::Bce).is_err());
        assert!(reconstruction_loss(&mut g, half, x, LossKind::Mse).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let mut g = Graph::new();
        let j = g.scalar(1.0);
        let r = g.scalar(2.0);
        let t = total_loss(&mut g, j, r, 0.5).unwrap();
        assert_eq!(g.value(t).item(), 2.0);
        let t = total_loss(&mut g, j, r, 0.0).unwrap();
        assert_eq!(g.value(t).item(), 1.0);
        let j = g.scalar(0.1);
        let r = g.scalar(1.0);
        let t = total_loss(&mut g, j, r, 0.001).unwrap();
        assert!((g.value(t).item() - 0.101).abs() < 1e-15);
    }

    #[test]
    fn segment_versus_arc() {
        let n = 20_001;
        let len = 1.5 * std::f64::consts::PI;
        let seg: Vec<Vec<f64>> = (0..n).map(|i| vec![len * i as f64 / (n - 1) as f64, 0.0]).collect();
        let arc: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = len * i as f64 / (n - 1) as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let s_seg = uniform_point_set_std(&Tensor::from_rows(&seg).unwrap()).unwrap();
        let s_arc = uniform_point_set_std(&Tensor::from_rows(&arc).unwrap()).unwrap();
        // Uniform segment of length L has variance L²/12.
        assert!((s_seg[0] - len / 12f64.sqrt()).abs() < 1e-3);
        assert_eq!(s_seg[1], 0.0);
        assert!(s_arc.iter().all(|s| *s > 0.0));
        assert!(s_arc[0] + s_arc[1] < s_seg[0]);
        // Volumes (η = 0): the segment has zero volume, the arc does not.
        assert!(s_seg[0] * s_seg[1] == 0.0);
        assert!(s_arc[0] * s_arc[1] > 0.4);
    }
}
