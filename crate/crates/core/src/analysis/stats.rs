//! Scalar statistics: latent moments, Pearson correlation, determinants and
//! the sorted-STD plummet heuristic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Full-dataset moments of `n×m` codes (divisor `n-1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row-major `m×m` covariance.
    pub cov: Tensor,
    pub n: usize,
}

impl LatentStats {
    /// Two-pass mean and covariance.
    pub fn from_codes(z: &Tensor) -> Result<Self> {
        if z.rank() != 2 || z.shape()[0] < 2 {
            return Err(Error::InvalidArgument(format!("latent stats need n×m codes with n >= 2, got {:?}", z.shape())));
        }
        let (n, m) = (z.shape()[0], z.shape()[1]);
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for (acc, v) in mean.iter_mut().zip(z.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut cov = vec![0.0; m * m];
        let mut d = vec![0.0; m];
        for i in 0..n {
            for (dj, (v, mu)) in d.iter_mut().zip(z.row(i).iter().zip(&mean)) {
                *dj = v - mu;
            }
            for a in 0..m {
                for b in a..m {
                    cov[a * m + b] += d[a] * d[b];
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                let v = cov[a * m + b] / (n - 1) as f64;
                cov[a * m + b] = v;
                cov[b * m + a] = v;
            }
        }
        let std = (0..m).map(|i| cov[i * m + i].sqrt()).collect();
        Ok(Self { mean, std, cov: Tensor::new(vec![m, m], cov)?, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Latent dimensions sorted by descending σ (ties by ascending index).
    pub fn order_descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| self.std[b].total_cmp(&self.std[a]).then(a.cmp(&b)));
        idx
    }

    /// Latent dimensions sorted by ascending σ (ties by ascending index).
    pub fn order_ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| self.std[a].total_cmp(&self.std[b]).then(a.cmp(&b)));
        idx
    }
}

/// Sample Pearson correlation.
pub fn pearson_cc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!("pearson needs equal lengths >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pearson correlation undefined for a constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(s: &Tensor) -> Result<f64> {
    if s.rank() != 2 || s.shape()[0] != s.shape()[1] {
        return Err(Error::ShapeMismatch { op: "determinant", shapes: vec![s.shape().to_vec()] });
    }
    let n = s.shape()[0];
    let mut a = s.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        if a[pivot * n + col] == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
            }
        }
    }
    Ok(det)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterminantCheck {
    pub diag_product: f64,
    pub det: f64,
    pub pass: bool,
}

/// Compares `Π S_ii` (the squared volume at η = 0) with `det S`.
pub fn volume_determinant_check(s: &Tensor) -> Result<DeterminantCheck> {
    if s.rank() != 2 || s.shape()[0] != s.shape()[1] {
        return Err(Error::ShapeMismatch { op: "volume_determinant_check", shapes: vec![s.shape().to_vec()] });
    }
    let n = s.shape()[0];
    let d = s.data();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (d[i * n + j], d[j * n + i]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::InvalidArgument(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let diag_product = (0..n).map(|i| d[i * n + i]).product();
    let det = determinant(s)?;
    Ok(DeterminantCheck { diag_product, det, pass: diag_product >= det - 1e-9 * det.abs() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plummet {
    /// Position `i` of the largest drop between `σ_i` and `σ_{i+1}`.
    pub index: usize,
    /// `log10(σ_i / σ_{i+1})` at `index`.
    pub gap: f64,
    /// The largest gap is less than twice the runner-up.
    pub low_confidence: bool,
}

impl Plummet {
    /// Number of dimensions before the drop.
    pub fn principal_count(&self) -> usize {
        self.index + 1
    }
}

/// Largest log-scale drop in a descending STD profile.
pub fn std_plummet_index(sigma: &[f64]) -> Result<Plummet> {
    if sigma.len() < 2 {
        return Err(Error::InvalidArgument("plummet needs at least 2 dimensions".into()));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) || sigma.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("sigma must be non-negative and sorted descending".into()));
    }
    let gaps: Vec<f64> = sigma.windows(2).map(|w| (w[0].max(1e-15) / w[1].max(1e-15)).log10()).collect();
    let mut index = 0;
    for (i, g) in gaps.iter().enumerate() {
        if *g > gaps[index] {
            index = i;
        }
    }
    let runner_up = gaps.iter().enumerate().filter(|(i, _)| *i != index).map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
    let low_confidence = gaps.len() > 1 && gaps[index] < 2.0 * runner_up;
    Ok(Plummet { index, gap: gaps[index], low_confidence })
}
