//! Principal components of a dataset and their comparison with a trained
//! linear autoencoder.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Layer, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Descending eigenvalues of the sample covariance (divisor n-1).
    pub eigenvalues: Vec<f64>,
    /// `d×d`; column `k` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Tensor,
}

impl Pca {
    pub fn component(&self, k: usize) -> Vec<f64> {
        let d = self.mean.len();
        (0..d).map(|i| self.eigenvectors.data()[i * d + k]).collect()
    }
}

/// Eigendecomposition of the sample covariance of `n×d` data.
pub fn pca(data: &Tensor) -> Result<Pca> {
    let stats = super::LatentStats::from_codes(data)?;
    let d = stats.dim();
    let cov = DMatrix::from_row_slice(d, d, stats.cov.data());
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = vec![0.0; d * d];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..d {
            vecs[i * d + col] = eig.eigenvectors[(i, k)];
        }
    }
    Ok(Pca { mean: stats.mean, eigenvalues, eigenvectors: Tensor::new(vec![d, d], vecs)? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaReport {
    pub eigenvalues: Vec<f64>,
    /// Eigenvector index matched to each decoder column.
    pub matched: Vec<usize>,
    /// `|cos|` between each decoder column and its matched eigenvector.
    pub alignment: Vec<f64>,
    /// `max |BᵀB − I|`.
    pub btb_deviation: f64,
    /// `max ‖(A − Bᵀ)x′‖` over centered samples.
    pub max_residual: f64,
    /// `max ‖(A − Bᵀ)x′‖ / ‖x′‖` over centered samples.
    pub max_relative_residual: f64,
    /// Variance of each latent code over the dataset.
    pub latent_variances: Vec<f64>,
}

impl PcaReport {
    /// Largest relative gap between a latent variance and its matched eigenvalue.
    pub fn max_variance_error(&self) -> f64 {
        self.latent_variances
            .iter()
            .zip(&self.matched)
            .map(|(v, &k)| (v - self.eigenvalues[k]).abs() / self.eigenvalues[k])
            .fold(0.0, f64::max)
    }
}

fn linear_parts(model: &Model) -> Result<(Tensor, Tensor)> {
    match (model.encoder.as_slice(), model.decoder.as_slice()) {
        ([Layer::Dense(e)], [Layer::Dense(d)]) => {
            let k = model.spec().lipschitz_bound.unwrap_or(1.0);
            Ok((e.weight.clone(), d.effective_weight().scale(k)))
        }
        _ => Err(Error::InvalidArgument("pca_compare needs a single-layer linear autoencoder".into())),
    }
}

/// Compares a linear model `e(x) = Ax + a`, `g(z) = Bz + b` with the PCA of `data`.
pub fn pca_compare(model: &Model, data: &Tensor) -> Result<PcaReport> {
    let (a, b) = linear_parts(model)?;
    let p = pca(data)?;
    let (d, m) = (b.shape()[0], b.shape()[1]);
    if m > d || p.eigenvalues[m - 1] <= 1e-12 * p.eigenvalues[0].abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!("data covariance has rank below {m}")));
    }
    let column = |j: usize| -> Vec<f64> { (0..d).map(|i| b.data()[i * m + j]).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut cos = vec![vec![0.0; m]; m];
    for (j, row) in cos.iter_mut().enumerate() {
        let c = column(j);
        let cn = norm(&c);
        for (k, slot) in row.iter_mut().enumerate() {
            let e = p.component(k);
            let dot: f64 = c.iter().zip(&e).map(|(x, y)| x * y).sum();
            *slot = if cn > 0.0 { (dot / cn).abs().min(1.0) } else { 0.0 };
        }
    }
    let mut matched = vec![usize::MAX; m];
    let mut alignment = vec![0.0; m];
    let mut taken = vec![false; m];
    for _ in 0..m {
        let mut best = (0, 0, -1.0);
        for j in (0..m).filter(|j| matched[*j] == usize::MAX) {
            for k in (0..m).filter(|k| !taken[*k]) {
                if cos[j][k] > best.2 {
                    best = (j, k, cos[j][k]);
                }
            }
        }
        matched[best.0] = best.1;
        alignment[best.0] = best.2;
        taken[best.1] = true;
    }

    let btb = b.transpose().matmul(&b)?;
    let btb_deviation = (0..m * m)
        .map(|idx| (btb.data()[idx] - if idx / m == idx % m { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);

    let bt = b.transpose();
    let mut diff = a.clone();
    diff.data_mut().iter_mut().zip(bt.data()).for_each(|(x, y)| *x -= y);
    let n = data.shape()[0];
    let (mut max_residual, mut max_relative_residual) = (0.0f64, 0.0f64);
    let mut xc = vec![0.0; d];
    for i in 0..n {
        for (c, (x, mu)) in xc.iter_mut().zip(data.row(i).iter().zip(&p.mean)) {
            *c = x - mu;
        }
        let r: f64 = (0..m)
            .map(|j| (0..d).map(|k| diff.data()[j * d + k] * xc[k]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        max_residual = max_residual.max(r);
        let xn = norm(&xc);
        if xn > 0.0 {
            max_relative_residual = max_relative_residual.max(r / xn);
        }
    }

    let codes = model.encode(data)?;
    let stats = super::LatentStats::from_codes(&codes)?;
    let latent_variances = stats.std.iter().map(|s| s * s).collect();
    Ok(PcaReport {
        eigenvalues: p.eigenvalues,
        matched,
        alignment,
        btb_deviation,
        max_residual,
        max_relative_residual,
        latent_variances,
    })
}
