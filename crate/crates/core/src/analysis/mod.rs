//! Post-training analysis: pruning, explained reconstruction, dimension
//! estimates and bound checks on a frozen model.

mod pca;
mod stats;

use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use pca::{pca, pca_compare, Pca, PcaReport};
pub use stats::{determinant, pearson_cc, std_plummet_index, volume_determinant_check, DeterminantCheck, LatentStats, Plummet};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Default joint explained-reconstruction threshold for dimension estimates.
pub const DEFAULT_THRESHOLD: f64 = 0.01;
/// `E_D(Ω)` at or below this is treated as a collapsed model.
pub const DEGENERATE_ERROR: f64 = 1e-12;

/// Per-sample reconstruction distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    SquaredL2,
    /// Mean squared error over the sample's entries.
    Mse,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "l2" => Self::L2,
            "squared_l2" | "sql2" => Self::SquaredL2,
            "mse" => Self::Mse,
            other => return Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        })
    }
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            Metric::L2 => ss.sqrt(),
            Metric::SquaredL2 => ss,
            Metric::Mse => ss / a.len() as f64,
        }
    }

    /// Mean distance between matching rows.
    pub fn mean_distance(&self, a: &Tensor, b: &Tensor) -> f64 {
        let n = a.shape()[0];
        (0..n).map(|i| self.distance(a.row(i), b.row(i))).sum::<f64>() / n as f64
    }
}

fn check_prune_set(p: &[usize], m: usize) -> Result<()> {
    if let Some(bad) = p.iter().find(|i| **i >= m) {
        return Err(Error::InvalidArgument(format!("prune index {bad} out of range for {m} latent dimensions")));
    }
    Ok(())
}

/// Replaces the coordinates in `p` by `mean`.
pub fn prune(z: &Tensor, p: &[usize], mean: &[f64]) -> Result<Tensor> {
    if z.rank() != 2 || z.shape()[1] != mean.len() {
        return Err(Error::ShapeMismatch { op: "prune", shapes: vec![z.shape().to_vec(), vec![mean.len()]] });
    }
    let m = mean.len();
    check_prune_set(p, m)?;
    let mut out = z.clone();
    for row in out.data_mut().chunks_exact_mut(m) {
        for &i in p {
            row[i] = mean[i];
        }
    }
    Ok(out)
}

/// Outcome of comparing a measured pruning error with its Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub prune_set: Vec<usize>,
    pub delta: f64,
    pub bound: f64,
    pub pass: bool,
}

/// A frozen model paired with a dataset, caching codes and reconstructions.
pub struct Analyzer {
    model: Model,
    data: Tensor,
    codes: Tensor,
    recon: Tensor,
    stats: LatentStats,
    full_error: RefCell<HashMap<Metric, f64>>,
    certificate: OnceCell<f64>,
}

impl Analyzer {
    pub fn new(model: &Model, data: &Tensor) -> Result<Self> {
        if data.shape().first().copied().unwrap_or(0) < 2 {
            return Err(Error::InvalidArgument("analysis needs at least 2 samples".into()));
        }
        let codes = model.encode(data)?;
        let recon = model.decode(&codes)?;
        let stats = LatentStats::from_codes(&codes)?;
        Ok(Self { model: model.clone(), data: data.clone(), codes, recon, stats, full_error: RefCell::default(), certificate: OnceCell::new() })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn stats(&self) -> &LatentStats {
        &self.stats
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn reconstructions(&self) -> &Tensor {
        &self.recon
    }

    pub fn latent_dim(&self) -> usize {
        self.stats.dim()
    }

    /// `ε = E[D(x̂, x)]`.
    pub fn baseline(&self, metric: Metric) -> f64 {
        metric.mean_distance(&self.recon, &self.data)
    }

    /// Decodes codes with `p` pruned.
    pub fn pruned_reconstruction(&self, p: &[usize]) -> Result<Tensor> {
        self.model.decode(&prune(&self.codes, p, &self.stats.mean)?)
    }

    /// `E_D(P) = E[D(x̃_P, x)] − E[D(x̂, x)]`.
    pub fn induced_error(&self, p: &[usize], metric: Metric) -> Result<f64> {
        check_prune_set(p, self.latent_dim())?;
        if p.is_empty() {
            return Ok(0.0);
        }
        let pruned = self.pruned_reconstruction(p)?;
        Ok(metric.mean_distance(&pruned, &self.data) - self.baseline(metric))
    }

    fn full_error(&self, metric: Metric) -> Result<f64> {
        if let Some(v) = self.full_error.borrow().get(&metric) {
            return Ok(*v);
        }
        let all: Vec<usize> = (0..self.latent_dim()).collect();
        let e = self.induced_error(&all, metric)?;
        self.full_error.borrow_mut().insert(metric, e);
        Ok(e)
    }

    /// `R_D(P) = E_D(P) / E_D(Ω)`.
    pub fn explained(&self, p: &[usize], metric: Metric) -> Result<f64> {
        let full = self.full_error(metric)?;
        if full <= DEGENERATE_ERROR {
            return Err(Error::Degenerate(format!("E(Ω) = {full:e}: model collapsed")));
        }
        if p.len() == self.latent_dim() && {
            let mut s = p.to_vec();
            s.sort_unstable();
            s.dedup();
            s.len() == p.len()
        } {
            return Ok(1.0);
        }
        Ok(self.induced_error(p, metric)? / full)
    }

    /// `R_{L2}({i})` for every latent dimension.
    pub fn singleton_explained(&self, metric: Metric) -> Result<Vec<f64>> {
        (0..self.latent_dim()).map(|i| self.explained(&[i], metric)).collect()
    }

    /// Joint `R_{L2}` of the growing ascending-σ prefixes, `k = 0..=m`.
    pub fn cumulative_explained(&self) -> Result<Vec<f64>> {
        let order = self.stats.order_ascending();
        (0..=order.len()).map(|k| self.explained(&order[..k], Metric::L2)).collect()
    }

    /// `m − |P*|` where `P*` is the largest ascending-σ prefix with joint
    /// `R_{L2}(P*) ≤ threshold`.
    pub fn estimate_latent_dim(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} must be in (0, 1]")));
        }
        let cum = self.cumulative_explained()?;
        let k = cum.iter().rposition(|r| *r <= threshold).unwrap_or(0);
        Ok(self.latent_dim() - k)
    }

    /// Pearson correlation between `σ_i` and `R_{L2}({i})`.
    pub fn ordering_pcc(&self) -> Result<f64> {
        pearson_cc(&self.stats.std, &self.singleton_explained(Metric::L2)?)
    }

    /// Checks `E_{L2}(P) ≤ K·√(Σ_{i∈P} σ_i²)`. Errors when the decoder is not
    /// certified `K`-Lipschitz.
    pub fn pruning_bound_check(&self, p: &[usize], k: f64) -> Result<BoundCheck> {
        if self.model.spec().lipschitz_bound.is_none() {
            return Err(Error::InvalidArgument("pruning bound needs a normalized decoder".into()));
        }
        let cert = match self.certificate.get() {
            Some(c) => *c,
            None => {
                let c = self.model.decoder_lipschitz_certificate()?;
                let _ = self.certificate.set(c);
                c
            }
        };
        if cert > k * (1.0 + 1e-2) {
            return Err(Error::InvalidArgument(format!("decoder certificate {cert} exceeds K = {k}")));
        }
        let delta = self.induced_error(p, Metric::L2)?;
        let bound = k * p.iter().map(|&i| self.stats.std[i].powi(2)).sum::<f64>().sqrt();
        Ok(BoundCheck { prune_set: p.to_vec(), delta, bound, pass: delta <= bound * (1.0 + 1e-6) })
    }

    /// Singleton sets and every ascending-σ prefix ("all-small-σ" sets).
    pub fn standard_prune_sets(&self) -> Vec<Vec<usize>> {
        let m = self.latent_dim();
        let order = self.stats.order_ascending();
        let mut sets: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
        sets.extend((2..=m).map(|k| order[..k].to_vec()));
        sets
    }

    /// Full report at `threshold` with reconstruction tolerance `delta`.
    pub fn report(&self, threshold: f64, delta: f64) -> Result<MetricsReport> {
        let k = self.model.spec().lipschitz_bound.unwrap_or(1.0);
        let singles = self.singleton_explained(Metric::L2)?;
        let checks = if self.model.spec().lipschitz_bound.is_some() {
            self.standard_prune_sets().iter().map(|p| self.pruning_bound_check(p, k)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let order = self.stats.order_descending();
        let sorted: Vec<f64> = order.iter().map(|&i| self.stats.std[i]).collect();
        let epsilon = self.baseline(Metric::L2);
        Ok(MetricsReport {
            epsilon,
            delta,
            threshold,
            dim_estimate: self.estimate_latent_dim(threshold)?,
            pcc: pearson_cc(&self.stats.std, &singles).ok(),
            plummet: std_plummet_index(&sorted).ok(),
            sigma: self.stats.std.clone(),
            explained: singles,
            cumulative_explained: self.cumulative_explained()?,
            order,
            bound_checks: checks,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub epsilon: f64,
    pub delta: f64,
    pub threshold: f64,
    pub dim_estimate: usize,
    /// `None` when undefined (a constant vector).
    pub pcc: Option<f64>,
    pub plummet: Option<Plummet>,
    pub sigma: Vec<f64>,
    /// `R_{L2}({i})` by latent index.
    pub explained: Vec<f64>,
    /// Joint `R_{L2}` of ascending-σ prefixes of length `0..=m`.
    pub cumulative_explained: Vec<f64>,
    /// Latent indices by descending σ.
    pub order: Vec<usize>,
    pub bound_checks: Vec<BoundCheck>,
}

impl MetricsReport {
    pub fn bound_passes(&self) -> usize {
        self.bound_checks.iter().filter(|c| c.pass).count()
    }

    /// `dim_index,sigma,explained_reconstruction`, sorted by descending σ.
    pub fn dims_csv(&self) -> String {
        let mut s = String::from("dim_index,sigma,explained_reconstruction\n");
        for &i in &self.order {
            let _ = writeln!(s, "{},{},{}", i, self.sigma[i], self.explained[i]);
        }
        s
    }

    /// One-row summary; `plummet_index` counts the dimensions before the
    /// largest σ drop.
    pub fn summary_csv(&self) -> String {
        let pcc = self.pcc.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
        let (plummet, low) = match &self.plummet {
            Some(p) => (p.principal_count().to_string(), p.low_confidence.to_string()),
            None => ("undefined".into(), "undefined".into()),
        };
        format!(
            "epsilon,delta,embedding_ok,threshold,dim_estimate,plummet_index,plummet_low_confidence,pcc,bound_checks_passed,bound_checks_total\n{},{},{},{},{},{},{},{},{},{}\n",
            self.epsilon,
            self.delta,
            self.epsilon < self.delta,
            self.threshold,
            self.dim_estimate,
            plummet,
            low,
            pcc,
            self.bound_passes(),
            self.bound_checks.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::NormMode;
    use crate::model::{build_autoencoder, Layer, ModelSpec};

    /// Linear 3→3 model with identity encoder and decoder.
    fn identity_model() -> Model {
        let mut m = build_autoencoder(&ModelSpec::linear(3, 3), 0).unwrap();
        for l in m.encoder.iter_mut().chain(m.decoder.iter_mut()) {
            if let Layer::Dense(d) = l {
                d.weight = Tensor::eye(3);
                d.bias = Tensor::zeros(&[3]);
            }
        }
        m.refresh(NormMode::Eval).unwrap();
        m
    }

    /// Points varying only along the first axis.
    fn line_data() -> Tensor {
        let rows: Vec<Vec<f64>> = (0..11).map(|i| vec![-5.0 + i as f64, 0.0, 0.0]).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn prune_examples() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mean = [2.0, 3.0];
        assert_eq!(prune(&z, &[], &mean).unwrap(), z);
        let all = prune(&z, &[0, 1], &mean).unwrap();
        assert_eq!(all.data(), [2.0, 3.0, 2.0, 3.0]);
        let once = prune(&z, &[1], &mean).unwrap();
        assert_eq!(prune(&once, &[1], &mean).unwrap(), once);
        assert_eq!(once.data(), [1.0, 3.0, 3.0, 3.0]);
        assert!(prune(&z, &[2], &mean).is_err());
    }

    #[test]
    fn explained_reconstruction_examples() {
        let a = Analyzer::new(&identity_model(), &line_data()).unwrap();
        assert!(a.baseline(Metric::L2) < 1e-12);
        assert!((a.stats().std[0] - (11.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(a.induced_error(&[], Metric::L2).unwrap(), 0.0);
        assert_eq!(a.induced_error(&[1], Metric::L2).unwrap(), 0.0);
        assert_eq!(a.explained(&[0, 1, 2], Metric::L2).unwrap(), 1.0);
        assert_eq!(a.explained(&[], Metric::Mse).unwrap(), 0.0);
        assert_eq!(a.estimate_latent_dim(0.01).unwrap(), 1);
        assert_eq!(a.estimate_latent_dim(1.0).unwrap(), 0);
        for p in a.standard_prune_sets() {
            assert!(a.pruning_bound_check(&p, 1.0).unwrap().pass);
        }
        let c = a.pruning_bound_check(&[1, 2], 1.0).unwrap();
        assert_eq!((c.delta, c.bound), (0.0, 0.0));
    }

    #[test]
    fn collapsed_model_is_degenerate() {
        let data = Tensor::full(&[5, 3], 0.5);
        let a = Analyzer::new(&identity_model(), &data).unwrap();
        assert!(matches!(a.explained(&[0], Metric::L2), Err(Error::Degenerate(_))));
        assert!(a.estimate_latent_dim(0.01).is_err());
    }

    #[test]
    fn report_csvs() {
        let a = Analyzer::new(&identity_model(), &line_data()).unwrap();
        let r = a.report(0.01, 0.05).unwrap();
        assert_eq!(r.dim_estimate, 1);
        assert_eq!(r.bound_passes(), r.bound_checks.len());
        let dims = r.dims_csv();
        assert!(dims.starts_with("dim_index,sigma,explained_reconstruction\n0,"));
        assert_eq!(dims.lines().count(), 4);
        assert!(r.summary_csv().lines().nth(1).unwrap().contains(",true,"));
    }

    #[test]
    fn metrics() {
        let a = [0.0, 3.0];
        let b = [4.0, 0.0];
        assert_eq!(Metric::L2.distance(&a, &b), 5.0);
        assert_eq!(Metric::SquaredL2.distance(&a, &b), 25.0);
        assert_eq!(Metric::Mse.distance(&a, &b), 12.5);
    }
}
