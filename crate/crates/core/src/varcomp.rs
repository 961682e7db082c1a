//! Measurement-error variance, random-effect covariance and predicted
//! random effects from the residuals of the fitted coefficient curves.
//!
//! Per cluster the residuals follow the linear model `r_i = x_i e_i + eps_i`.
//! Clusters with `n_i <= p` or an ill-conditioned `x_i'x_i` cannot support
//! that fit and are excluded; the degrees of freedom count only the
//! clusters that remain.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::Layout;
use crate::data::ClusterDataset;
use crate::error::{Error, Result};
use crate::linalg::{psd_projection, MAX_CONDITION};
use crate::local::{CoefficientCurves, ObservationFits};

/// Residuals `r_ij = y_ij - X_ij' a_i(U_ij) - Z_i' beta(U_ij)`, grouped by cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub r: Vec<Vec<f64>>,
}

/// Residuals from coefficient vectors given at each observation point
/// (cluster-major order).
pub fn residuals_from_theta(data: &ClusterDataset, layout: Layout, theta: &[Vec<f64>]) -> ResidualSet {
    let mut g = vec![0.0; layout.s()];
    let mut it = theta.iter();
    let r = data
        .clusters()
        .iter()
        .map(|c| {
            c.obs
                .iter()
                .map(|o| {
                    let t = it.next().expect("one theta per observation");
                    layout.fill_gamma(&o.x, &c.z, &mut g);
                    o.y - g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        })
        .collect();
    ResidualSet { r }
}

/// Residuals against arbitrary coefficient functions, e.g. the truth in a
/// simulation.
pub fn residuals_with(
    data: &ClusterDataset,
    layout: Layout,
    theta_at: impl Fn(f64) -> Vec<f64>,
) -> ResidualSet {
    let theta: Vec<Vec<f64>> = data.rows().map(|(_, o)| theta_at(o.u)).collect();
    residuals_from_theta(data, layout, &theta)
}

/// Residuals of the fitted curves, evaluated per the curves' evaluation mode.
pub fn residual_curves(data: &ClusterDataset, curves: &CoefficientCurves) -> Result<ResidualSet> {
    let fits = ObservationFits::compute(curves, data)?;
    Ok(residuals_from_theta(data, curves.layout, &fits.theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2: f64,
    /// Moment estimator of the random-effect covariance; may be indefinite.
    pub sigma_raw: Vec<Vec<f64>>,
    /// PSD projection of `sigma_raw`.
    pub sigma: Vec<Vec<f64>>,
    /// Predicted random effect per cluster; `None` for excluded clusters.
    pub e_hat: Vec<Option<Vec<f64>>>,
    /// `n - m p` over included clusters.
    pub df: usize,
    pub excluded: Vec<usize>,
}

impl VarianceComponents {
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma)
    }

    pub fn sigma_raw_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma_raw)
    }

    /// `(sigma_11, sigma_12, ..., sigma_pp)`: upper-triangle entries of the
    /// raw estimate in row order.
    pub fn sigma_upper(&self) -> Vec<f64> {
        let p = self.sigma_raw.len();
        let mut out = Vec::with_capacity(p * (p + 1) / 2);
        for i in 0..p {
            for j in i..p {
                out.push(self.sigma_raw[i][j]);
            }
        }
        out
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Least squares pieces of one usable cluster.
struct ClusterLs {
    index: usize,
    n: usize,
    xtx_inv: DMatrix<f64>,
    e_hat: DVector<f64>,
    rss: f64,
}

fn cluster_design(data: &ClusterDataset, i: usize) -> DMatrix<f64> {
    let c = &data.clusters()[i];
    DMatrix::from_fn(c.obs.len(), data.p(), |r, k| c.obs[r].x[k])
}

fn cluster_ls(data: &ClusterDataset, res: &ResidualSet, i: usize) -> Option<ClusterLs> {
    let p = data.p();
    let n = data.clusters()[i].obs.len();
    if n <= p {
        return None;
    }
    let x = cluster_design(data, i);
    let xtx = x.tr_mul(&x);
    let eig = SymmetricEigen::new(xtx.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0 && hi / lo <= MAX_CONDITION) {
        return None;
    }
    let xtx_inv = {
        let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
        let v = &eig.eigenvectors;
        let m = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
        (&m + m.transpose()) * 0.5
    };
    let r = DVector::from_column_slice(&res.r[i]);
    let e_hat = &xtx_inv * x.tr_mul(&r);
    let fitted = &x * &e_hat;
    let rss = (r - fitted).norm_squared();
    Some(ClusterLs {
        index: i,
        n,
        xtx_inv,
        e_hat,
        rss,
    })
}

fn usable(data: &ClusterDataset, res: &ResidualSet) -> Result<Vec<ClusterLs>> {
    if res.r.len() != data.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} residual vectors for {} clusters",
            res.r.len(),
            data.m()
        )));
    }
    let out: Vec<ClusterLs> = (0..data.m()).filter_map(|i| cluster_ls(data, res, i)).collect();
    if out.is_empty() {
        return Err(Error::NoUsableClusters);
    }
    Ok(out)
}

fn pooled_sigma2(data: &ClusterDataset, used: &[ClusterLs]) -> (f64, usize) {
    let n: usize = used.iter().map(|c| c.n).sum();
    let df = n - used.len() * data.p();
    let rss: f64 = used.iter().map(|c| c.rss).sum();
    (rss / df as f64, df)
}

/// Pooled `sum RSS_i / (n - m p)` over usable clusters.
pub fn estimate_sigma2(data: &ClusterDataset, res: &ResidualSet) -> Result<f64> {
    let used = usable(data, res)?;
    Ok(pooled_sigma2(data, &used).0)
}

/// `(x_i'x_i)^-1 x_i' r_i` for each cluster; `None` where the cluster is
/// excluded.
pub fn predict_random_effects(data: &ClusterDataset, res: &ResidualSet) -> Vec<Option<Vec<f64>>> {
    (0..data.m())
        .map(|i| cluster_ls(data, res, i).map(|c| c.e_hat.iter().copied().collect()))
        .collect()
}

/// Full variance-component estimate with `sigma2` supplied.
#[allow(non_snake_case)]
pub fn estimate_Sigma(data: &ClusterDataset, res: &ResidualSet, sigma2: f64) -> Result<VarianceComponents> {
    let used = usable(data, res)?;
    let (_, df) = pooled_sigma2(data, &used);
    Ok(assemble(data, &used, sigma2, df))
}

/// `sigma2` and `Sigma` in one pass.
pub fn variance_components(data: &ClusterDataset, res: &ResidualSet) -> Result<VarianceComponents> {
    let used = usable(data, res)?;
    let (sigma2, df) = pooled_sigma2(data, &used);
    Ok(assemble(data, &used, sigma2, df))
}

fn assemble(data: &ClusterDataset, used: &[ClusterLs], sigma2: f64, df: usize) -> VarianceComponents {
    let p = data.p();
    let m = used.len() as f64;
    let mut outer = DMatrix::zeros(p, p);
    let mut inv_sum = DMatrix::zeros(p, p);
    for c in used {
        outer += &c.e_hat * c.e_hat.transpose();
        inv_sum += &c.xtx_inv;
    }
    let raw = (outer - inv_sum * sigma2) / m;
    let raw = (&raw + raw.transpose()) * 0.5;
    let sigma = psd_projection(&raw);

    let mut e_hat = vec![None; data.m()];
    for c in used {
        e_hat[c.index] = Some(c.e_hat.iter().copied().collect());
    }
    let excluded = e_hat
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_none())
        .map(|(i, _)| i)
        .collect();
    VarianceComponents {
        sigma2,
        sigma_raw: to_rows(&raw),
        sigma: to_rows(&sigma),
        e_hat,
        df,
        excluded,
    }
}
