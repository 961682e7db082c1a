//! Plug-in bias and variance of the local-linear estimators, Gumbel-calibrated
//! simultaneous bands, sup-norm tests, and jackknife standard errors for
//! constant coefficients.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CoefId, FitConfig, Layout};
use crate::data::ClusterDataset;
use crate::error::{Error, Result};
use crate::kernel::KernelMoments;
use crate::local::{
    averaging_window, constants_within, estimate_constants, local_fit, local_fit_bandwidth,
    CoefficientCurves, Degree, LocalFit,
};
use crate::varcomp::VarianceComponents;

// ---------------------------------------------------------------------------
// Extreme-value constants
// ---------------------------------------------------------------------------

/// `(-2 log(h / (b - a)))^{1/2}`.
fn log_scale(h: f64, interval: (f64, f64)) -> Result<f64> {
    let width = interval.1 - interval.0;
    if !(h > 0.0 && width > 0.0 && h < width) {
        return Err(Error::InvalidInterval { h, width });
    }
    Ok((-2.0 * (h / width).ln()).sqrt())
}

/// Centering constant of the Gumbel limit for the sup of the standardized
/// deviation over `[a, b]`. The formula depends on whether the kernel
/// vanishes at its support boundary.
pub fn omega_n(moments: &KernelMoments, h: f64, interval: (f64, f64)) -> Result<f64> {
    let l = log_scale(h, interval)?;
    let width = interval.1 - interval.0;
    let correction = if moments.k_at_c0 == 0.0 {
        (moments.dk2 / (4.0 * moments.nu0 * std::f64::consts::PI)).ln()
    } else {
        (moments.k_at_c0.powi(2) / (moments.nu0 * std::f64::consts::PI.sqrt())).ln()
            + 0.5 * (width / h).ln().ln()
    };
    Ok(l + correction / l)
}

/// `c_alpha = -log(-0.5 log(1 - alpha))`.
pub fn critical_value(alpha: f64) -> f64 {
    -(-0.5 * (1.0 - alpha).ln()).ln()
}

/// `1 - exp(-2 exp(-T))`.
pub fn gumbel_p_value(statistic: f64) -> f64 {
    -(-2.0 * (-statistic).exp()).exp_m1()
}

/// Half-width of the level `1 - alpha` band in units of the standard error:
/// `omega_n + [log 2 - log(-log(1 - alpha))] / (-2 log(h/(b-a)))^{1/2}`.
pub fn band_multiplier(moments: &KernelMoments, h: f64, interval: (f64, f64), alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let l = log_scale(h, interval)?;
    let omega = omega_n(moments, h, interval)?;
    Ok(omega + (std::f64::consts::LN_2 - (-(1.0 - alpha).ln()).ln()) / l)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

// ---------------------------------------------------------------------------
// Bias and variance
// ---------------------------------------------------------------------------

/// Estimated conditional bias of `theta_hat(u0)`, length `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub u0: f64,
    pub values: Vec<f64>,
}

/// Estimated conditional covariance of `theta_hat(u0)`, `s x s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub u0: f64,
    pub cov: Vec<Vec<f64>>,
}

impl VarianceEstimate {
    pub fn se(&self, index: usize) -> f64 {
        self.cov[index][index].max(0.0).sqrt()
    }

    /// The `p x p` block of `alpha_k`.
    pub fn alpha_block(&self, layout: &Layout, k: usize) -> Vec<Vec<f64>> {
        let r = k * layout.p..(k + 1) * layout.p;
        r.clone().map(|i| self.cov[i][r.clone()].to_vec()).collect()
    }

    /// The block of the cluster-level coefficients (intercept first, when
    /// present).
    pub fn beta_block(&self, layout: &Layout) -> Vec<Vec<f64>> {
        let r = layout.beta_start()..layout.s();
        r.clone().map(|i| self.cov[i][r.clone()].to_vec()).collect()
    }
}

/// Applies the smoother of a local-linear fit to the Taylor remainder
/// `R = t^2 Gamma b2 + t^3 Gamma b3`, where `b2 = theta''/2` and
/// `b3 = theta'''/6` come from a pilot fit.
pub fn bias_with_derivatives(
    data: &ClusterDataset,
    layout: Layout,
    fit: &LocalFit,
    second: &[f64],
    third: &[f64],
) -> BiasEstimate {
    let s = layout.s();
    let rows = &fit.smoother.rows;
    let mut gamma = vec![0.0; s];
    let mut remainder = Vec::with_capacity(rows.len());
    let mut k = 0;
    for (r, (i, o)) in data.rows().enumerate() {
        if k < rows.len() && rows[k] == r {
            layout.fill_gamma(&o.x, &data.clusters()[i].z, &mut gamma);
            let t = o.u - fit.u0;
            let (mut g2, mut g3) = (0.0, 0.0);
            for c in 0..s {
                g2 += gamma[c] * second[c];
                g3 += gamma[c] * third[c];
            }
            remainder.push(t * t * (0.5 * g2) + t * t * t * (g3 / 6.0));
            k += 1;
        }
    }
    let values = (0..s)
        .map(|row| {
            fit.smoother
                .matrix
                .row(row)
                .iter()
                .zip(&remainder)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    BiasEstimate { u0: fit.u0, values }
}

fn pilot_derivatives(data: &ClusterDataset, cfg: &FitConfig, u0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let pilot = local_fit_bandwidth(data, u0, cfg, Degree::Cubic, cfg.pilot_bandwidth(data))?;
    Ok((pilot.derivs[1].clone(), pilot.derivs[2].clone()))
}

fn bias_for_fit(data: &ClusterDataset, cfg: &FitConfig, fit: &LocalFit) -> Result<BiasEstimate> {
    let (second, third) = pilot_derivatives(data, cfg, fit.u0)?;
    Ok(bias_with_derivatives(data, cfg.layout(data), fit, &second, &third))
}

/// Plug-in bias at `u0` using local-cubic pilot derivatives with bandwidth
/// `cfg.pilot_bandwidth(data)`.
pub fn estimate_bias(data: &ClusterDataset, cfg: &FitConfig, u0: f64) -> Result<BiasEstimate> {
    let fit = local_fit(data, u0, cfg, Degree::Linear)?;
    bias_for_fit(data, cfg, &fit)
}

/// `S V S'` with `V = sigma2 I + blockdiag(x_i Sigma x_i')`, accumulated
/// cluster by cluster.
pub fn variance_for_fit(
    data: &ClusterDataset,
    layout: Layout,
    fit: &LocalFit,
    sigma2: f64,
    sigma: &DMatrix<f64>,
) -> VarianceEstimate {
    let s = layout.s();
    let p = data.p();
    let smat = &fit.smoother.matrix;
    let rows = &fit.smoother.rows;
    let mut cov = smat * smat.transpose() * sigma2;

    let mut k = 0;
    let mut g = DMatrix::zeros(s, p);
    let mut current: Option<usize> = None;
    let flush = |g: &mut DMatrix<f64>, cov: &mut DMatrix<f64>| {
        *cov += &*g * sigma * g.transpose();
        g.fill(0.0);
    };
    for (r, (i, o)) in data.rows().enumerate() {
        if k >= rows.len() {
            break;
        }
        if rows[k] != r {
            continue;
        }
        if current.is_some_and(|c| c != i) {
            flush(&mut g, &mut cov);
        }
        current = Some(i);
        let col = smat.column(k);
        for (a, xv) in o.x.iter().enumerate() {
            for row in 0..s {
                g[(row, a)] += col[row] * xv;
            }
        }
        k += 1;
    }
    if current.is_some() {
        flush(&mut g, &mut cov);
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    VarianceEstimate {
        u0: fit.u0,
        cov: (0..s).map(|i| (0..s).map(|j| cov[(i, j)]).collect()).collect(),
    }
}

/// Plug-in conditional covariance of `theta_hat(u0)`, using the PSD `Sigma`.
pub fn estimate_variance(
    data: &ClusterDataset,
    cfg: &FitConfig,
    u0: f64,
    vc: &VarianceComponents,
) -> Result<VarianceEstimate> {
    let fit = local_fit(data, u0, cfg, Degree::Linear)?;
    Ok(variance_for_fit(data, cfg.layout(data), &fit, vc.sigma2, &vc.sigma_matrix()))
}

/// Bias and variance along the evaluation grid of `curves`.
#[derive(Debug, Clone)]
pub struct GridInference {
    pub bias: Vec<BiasEstimate>,
    pub variance: Vec<VarianceEstimate>,
}

pub fn grid_inference(
    data: &ClusterDataset,
    curves: &CoefficientCurves,
    vc: &VarianceComponents,
) -> Result<GridInference> {
    let cfg = &curves.config;
    let sigma = vc.sigma_matrix();
    let pairs = curves
        .fits
        .par_iter()
        .map(|fit| {
            let bias = if cfg.bias_correction {
                bias_for_fit(data, cfg, fit)?
            } else {
                BiasEstimate {
                    u0: fit.u0,
                    values: vec![0.0; curves.layout.s()],
                }
            };
            let var = variance_for_fit(data, curves.layout, fit, vc.sigma2, &sigma);
            Ok((bias, var))
        })
        .collect::<Result<Vec<_>>>()?;
    let (bias, variance) = pairs.into_iter().unzip();
    Ok(GridInference { bias, variance })
}

// ---------------------------------------------------------------------------
// Bands and tests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub coefficient: CoefId,
    /// Confidence level `1 - alpha`.
    pub level: f64,
    pub u: Vec<f64>,
    pub estimate: Vec<f64>,
    pub bias: Vec<f64>,
    /// Bias-corrected estimate.
    pub center: Vec<f64>,
    pub se: Vec<f64>,
    pub half_width: Vec<f64>,
    pub multiplier: f64,
    pub omega_n: f64,
    pub interval: (f64, f64),
}

impl BandResult {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, w)| c - w).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, w)| c + w).collect()
    }

    /// Whether `truth` lies inside the band at every grid point.
    pub fn covers(&self, truth: impl Fn(f64) -> f64) -> bool {
        self.u
            .iter()
            .zip(self.center.iter().zip(&self.half_width))
            .all(|(u, (c, w))| (truth(*u) - c).abs() <= *w)
    }
}

struct Pointwise {
    estimate: Vec<f64>,
    bias: Vec<f64>,
    se: Vec<f64>,
}

fn pointwise(
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
) -> Result<Pointwise> {
    let idx = curves.layout.require(id)?;
    if inf.bias.len() != curves.grid.len() || inf.variance.len() != curves.grid.len() {
        return Err(Error::DimensionMismatch(
            "bias/variance estimates do not cover the grid".into(),
        ));
    }
    Ok(Pointwise {
        estimate: curves.fits.iter().map(|f| f.theta[idx]).collect(),
        bias: inf.bias.iter().map(|b| b.values[idx]).collect(),
        se: inf.variance.iter().map(|v| v.se(idx)).collect(),
    })
}

fn moments_of(curves: &CoefficientCurves) -> Result<KernelMoments> {
    curves.config.kernel.moments()
}

/// Simultaneous band `theta_hat - bias_hat ± Delta(u)` for one coefficient.
pub fn confidence_band(
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
    alpha: f64,
) -> Result<BandResult> {
    let pw = pointwise(curves, inf, id)?;
    let moments = moments_of(curves)?;
    let h = curves.config.h;
    let multiplier = band_multiplier(&moments, h, curves.interval, alpha)?;
    let omega = omega_n(&moments, h, curves.interval)?;
    let center = pw.estimate.iter().zip(&pw.bias).map(|(e, b)| e - b).collect();
    let half_width = pw.se.iter().map(|s| multiplier * s).collect();
    Ok(BandResult {
        coefficient: id,
        level: 1.0 - alpha,
        u: curves.grid.clone(),
        estimate: pw.estimate,
        bias: pw.bias,
        center,
        se: pw.se,
        half_width,
        multiplier,
        omega_n: omega,
        interval: curves.interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullKind {
    /// `H0: theta_j(u) = f(u)` for a given function.
    Specified,
    /// `H0: theta_j(u) = C` for an unknown constant.
    Constancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub coefficient: CoefId,
    pub null: NullKind,
    pub statistic: f64,
    pub sup_deviation: f64,
    pub omega_n: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Grid point attaining the sup.
    pub sup_u: f64,
    /// The plugged-in constant for constancy tests.
    pub constant: Option<f64>,
}

/// Standardized deviation `|a - b| / se`, with `0/0 = 0`.
fn standardized(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

/// Sup-norm statistic from standardized deviations on the grid:
/// `(-2 log(h/(b-a)))^{1/2} (sup - omega_n)`.
pub fn sup_statistic(
    moments: &KernelMoments,
    h: f64,
    interval: (f64, f64),
    sup_deviation: f64,
) -> Result<(f64, f64)> {
    let l = log_scale(h, interval)?;
    let omega = omega_n(moments, h, interval)?;
    Ok((l * (sup_deviation - omega), omega))
}

fn run_test(
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
    null: NullKind,
    null_at: impl Fn(f64) -> f64,
    alpha: f64,
    constant: Option<f64>,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let pw = pointwise(curves, inf, id)?;
    let mut sup = f64::NEG_INFINITY;
    let mut sup_u = curves.grid[0];
    for (g, &u) in curves.grid.iter().enumerate() {
        let d = standardized(pw.estimate[g] - null_at(u) - pw.bias[g], pw.se[g]);
        if d > sup {
            sup = d;
            sup_u = u;
        }
    }
    let moments = moments_of(curves)?;
    let (statistic, omega) = sup_statistic(&moments, curves.config.h, curves.interval, sup)?;
    let critical = critical_value(alpha);
    let p_value = gumbel_p_value(statistic);
    Ok(TestResult {
        coefficient: id,
        null,
        statistic,
        sup_deviation: sup,
        omega_n: omega,
        alpha,
        critical_value: critical,
        p_value,
        reject: statistic > critical,
        sup_u,
        constant,
    })
}

/// Tests `H0: coefficient(u) = null(u)` on the grid.
pub fn test_specified(
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
    null: impl Fn(f64) -> f64,
    alpha: f64,
) -> Result<TestResult> {
    run_test(curves, inf, id, NullKind::Specified, null, alpha, None)
}

/// Tests constancy with a precomputed `C_hat`.
pub fn test_constancy_with(
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
    c_hat: f64,
    alpha: f64,
) -> Result<TestResult> {
    run_test(curves, inf, id, NullKind::Constancy, |_| c_hat, alpha, Some(c_hat))
}

/// Tests whether a coefficient is constant, with `C_hat` from the averaging
/// estimator.
pub fn test_constancy(
    data: &ClusterDataset,
    curves: &CoefficientCurves,
    inf: &GridInference,
    id: CoefId,
    alpha: f64,
) -> Result<TestResult> {
    let idx = curves.layout.require(id)?;
    let c_hat = estimate_constants(data, &curves.config)?[idx];
    test_constancy_with(curves, inf, id, c_hat, alpha)
}

// ---------------------------------------------------------------------------
// Constants and composed effects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub coefficient: CoefId,
    pub value: f64,
    pub se: f64,
}

/// `sqrt((m - 1)/m * sum (C_(-i) - mean)^2)`.
pub fn jackknife_se_from(replicates: &[f64]) -> Result<f64> {
    let m = replicates.len();
    if m < 2 {
        return Err(Error::TooFewClusters(m));
    }
    let mean = replicates.iter().sum::<f64>() / m as f64;
    let ss: f64 = replicates.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(((m - 1) as f64 / m as f64 * ss).sqrt())
}

/// Leave-one-cluster-out jackknife for the averaging estimator of each
/// requested coefficient. The averaging window is held at the full-data
/// window across replicates.
pub fn jackknife_se(data: &ClusterDataset, cfg: &FitConfig, ids: &[CoefId]) -> Result<Vec<ConstantEstimate>> {
    let m = data.m();
    if m < 2 {
        return Err(Error::TooFewClusters(m));
    }
    let layout = cfg.layout(data);
    let idx = ids.iter().map(|id| layout.require(*id)).collect::<Result<Vec<_>>>()?;
    let window = averaging_window(data, cfg)?;
    let full = constants_within(data, cfg, window)?;
    let replicates = (0..m)
        .into_par_iter()
        .map(|i| constants_within(&data.without_cluster(i)?, cfg, window))
        .collect::<Result<Vec<_>>>()?;
    ids.iter()
        .zip(idx)
        .map(|(id, k)| {
            let reps: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
            Ok(ConstantEstimate {
                coefficient: *id,
                value: full[k],
                se: jackknife_se_from(&reps)?,
            })
        })
        .collect()
}

/// Cluster-specific loadings `a_j(u) = alpha_0j(u) + sum_k alpha_kj(u) z_k (+ e_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurves {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    /// `values[j][g]` for `X_{j+1}` at `u[g]`.
    pub values: Vec<Vec<f64>>,
}

/// Composes the loadings for a cluster with covariates `z`. Coefficients in
/// `constants` enter as their constant values; the rest as grid curves.
pub fn cluster_effect(
    curves: &CoefficientCurves,
    constants: &BTreeMap<CoefId, f64>,
    z: &[f64],
    e: Option<&[f64]>,
) -> Result<EffectCurves> {
    let layout = curves.layout;
    if z.len() != layout.q {
        return Err(Error::DimensionMismatch(format!(
            "z profile has {} entries, model has q = {}",
            z.len(),
            layout.q
        )));
    }
    if let Some(e) = e {
        if e.len() != layout.p {
            return Err(Error::DimensionMismatch(format!(
                "random effect has {} entries, model has p = {}",
                e.len(),
                layout.p
            )));
        }
    }
    let coef = |k: usize, j: usize, g: usize| -> f64 {
        let id = CoefId::Alpha { k, j };
        match constants.get(&id) {
            Some(c) => *c,
            None => curves.fits[g].theta[k * layout.p + j - 1],
        }
    };
    let values = (1..=layout.p)
        .map(|j| {
            (0..curves.grid.len())
                .map(|g| {
                    let mut a = coef(0, j, g);
                    for (k, zk) in z.iter().enumerate() {
                        a += coef(k + 1, j, g) * zk;
                    }
                    a + e.map_or(0.0, |e| e[j - 1])
                })
                .collect()
        })
        .collect();
    Ok(EffectCurves {
        z: z.to_vec(),
        u: curves.grid.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn omega_for_both_kernel_branches() {
        let e = Kernel::Epanechnikov.moments().unwrap();
        let u = Kernel::Uniform.moments().unwrap();
        assert_abs_diff_eq!(omega_n(&e, 0.15, (0.0, 1.0)).unwrap(), 1.1189, epsilon = 1e-3);
        assert_abs_diff_eq!(omega_n(&u, 0.15, (0.0, 1.0)).unwrap(), 1.4625, epsilon = 1e-3);
        assert!(matches!(
            omega_n(&e, 1.0, (0.0, 1.0)),
            Err(Error::InvalidInterval { .. })
        ));
        assert!(omega_n(&e, 1.2, (0.0, 1.0)).is_err());
    }

    #[test]
    fn critical_value_and_multiplier() {
        assert_abs_diff_eq!(critical_value(0.05), 3.6633, epsilon = 1e-3);
        let e = Kernel::Epanechnikov.moments().unwrap();
        let m = band_multiplier(&e, 0.15, (0.0, 1.0), 0.05).unwrap();
        assert_abs_diff_eq!(m, 2.9995, epsilon = 1e-3);
        let wider = band_multiplier(&e, 0.15, (0.0, 1.0), 0.01).unwrap();
        assert!(wider > m);
        assert!(band_multiplier(&e, 0.15, (0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn statistic_and_p_value_arithmetic() {
        let e = Kernel::Epanechnikov.moments().unwrap();
        let (t, omega) = sup_statistic(&e, 0.15, (0.0, 1.0), 2.0).unwrap();
        assert_abs_diff_eq!(omega, 1.1189, epsilon = 1e-3);
        assert_abs_diff_eq!(t, 1.7163, epsilon = 2e-3);
        assert_abs_diff_eq!(gumbel_p_value(t), 0.302, epsilon = 1e-3);
        assert!(t < critical_value(0.05));
    }

    #[test]
    fn p_value_and_critical_value_agree() {
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.5, 0.9] {
            let c = critical_value(alpha);
            assert_abs_diff_eq!(gumbel_p_value(c), alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn jackknife_arithmetic() {
        assert_eq!(jackknife_se_from(&[1.5; 4]).unwrap(), 0.0);
        assert_abs_diff_eq!(jackknife_se_from(&[0.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(jackknife_se_from(&[1.0]), Err(Error::TooFewClusters(1))));
    }

    #[test]
    fn standardized_handles_zero_se() {
        assert_eq!(standardized(0.0, 0.0), 0.0);
        assert_eq!(standardized(1.0, 0.0), f64::INFINITY);
        assert_eq!(standardized(-1.0, 2.0), 0.5);
    }
}
