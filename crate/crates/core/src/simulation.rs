//! Data generator and Monte Carlo studies: MISE of the functional
//! estimators, MSE of the variance components, the structured versus
//! per-cluster loss ratio, band/test calibration, and convergence-rate checks.
//!
//! Random numbers come from ChaCha8 seeded with `SimConfig::seed`; replicate
//! `r` uses stream `r` of that seed, so replicates are reproducible in any
//! order and can run in parallel. Within a replicate clusters are drawn in
//! order: size, `Z_i`, `e_i`, then `(X_ij, U_ij, eps_ij)` per observation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CoefId, FitConfig, Layout};
use crate::data::{Cluster, ClusterDataset, Observation};
use crate::error::{Error, Result};
use crate::inference::{confidence_band, grid_inference, test_constancy_with};
use crate::local::{averaging_window, fit_curves, local_theta, ObservationFits};
use crate::varcomp::{residuals_from_theta, variance_components};

/// A coefficient function of the simulation truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthFn {
    /// `sin(2 pi u)`
    Sin2Pi,
    /// `cos(2 pi u)`
    Cos2Pi,
    /// `sin(pi u)`
    SinPi,
    Constant(f64),
    /// `c_0 + c_1 u + c_2 u^2 + ...`
    Polynomial(Vec<f64>),
}

impl TruthFn {
    pub fn eval(&self, u: f64) -> f64 {
        self.derivative(u, 0)
    }

    /// `order`-th derivative at `u`.
    pub fn derivative(&self, u: f64, order: u32) -> f64 {
        match self {
            TruthFn::Sin2Pi => trig(2.0 * PI, u, order, false),
            TruthFn::Cos2Pi => trig(2.0 * PI, u, order, true),
            TruthFn::SinPi => trig(PI, u, order, false),
            TruthFn::Constant(c) => {
                if order == 0 {
                    *c
                } else {
                    0.0
                }
            }
            TruthFn::Polynomial(c) => {
                let mut total = 0.0;
                for (k, ck) in c.iter().enumerate().skip(order as usize) {
                    let falling: f64 = ((k + 1 - order as usize)..=k).map(|v| v as f64).product();
                    total += ck * falling * u.powi((k - order as usize) as i32);
                }
                total
            }
        }
    }
}

fn trig(omega: f64, u: f64, order: u32, cosine: bool) -> f64 {
    let phase = if cosine { PI / 2.0 } else { 0.0 } + order as f64 * PI / 2.0;
    omega.powi(order as i32) * (omega * u + phase).sin()
}

/// True coefficient functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTruth {
    /// `alpha[k][j - 1]`, `k = 0..=q`.
    pub alpha: Vec<Vec<TruthFn>>,
    /// Cluster-level coefficients `beta_1..beta_q`.
    pub beta: Vec<TruthFn>,
    /// Varying intercept `beta_0`.
    pub intercept: Option<TruthFn>,
}

impl SimTruth {
    /// `alpha_0 = sin(2 pi u)`, `alpha_1 = cos(2 pi u)`, `alpha_k = sin(pi u)`
    /// for `k >= 2`, every `beta` and the intercept `sin(2 pi u)`.
    pub fn standard(p: usize, q: usize) -> SimTruth {
        let alpha = (0..=q)
            .map(|k| {
                let f = match k {
                    0 => TruthFn::Sin2Pi,
                    1 => TruthFn::Cos2Pi,
                    _ => TruthFn::SinPi,
                };
                vec![f; p]
            })
            .collect();
        SimTruth {
            alpha,
            beta: vec![TruthFn::Sin2Pi; q],
            intercept: Some(TruthFn::Sin2Pi),
        }
    }

    /// Every coefficient constant at `value`.
    pub fn constant(p: usize, q: usize, value: f64) -> SimTruth {
        SimTruth {
            alpha: vec![vec![TruthFn::Constant(value); p]; q + 1],
            beta: vec![TruthFn::Constant(value); q],
            intercept: Some(TruthFn::Constant(value)),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(
            self.alpha.first().map_or(0, Vec::len),
            self.beta.len(),
            self.intercept.is_some(),
        )
    }

    pub fn get(&self, id: CoefId) -> Option<&TruthFn> {
        match id {
            CoefId::Alpha { k, j } => self.alpha.get(k)?.get(j.checked_sub(1)?),
            CoefId::Beta(0) => self.intercept.as_ref(),
            CoefId::Beta(j) => self.beta.get(j - 1),
        }
    }

    pub fn set(&mut self, id: CoefId, f: TruthFn) -> Result<()> {
        let slot = match id {
            CoefId::Alpha { k, j } => j
                .checked_sub(1)
                .and_then(|j| self.alpha.get_mut(k)?.get_mut(j)),
            CoefId::Beta(0) => self.intercept.as_mut(),
            CoefId::Beta(j) => self.beta.get_mut(j - 1),
        };
        *slot.ok_or_else(|| Error::InvalidConfig(format!("truth has no coefficient {id}")))? = f;
        Ok(())
    }

    /// `theta(u)` in layout order.
    pub fn theta(&self, u: f64) -> Vec<f64> {
        self.theta_derivative(u, 0)
    }

    pub fn theta_derivative(&self, u: f64, order: u32) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .alpha
            .iter()
            .flat_map(|a| a.iter().map(|f| f.derivative(u, order)))
            .collect();
        if let Some(f) = &self.intercept {
            out.push(f.derivative(u, order));
        }
        out.extend(self.beta.iter().map(|f| f.derivative(u, order)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSize {
    /// `floor(|scale * xi| + base)` with `xi ~ N(0, 1)`.
    AbsNormal { base: f64, scale: f64 },
    Fixed(usize),
}

impl ClusterSize {
    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        match *self {
            ClusterSize::AbsNormal { base, scale } => {
                let xi: f64 = rng.sample(StandardNormal);
                ((scale * xi).abs() + base).floor() as usize
            }
            ClusterSize::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub m: usize,
    pub cluster_size: ClusterSize,
    /// Standard deviation of the measurement error.
    pub sigma: f64,
    /// Covariance of the random effects `e_i` (`p x p`).
    pub random_effect_cov: Vec<Vec<f64>>,
    pub truth: SimTruth,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::standard()
    }
}

impl SimConfig {
    /// `p = 3`, `q = 2`, `m = 100`, sizes `floor(|2 xi| + 6)`, `Sigma = 0.25 I`,
    /// `sigma = 0.5`, standard truth.
    pub fn standard() -> SimConfig {
        let p = 3;
        SimConfig {
            m: 100,
            cluster_size: ClusterSize::AbsNormal {
                base: 6.0,
                scale: 2.0,
            },
            sigma: 0.5,
            random_effect_cov: scaled_identity(p, 0.25),
            truth: SimTruth::standard(p, 2),
            seed: 7,
        }
    }

    /// The loss-ratio design derived from `self`: every cluster of size
    /// `size` and no random effects.
    pub fn loss_ratio_design(&self, size: usize) -> SimConfig {
        let p = self.layout().p;
        SimConfig {
            cluster_size: ClusterSize::Fixed(size),
            random_effect_cov: scaled_identity(p, 0.0),
            ..self.clone()
        }
    }

    pub fn layout(&self) -> Layout {
        self.truth.layout()
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        let p = layout.p;
        if p == 0 || self.truth.alpha.iter().any(|a| a.len() != p) {
            return Err(Error::InvalidConfig(
                "truth alpha blocks must all have length p >= 1".into(),
            ));
        }
        if self.truth.alpha.len() != layout.q + 1 {
            return Err(Error::InvalidConfig(format!(
                "truth has {} alpha blocks, expected q + 1 = {}",
                self.truth.alpha.len(),
                layout.q + 1
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.random_effect_cov.len() != p || self.random_effect_cov.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidConfig(format!(
                "random_effect_cov must be {p} x {p}"
            )));
        }
        let cov = DMatrix::from_fn(p, p, |i, j| self.random_effect_cov[i][j]);
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidConfig("random_effect_cov must be symmetric".into()));
        }
        if SymmetricEigen::new(cov).eigenvalues.iter().any(|&v| v < -1e-12) {
            return Err(Error::InvalidConfig("random_effect_cov must be PSD".into()));
        }
        match self.cluster_size {
            ClusterSize::Fixed(0) => Err(Error::InvalidConfig("cluster size must be positive".into())),
            ClusterSize::AbsNormal { base, scale } if !(base >= 1.0 && scale >= 0.0) => Err(
                Error::InvalidConfig("cluster size rule needs base >= 1 and scale >= 0".into()),
            ),
            _ => Ok(()),
        }
    }

    /// A fit configuration whose layout matches the truth.
    pub fn fit_config(&self, h: f64) -> FitConfig {
        FitConfig {
            intercept: self.truth.intercept.is_some(),
            ..FitConfig::with_bandwidth(h)
        }
    }

    fn check_fit(&self, cfg: &FitConfig) -> Result<()> {
        self.validate()?;
        cfg.validate()?;
        if cfg.intercept != self.truth.intercept.is_some() {
            return Err(Error::InvalidConfig(
                "fit intercept switch must match whether the truth has an intercept".into(),
            ));
        }
        Ok(())
    }
}

fn scaled_identity(p: usize, v: f64) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { v } else { 0.0 }).collect())
        .collect()
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(cov: &[Vec<f64>]) -> DMatrix<f64> {
    let p = cov.len();
    let eig = SymmetricEigen::new(DMatrix::from_fn(p, p, |i, j| cov[i][j]));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt())) * v.transpose()
}

/// One simulated dataset with its latent variables.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: ClusterDataset,
    pub truth: SimTruth,
    pub e: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
}

/// Generator for replicate `replicate` of `sim`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn generate_dataset(sim: &SimConfig, replicate: u64) -> Result<SimulatedData> {
    sim.validate()?;
    let layout = sim.layout();
    let (p, q) = (layout.p, layout.q);
    let root = psd_sqrt(&sim.random_effect_cov);
    let mut rng = replicate_rng(sim.seed, replicate);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut clusters = Vec::with_capacity(sim.m);
    let mut es = Vec::with_capacity(sim.m);
    let mut epss = Vec::with_capacity(sim.m);
    let mut gamma = vec![0.0; layout.s()];
    for i in 0..sim.m {
        let n_i = sim.cluster_size.draw(&mut rng);
        let z: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
        let white: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let e: Vec<f64> = (0..p)
            .map(|a| (0..p).map(|b| root[(a, b)] * white[b]).sum())
            .collect();
        let mut obs = Vec::with_capacity(n_i);
        let mut eps = Vec::with_capacity(n_i);
        for _ in 0..n_i {
            let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            let u: f64 = rng.random();
            let err = sim.sigma * normal(&mut rng);
            layout.fill_gamma(&x, &z, &mut gamma);
            let mean: f64 = gamma.iter().zip(sim.truth.theta(u)).map(|(g, t)| g * t).sum();
            let random: f64 = x.iter().zip(&e).map(|(a, b)| a * b).sum();
            obs.push(Observation {
                y: mean + random + err,
                u,
                x,
            });
            eps.push(err);
        }
        clusters.push(Cluster::new(format!("{i}"), z, obs));
        es.push(e);
        epss.push(eps);
    }
    Ok(SimulatedData {
        data: ClusterDataset::new(clusters)?,
        truth: sim.truth.clone(),
        e: es,
        eps: epss,
    })
}

/// Trapezoid rule for samples `f` on the increasing grid `u`.
pub fn trapezoid(u: &[f64], f: &[f64]) -> f64 {
    u.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// A failed replicate and its error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseReport {
    pub replicates: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedReplicate>,
    pub h: f64,
    pub integration: String,
    pub coefficients: Vec<CoefId>,
    pub mise: Vec<f64>,
    /// MSE of `sigma2_hat`.
    pub mse_sigma2: f64,
    /// MSE of `(sigma_11, sigma_12, ..., sigma_pp)` from the raw estimate.
    pub mse_sigma: Vec<f64>,
    pub sigma_labels: Vec<String>,
}

impl MiseReport {
    pub fn mise_of(&self, id: CoefId) -> Option<f64> {
        self.coefficients.iter().position(|c| *c == id).map(|i| self.mise[i])
    }
}

struct MiseReplicate {
    ise: Vec<f64>,
    sigma2_err2: f64,
    sigma_err2: Vec<f64>,
}

fn mise_replicate(sim: &SimConfig, cfg: &FitConfig, r: u64) -> Result<MiseReplicate> {
    let s = generate_dataset(sim, r)?;
    let curves = fit_curves(&s.data, cfg)?;
    let layout = curves.layout;
    let ise = (0..layout.s())
        .map(|c| {
            let err2: Vec<f64> = curves
                .grid
                .iter()
                .zip(&curves.fits)
                .map(|(u, f)| (f.theta[c] - s.truth.theta(*u)[c]).powi(2))
                .collect();
            trapezoid(&curves.grid, &err2)
        })
        .collect();
    let obs = ObservationFits::compute(&curves, &s.data)?;
    let res = residuals_from_theta(&s.data, layout, &obs.theta);
    let vc = variance_components(&s.data, &res)?;
    let target = &sim.random_effect_cov;
    let p = layout.p;
    let mut sigma_err2 = Vec::new();
    for i in 0..p {
        for j in i..p {
            sigma_err2.push((vc.sigma_raw[i][j] - target[i][j]).powi(2));
        }
    }
    Ok(MiseReplicate {
        ise,
        sigma2_err2: (vc.sigma2 - sim.sigma * sim.sigma).powi(2),
        sigma_err2,
    })
}

/// MISE of every functional estimator (trapezoid rule over the evaluation
/// grid) and MSE of the variance components.
pub fn mise_study(sim: &SimConfig, cfg: &FitConfig, reps: usize) -> Result<MiseReport> {
    sim.check_fit(cfg)?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    let layout = sim.layout();
    let outcomes: Vec<Result<MiseReplicate>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| mise_replicate(sim, cfg, r))
        .collect();
    let mut failed = Vec::new();
    let mut ok = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(FailedReplicate {
                replicate: r as u64,
                error: e.to_string(),
            }),
        }
    }
    if ok.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "all {reps} replicates failed; first error: {}",
            failed[0].error
        )));
    }
    let k = ok.len() as f64;
    let mean_of = |f: &dyn Fn(&MiseReplicate) -> f64| ok.iter().map(f).sum::<f64>() / k;
    let mise = (0..layout.s()).map(|c| mean_of(&|r| r.ise[c])).collect();
    let n_sigma = layout.p * (layout.p + 1) / 2;
    let mse_sigma = (0..n_sigma).map(|c| mean_of(&|r| r.sigma_err2[c])).collect();
    let mut sigma_labels = Vec::new();
    for i in 1..=layout.p {
        for j in i..=layout.p {
            sigma_labels.push(format!("sigma_{i}{j}"));
        }
    }
    Ok(MiseReport {
        replicates: reps,
        succeeded: ok.len(),
        failed,
        h: cfg.h,
        integration: if cfg.trim || cfg.grid.interval.is_some() {
            "trapezoid over the trimmed evaluation grid".into()
        } else {
            "trapezoid over the full data range".into()
        },
        coefficients: layout.ids(),
        mise,
        mse_sigma2: mean_of(&|r| r.sigma2_err2),
        mse_sigma,
        sigma_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmisePoint {
    pub h: f64,
    pub rmise_a: f64,
    pub rmise_beta: f64,
    /// Share of (cluster, grid point) pairs where the per-cluster fit was
    /// not estimable and which were left out of both sums.
    pub dropped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmiseReport {
    pub replicates: usize,
    pub points: Vec<RmisePoint>,
}

/// Settings for the structured versus unstructured comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmiseConfig {
    pub bandwidths: Vec<f64>,
    pub reps: usize,
    /// Integrate over the trimmed grid instead of the full data range.
    pub trim: bool,
    pub grid_count: usize,
    /// Minimum support of the per-cluster fits, as a multiple of their
    /// parameter count.
    pub unstructured_min_factor: f64,
}

impl Default for RmiseConfig {
    fn default() -> Self {
        RmiseConfig {
            bandwidths: vec![0.1, 0.15, 0.2, 0.25, 0.3],
            reps: 20,
            trim: false,
            grid_count: 101,
            unstructured_min_factor: 1.0,
        }
    }
}

#[derive(Default)]
struct RmiseSums {
    num_a: f64,
    den_a: f64,
    num_b: f64,
    den_b: f64,
    dropped: usize,
    total: usize,
}

fn rmise_replicate(sim: &SimConfig, cfg: &FitConfig, rc: &RmiseConfig, r: u64) -> Result<RmiseSums> {
    let s = generate_dataset(sim, r)?;
    let curves = fit_curves(&s.data, cfg)?;
    let layout = curves.layout;
    let (p, q) = (layout.p, layout.q);
    let grid = &curves.grid;
    let un_cfg = FitConfig {
        min_local_obs_factor: rc.unstructured_min_factor,
        ..cfg.clone()
    };
    // Per-cluster fits at each grid point; failures mark the point as not
    // estimable for that cluster.
    let mut sums = RmiseSums::default();
    let truths: Vec<Vec<f64>> = grid.iter().map(|u| s.truth.theta(*u)).collect();
    let per_cluster: Vec<Vec<Option<Vec<f64>>>> = s
        .data
        .clusters()
        .par_iter()
        .map(|c| {
            let mut c = c.clone();
            c.z.clear();
            let single = ClusterDataset::new(vec![c])?;
            let local_cfg = FitConfig {
                intercept: cfg.intercept || q > 0,
                ..un_cfg.clone()
            };
            Ok(grid
                .iter()
                .map(|&u| local_theta(&single, u, &local_cfg).ok())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let beta0 = layout.beta_start();
    for (i, c) in s.data.clusters().iter().enumerate() {
        let compose_a = |theta: &[f64], j: usize| -> f64 {
            theta[j] + (0..q).map(|k| theta[(k + 1) * p + j] * c.z[k]).sum::<f64>()
        };
        let compose_b = |theta: &[f64]| -> f64 {
            let mut v = if layout.intercept { theta[beta0] } else { 0.0 };
            let off = beta0 + usize::from(layout.intercept);
            v += (0..q).map(|k| theta[off + k] * c.z[k]).sum::<f64>();
            v
        };
        let mut e1a = Vec::new();
        let mut e2a = Vec::new();
        let mut e1b = Vec::new();
        let mut e2b = Vec::new();
        let mut kept = Vec::new();
        for (g, u) in grid.iter().enumerate() {
            sums.total += 1;
            let Some(free) = &per_cluster[i][g] else {
                sums.dropped += 1;
                continue;
            };
            let est = &curves.fits[g].theta;
            let truth = &truths[g];
            let (mut a1, mut a2) = (0.0, 0.0);
            for j in 0..p {
                let t = compose_a(truth, j);
                a1 += (compose_a(est, j) - t).powi(2);
                a2 += (free[j] - t).powi(2);
            }
            let tb = compose_b(truth);
            let b2 = if free.len() > p { (free[p] - tb).powi(2) } else { tb * tb };
            kept.push(*u);
            e1a.push(a1);
            e2a.push(a2);
            e1b.push((compose_b(est) - tb).powi(2));
            e2b.push(b2);
        }
        sums.num_a += trapezoid(&kept, &e1a);
        sums.den_a += trapezoid(&kept, &e2a);
        sums.num_b += trapezoid(&kept, &e1b);
        sums.den_b += trapezoid(&kept, &e2b);
    }
    Ok(sums)
}

/// Ratio of summed per-cluster MISE of the structured estimator to that of
/// per-cluster fits ignoring the structure, for each bandwidth.
///
/// The `beta` ratio compares the cluster-level function
/// `beta_0(u) + Z_i' beta(u)` with the per-cluster intercept function.
pub fn rmise_study(sim: &SimConfig, rc: &RmiseConfig) -> Result<RmiseReport> {
    if rc.reps == 0 || rc.bandwidths.is_empty() {
        return Err(Error::InvalidConfig("rmise study needs reps and bandwidths".into()));
    }
    let points = rc
        .bandwidths
        .iter()
        .map(|&h| {
            let mut cfg = sim.fit_config(h);
            cfg.trim = rc.trim;
            cfg.grid.count = rc.grid_count;
            sim.check_fit(&cfg)?;
            let reps = (0..rc.reps as u64)
                .into_par_iter()
                .map(|r| rmise_replicate(sim, &cfg, rc, r))
                .collect::<Result<Vec<_>>>()?;
            let mut t = RmiseSums::default();
            for s in reps {
                t.num_a += s.num_a;
                t.den_a += s.den_a;
                t.num_b += s.num_b;
                t.den_b += s.den_b;
                t.dropped += s.dropped;
                t.total += s.total;
            }
            Ok(RmisePoint {
                h,
                rmise_a: t.num_a / t.den_a,
                rmise_beta: t.num_b / t.den_b,
                dropped_fraction: t.dropped as f64 / t.total as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RmiseReport {
        replicates: rc.reps,
        points,
    })
}

/// Whole-study RMISE when structured and unstructured estimates are given
/// directly as per-cluster integrated squared errors.
pub fn rmise_ratio(structured: &[f64], unstructured: &[f64]) -> f64 {
    structured.iter().sum::<f64>() / unstructured.iter().sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub replicates: usize,
    pub alpha: f64,
    pub coefficient: CoefId,
    /// Share of replicates whose band covers the true curve on the whole grid.
    pub coverage: f64,
    /// Constancy rejection rate when the coefficient varies.
    pub power: f64,
    /// Constancy rejection rate when the coefficient is constant.
    pub size: f64,
    pub null_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub reps: usize,
    pub coefficient: CoefId,
    /// Value of the coefficient under the constant truth.
    pub null_constant: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            alpha: 0.05,
            reps: 200,
            coefficient: CoefId::Alpha { k: 0, j: 1 },
            null_constant: 0.5,
        }
    }
}

fn calibration_replicate(
    sim: &SimConfig,
    cfg: &FitConfig,
    cc: &CalibrationConfig,
    r: u64,
) -> Result<(bool, bool)> {
    let s = generate_dataset(sim, r)?;
    let curves = fit_curves(&s.data, cfg)?;
    let idx = curves.layout.require(cc.coefficient)?;
    let obs = ObservationFits::compute(&curves, &s.data)?;
    let res = residuals_from_theta(&s.data, curves.layout, &obs.theta);
    let vc = variance_components(&s.data, &res)?;
    let inf = grid_inference(&s.data, &curves, &vc)?;
    let c_hat = obs.constants(averaging_window(&s.data, cfg)?)?[idx];
    let test = test_constancy_with(&curves, &inf, cc.coefficient, c_hat, cc.alpha)?;
    let truth = s.truth.get(cc.coefficient).cloned().ok_or_else(|| {
        Error::InvalidConfig(format!("truth lacks {}", cc.coefficient))
    })?;
    let band = confidence_band(&curves, &inf, cc.coefficient, cc.alpha)?;
    Ok((band.covers(|u| truth.eval(u)), test.reject))
}

/// Empirical simultaneous coverage and constancy-test rejection rates for
/// one coefficient: under `sim` as given, and with that coefficient replaced
/// by a constant.
pub fn calibration_study(sim: &SimConfig, cfg: &FitConfig, cc: &CalibrationConfig) -> Result<CalibrationReport> {
    sim.check_fit(cfg)?;
    if cc.reps < 50 {
        return Err(Error::InvalidConfig(format!(
            "calibration needs at least 50 replicates, got {}",
            cc.reps
        )));
    }
    let mut null_sim = sim.clone();
    null_sim.truth.set(cc.coefficient, TruthFn::Constant(cc.null_constant))?;
    let runs = (0..cc.reps as u64)
        .into_par_iter()
        .map(|r| {
            let (covered, power_hit) = calibration_replicate(sim, cfg, cc, r)?;
            let (_, size_hit) = calibration_replicate(&null_sim, cfg, cc, r)?;
            Ok((covered, power_hit, size_hit))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = runs.len() as f64;
    let rate = |f: &dyn Fn(&(bool, bool, bool)) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / k;
    Ok(CalibrationReport {
        replicates: cc.reps,
        alpha: cc.alpha,
        coefficient: cc.coefficient,
        coverage: rate(&|r| r.0),
        power: rate(&|r| r.1),
        size: rate(&|r| r.2),
        null_constant: cc.null_constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub m: usize,
    pub h: f64,
    pub mse_constant: f64,
    pub mse_sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub coefficient: CoefId,
    pub replicates: usize,
    pub points: Vec<RatePoint>,
}

/// Monte Carlo MSE of `C_hat` (for a coefficient that is constant in `sim`)
/// and of `sigma2_hat`, for several cluster counts. When `bandwidth_rate` is
/// set, `h` shrinks as `(m / m_0)^(-bandwidth_rate)` from the first entry.
pub fn rate_study(
    sim: &SimConfig,
    cfg: &FitConfig,
    coefficient: CoefId,
    ms: &[usize],
    reps: usize,
    bandwidth_rate: Option<f64>,
) -> Result<RateReport> {
    sim.check_fit(cfg)?;
    let target = match sim.truth.get(coefficient) {
        Some(TruthFn::Constant(c)) => *c,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "{coefficient} must be constant in the simulation truth"
            )))
        }
    };
    let idx = sim.layout().require(coefficient)?;
    let m0 = *ms.first().ok_or_else(|| Error::InvalidConfig("no cluster counts".into()))? as f64;
    let points = ms
        .iter()
        .map(|&m| {
            let s_m = SimConfig { m, ..sim.clone() };
            let h = match bandwidth_rate {
                Some(rate) => cfg.h * (m as f64 / m0).powf(-rate),
                None => cfg.h,
            };
            let c = FitConfig { h, ..cfg.clone() };
            let errs = (0..reps as u64)
                .into_par_iter()
                .map(|r| {
                    let s = generate_dataset(&s_m, r)?;
                    let mut grid_cfg = c.clone();
                    grid_cfg.grid.count = 2;
                    let curves = fit_curves(&s.data, &grid_cfg)?;
                    let obs = ObservationFits::compute(&curves, &s.data)?;
                    let c_hat = obs.constants(averaging_window(&s.data, &c)?)?[idx];
                    let res = residuals_from_theta(&s.data, curves.layout, &obs.theta);
                    let vc = variance_components(&s.data, &res)?;
                    Ok(((c_hat - target).powi(2), (vc.sigma2 - sim.sigma.powi(2)).powi(2)))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            let k = errs.len() as f64;
            Ok(RatePoint {
                m,
                h,
                mse_constant: errs.iter().map(|e| e.0).sum::<f64>() / k,
                mse_sigma2: errs.iter().map(|e| e.1).sum::<f64>() / k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport {
        coefficient,
        replicates: reps,
        points,
    })
}
