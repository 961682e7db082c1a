//! Local polynomial kernel-weighted least squares for the functional
//! coefficients, their derivatives and the constant-coefficient averages.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CoefId, EvalMode, FitConfig, Layout};
use crate::data::ClusterDataset;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{factor_with_ridge, SpdFactor};

/// Degree of the local Taylor expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degree {
    Linear,
    Cubic,
}

impl Degree {
    pub fn order(self) -> usize {
        match self {
            Degree::Linear => 1,
            Degree::Cubic => 3,
        }
    }
}

/// The full local design at `u0`: rows `(Gamma, t Gamma, ..., t^d Gamma)` with
/// `t = U_ij - u0`, cluster-major, including rows of zero weight.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub u0: f64,
    pub degree: Degree,
    pub layout: Layout,
    pub x: DMatrix<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn build_design(
    data: &ClusterDataset,
    u0: f64,
    degree: Degree,
    h: f64,
    kernel: &Kernel,
    layout: Layout,
) -> DesignBundle {
    let s = layout.s();
    let cols = (degree.order() + 1) * s;
    let mut x = DMatrix::zeros(data.n(), cols);
    let mut w = Vec::with_capacity(data.n());
    let mut y = Vec::with_capacity(data.n());
    let mut row = vec![0.0; cols];
    for (r, (i, o)) in data.rows().enumerate() {
        fill_row(&layout, degree, &o.x, &data.clusters()[i].z, o.u - u0, &mut row);
        for (c, v) in row.iter().enumerate() {
            x[(r, c)] = *v;
        }
        w.push(kernel.scaled(o.u - u0, h));
        y.push(o.y);
    }
    DesignBundle {
        u0,
        degree,
        layout,
        x,
        w,
        y,
    }
}

fn fill_row(layout: &Layout, degree: Degree, x: &[f64], z: &[f64], t: f64, out: &mut [f64]) {
    let s = layout.s();
    let (gamma, rest) = out.split_at_mut(s);
    layout.fill_gamma(x, z, gamma);
    let mut power = 1.0;
    for block in rest.chunks_exact_mut(s) {
        power *= t;
        for (o, g) in block.iter_mut().zip(gamma.iter()) {
            *o = g * power;
        }
    }
    debug_assert_eq!(rest.len(), degree.order() * s);
}

/// The linear map from responses in the kernel support to `theta(u0)`.
#[derive(Debug, Clone)]
pub struct Smoother {
    /// Global cluster-major row indices with positive kernel weight.
    pub rows: Vec<usize>,
    /// `s x rows.len()`: the first `s` rows of `(X'WX)^-1 X'W`.
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LocalFit {
    pub u0: f64,
    pub degree: Degree,
    /// `theta(u0) = (alpha_0, ..., alpha_q, beta)`, length `s`.
    pub theta: Vec<f64>,
    /// Derivative blocks `theta^(j)(u0)`, `j = 1..=degree`.
    pub derivs: Vec<Vec<f64>>,
    pub smoother: Smoother,
    /// Whether the ridge fallback was needed.
    pub regularized: bool,
    pub condition: f64,
}

impl LocalFit {
    pub fn support(&self) -> usize {
        self.smoother.rows.len()
    }

    /// Raw Taylor block `j` (`theta^(j) / j!`), `j = 0..=degree`.
    pub fn taylor_block(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            return self.theta.clone();
        }
        let f = factorial(j);
        self.derivs[j - 1].iter().map(|v| v / f).collect()
    }
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|v| v as f64).product()
}

/// Kernel-weighted system restricted to rows with positive weight.
struct LocalSystem {
    rows: Vec<usize>,
    sqrt_w: Vec<f64>,
    xs: DMatrix<f64>,
    factor: SpdFactor,
    regularized: bool,
    full: DVector<f64>,
}

impl LocalSystem {
    fn build(
        data: &ClusterDataset,
        layout: Layout,
        u0: f64,
        degree: Degree,
        h: f64,
        cfg: &FitConfig,
    ) -> Result<LocalSystem> {
        let s = layout.s();
        let cols = (degree.order() + 1) * s;
        let mut rows = Vec::new();
        let mut sqrt_w = Vec::new();
        for (r, (_, o)) in data.rows().enumerate() {
            let w = cfg.kernel.scaled(o.u - u0, h);
            if w > 0.0 {
                rows.push(r);
                sqrt_w.push(w.sqrt());
            }
        }
        let required = (cfg.min_local_obs_factor * cols as f64).ceil() as usize;
        if rows.len() < required {
            return Err(Error::InsufficientLocalData {
                u0,
                support: rows.len(),
                required,
            });
        }

        let mut xs = DMatrix::zeros(rows.len(), cols);
        let mut ys = DVector::zeros(rows.len());
        let mut buf = vec![0.0; cols];
        let mut k = 0;
        for (r, (i, o)) in data.rows().enumerate() {
            if k < rows.len() && rows[k] == r {
                fill_row(&layout, degree, &o.x, &data.clusters()[i].z, o.u - u0, &mut buf);
                let sw = sqrt_w[k];
                for (c, v) in buf.iter().enumerate() {
                    xs[(k, c)] = v * sw;
                }
                ys[k] = o.y * sw;
                k += 1;
            }
        }
        let normal = xs.tr_mul(&xs);
        let (factor, regularized) = factor_with_ridge(&normal, cfg.ridge_eps)
            .map_err(|condition| Error::SingularSystem { u0, condition })?;
        let full = factor.solve_vec(&xs.tr_mul(&ys));
        Ok(LocalSystem {
            rows,
            sqrt_w,
            xs,
            factor,
            regularized,
            full,
        })
    }

    fn theta(&self, s: usize) -> Vec<f64> {
        self.full.as_slice()[..s].to_vec()
    }

    fn into_fit(self, u0: f64, degree: Degree, s: usize) -> LocalFit {
        // (X'WX)^-1 X'W restricted to the support: solve against X_s' diag(sqrt w).
        let mut t = self.xs.transpose();
        for (k, sw) in self.sqrt_w.iter().enumerate() {
            t.column_mut(k).scale_mut(*sw);
        }
        self.factor.solve_in_place(&mut t);
        let matrix = t.rows(0, s).into_owned();
        let theta = self.theta(s);
        let derivs = (1..=degree.order())
            .map(|j| {
                let f = factorial(j);
                self.full.as_slice()[j * s..(j + 1) * s]
                    .iter()
                    .map(|v| v * f)
                    .collect()
            })
            .collect();
        LocalFit {
            u0,
            degree,
            theta,
            derivs,
            smoother: Smoother {
                rows: self.rows,
                matrix,
            },
            regularized: self.regularized,
            condition: self.factor.condition(),
        }
    }
}

/// Minimizes the kernel-weighted local least squares criterion at `u0` with
/// bandwidth `cfg.h`.
pub fn local_fit(data: &ClusterDataset, u0: f64, cfg: &FitConfig, degree: Degree) -> Result<LocalFit> {
    local_fit_bandwidth(data, u0, cfg, degree, cfg.h)
}

pub(crate) fn local_fit_bandwidth(
    data: &ClusterDataset,
    u0: f64,
    cfg: &FitConfig,
    degree: Degree,
    h: f64,
) -> Result<LocalFit> {
    let layout = cfg.layout(data);
    let sys = LocalSystem::build(data, layout, u0, degree, h, cfg)?;
    Ok(sys.into_fit(u0, degree, layout.s()))
}

/// `theta(u0)` only, without the smoother rows.
pub fn local_theta(data: &ClusterDataset, u0: f64, cfg: &FitConfig) -> Result<Vec<f64>> {
    let layout = cfg.layout(data);
    let sys = LocalSystem::build(data, layout, u0, Degree::Linear, cfg.h, cfg)?;
    Ok(sys.theta(layout.s()))
}

/// Local-linear fits over the evaluation grid.
#[derive(Debug, Clone)]
pub struct CoefficientCurves {
    pub grid: Vec<f64>,
    pub fits: Vec<LocalFit>,
    pub interval: (f64, f64),
    pub layout: Layout,
    pub config: FitConfig,
}

impl CoefficientCurves {
    /// Values of one coefficient along the grid.
    pub fn values(&self, id: CoefId) -> Result<Vec<f64>> {
        let idx = self.layout.require(id)?;
        Ok(self.fits.iter().map(|f| f.theta[idx]).collect())
    }

    /// First derivative of one coefficient along the grid.
    pub fn derivative(&self, id: CoefId) -> Result<Vec<f64>> {
        let idx = self.layout.require(id)?;
        Ok(self.fits.iter().map(|f| f.derivs[0][idx]).collect())
    }

    /// Linear interpolation of `theta` at `u`; `None` outside the grid.
    pub fn interpolate(&self, u: f64) -> Option<Vec<f64>> {
        let (first, last) = (self.grid[0], *self.grid.last()?);
        if !(u >= first && u <= last) {
            return None;
        }
        let hi = self.grid.partition_point(|g| *g < u);
        if self.grid[hi] == u || hi == 0 {
            return Some(self.fits[hi].theta.clone());
        }
        let lo = hi - 1;
        let frac = (u - self.grid[lo]) / (self.grid[hi] - self.grid[lo]);
        Some(
            self.fits[lo]
                .theta
                .iter()
                .zip(&self.fits[hi].theta)
                .map(|(a, b)| a + frac * (b - a))
                .collect(),
        )
    }
}

pub fn fit_curves(data: &ClusterDataset, cfg: &FitConfig) -> Result<CoefficientCurves> {
    cfg.validate()?;
    let grid = cfg.grid_points(data)?;
    let interval = cfg.interval(data)?;
    let fits = grid
        .par_iter()
        .map(|&u| local_fit(data, u, cfg, Degree::Linear))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientCurves {
        grid,
        fits,
        interval,
        layout: cfg.layout(data),
        config: cfg.clone(),
    })
}

/// `theta` at arbitrary points. In `Interp` mode points inside the grid are
/// interpolated and the rest fitted exactly.
pub fn evaluate_at(
    curves: &CoefficientCurves,
    data: &ClusterDataset,
    points: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &curves.config;
    points
        .par_iter()
        .map(|&u| match cfg.eval_mode {
            EvalMode::Interp => match curves.interpolate(u) {
                Some(t) => Ok(t),
                None => local_theta(data, u, cfg),
            },
            EvalMode::Exact => local_theta(data, u, cfg),
        })
        .collect()
}

/// `theta` evaluated at every observation point, cluster-major.
#[derive(Debug, Clone)]
pub struct ObservationFits {
    pub u: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
}

impl ObservationFits {
    pub fn compute(curves: &CoefficientCurves, data: &ClusterDataset) -> Result<Self> {
        let u: Vec<f64> = data.rows().map(|(_, o)| o.u).collect();
        let theta = evaluate_at(curves, data, &u)?;
        Ok(ObservationFits { u, theta })
    }

    /// Per-coefficient averages over observation points inside `window`
    /// (all points when `None`).
    pub fn constants(&self, window: Option<(f64, f64)>) -> Result<Vec<f64>> {
        average_rows(
            self.u
                .iter()
                .zip(&self.theta)
                .filter(|(u, _)| in_window(**u, window))
                .map(|(_, t)| t.as_slice()),
        )
    }
}

fn in_window(u: f64, window: Option<(f64, f64)>) -> bool {
    window.is_none_or(|(a, b)| u >= a && u <= b)
}

fn average_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidConfig(
            "no observation points inside the averaging window".into(),
        ));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Arithmetic mean of pointwise estimates of a constant coefficient.
pub fn constant_from_pointwise(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Observation points used for constant averaging: the grid interval when
/// trimming, everything otherwise.
pub fn averaging_window(data: &ClusterDataset, cfg: &FitConfig) -> Result<Option<(f64, f64)>> {
    if cfg.trim {
        Ok(Some(cfg.interval(data)?))
    } else {
        Ok(None)
    }
}

/// Averages of the pointwise estimates over the observation points in
/// `window`, for every coefficient. Fits are run only where needed.
pub fn constants_within(
    data: &ClusterDataset,
    cfg: &FitConfig,
    window: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let points: Vec<f64> = data
        .rows()
        .map(|(_, o)| o.u)
        .filter(|u| in_window(*u, window))
        .collect();
    let thetas = points
        .par_iter()
        .map(|&u| local_theta(data, u, cfg))
        .collect::<Result<Vec<_>>>()?;
    average_rows(thetas.iter().map(|t| t.as_slice()))
}

/// All constant-coefficient estimates `C_hat`.
pub fn estimate_constants(data: &ClusterDataset, cfg: &FitConfig) -> Result<Vec<f64>> {
    constants_within(data, cfg, averaging_window(data, cfg)?)
}

/// `C_hat` for one coefficient.
pub fn estimate_constant(data: &ClusterDataset, cfg: &FitConfig, id: CoefId) -> Result<f64> {
    let idx = cfg.layout(data).require(id)?;
    Ok(estimate_constants(data, cfg)?[idx])
}

/// Per-cluster fits that ignore the cluster-level structure.
#[derive(Debug, Clone)]
pub struct UnstructuredCurves {
    pub grid: Vec<f64>,
    /// Whether a cluster-specific intercept function was fitted (last entry
    /// of each coefficient vector).
    pub intercept: bool,
    /// `per_cluster[i][g]`: coefficients of cluster `i` at `grid[g]`.
    pub per_cluster: Vec<Vec<Vec<f64>>>,
}

/// Fits each cluster separately with local-linear regression of `y` on `X`
/// (plus a cluster intercept function whenever the model carries cluster
/// covariates or an intercept).
pub fn fit_unstructured(
    data: &ClusterDataset,
    cfg: &FitConfig,
    grid: &[f64],
) -> Result<UnstructuredCurves> {
    let intercept = cfg.intercept || data.q() > 0;
    let local_cfg = FitConfig {
        intercept,
        ..cfg.clone()
    };
    let per_cluster = data
        .clusters()
        .par_iter()
        .map(|c| {
            let mut c = c.clone();
            c.z.clear();
            let single = ClusterDataset::new(vec![c])?;
            grid.iter().map(|&u| local_theta(&single, u, &local_cfg)).collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnstructuredCurves {
        grid: grid.to_vec(),
        intercept,
        per_cluster,
    })
}
