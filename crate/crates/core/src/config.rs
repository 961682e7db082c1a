//! Fit configuration and the coefficient layout shared by every estimator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ClusterDataset;
use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// How functional coefficients are evaluated away from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// A fresh local fit at every requested point.
    #[default]
    Exact,
    /// Linear interpolation between grid fits. Faster, and only defined
    /// inside the grid.
    Interp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub count: usize,
    /// Explicit `[a, b]`; when absent the interval follows the data range
    /// and the `trim` switch.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            count: 101,
            interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub h: f64,
    pub kernel: Kernel,
    pub grid: GridSpec,
    /// Bandwidth of the local-cubic pilot fit. Defaults to
    /// `(u_max - u_min) * n^(-1/7)`.
    pub h_pilot: Option<f64>,
    /// Local fits need at least this many times as many weighted rows as
    /// unknowns.
    pub min_local_obs_factor: f64,
    /// Relative ridge added to ill-conditioned normal matrices; 0 disables.
    pub ridge_eps: f64,
    /// Restrict the grid (and constant averaging) to
    /// `[u_min + c0 h, u_max - c0 h]`.
    pub trim: bool,
    /// Add a varying intercept `beta_0(u)` to the cluster-level part.
    pub intercept: bool,
    pub eval_mode: EvalMode,
    /// Subtract the plug-in bias before forming bands and tests.
    pub bias_correction: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            h: 0.15,
            kernel: Kernel::Epanechnikov,
            grid: GridSpec::default(),
            h_pilot: None,
            min_local_obs_factor: 2.0,
            ridge_eps: 0.0,
            trim: true,
            intercept: false,
            eval_mode: EvalMode::Exact,
            bias_correction: true,
        }
    }
}

impl FitConfig {
    pub fn with_bandwidth(h: f64) -> Self {
        FitConfig {
            h,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidConfig(format!("h must be positive, got {}", self.h)));
        }
        if let Some(hp) = self.h_pilot {
            if !(hp.is_finite() && hp > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "h_pilot must be positive, got {hp}"
                )));
            }
        }
        if self.grid.count < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid count must be at least 2, got {}",
                self.grid.count
            )));
        }
        if let Some((a, b)) = self.grid.interval {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidConfig(format!("grid interval [{a}, {b}] is empty")));
            }
        }
        if !(self.min_local_obs_factor >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "min_local_obs_factor must be >= 1, got {}",
                self.min_local_obs_factor
            )));
        }
        if !(self.ridge_eps >= 0.0 && self.ridge_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge_eps must be >= 0, got {}",
                self.ridge_eps
            )));
        }
        Ok(())
    }

    pub fn layout(&self, data: &ClusterDataset) -> Layout {
        Layout::new(data.p(), data.q(), self.intercept)
    }

    pub fn pilot_bandwidth(&self, data: &ClusterDataset) -> f64 {
        self.h_pilot.unwrap_or_else(|| {
            let (lo, hi) = data.u_range();
            (hi - lo) * (data.n() as f64).powf(-1.0 / 7.0)
        })
    }

    /// The interval `[a, b]` spanned by the evaluation grid.
    pub fn interval(&self, data: &ClusterDataset) -> Result<(f64, f64)> {
        if let Some(iv) = self.grid.interval {
            return Ok(iv);
        }
        let (lo, hi) = data.u_range();
        if !self.trim {
            return Ok((lo, hi));
        }
        let pad = self.kernel.support() * self.h;
        let (a, b) = (lo + pad, hi - pad);
        if a >= b {
            return Err(Error::InvalidConfig(format!(
                "bandwidth {} leaves no interior interval inside [{lo}, {hi}]",
                self.h
            )));
        }
        Ok((a, b))
    }

    /// Equally spaced evaluation grid over [`FitConfig::interval`].
    pub fn grid_points(&self, data: &ClusterDataset) -> Result<Vec<f64>> {
        let (a, b) = self.interval(data)?;
        let k = self.grid.count;
        Ok((0..k)
            .map(|i| {
                if i + 1 == k {
                    b
                } else {
                    a + (b - a) * i as f64 / (k - 1) as f64
                }
            })
            .collect())
    }
}

/// Identifies one scalar functional coefficient.
///
/// `Alpha { k, j }` is component `j` (1-based) of `alpha_k`, the loading of
/// `X_j` on cluster covariate `z_k` (`k = 0` is the baseline). `Beta(j)` is
/// the coefficient of `z_j`; `Beta(0)` is the intercept when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CoefId {
    Alpha { k: usize, j: usize },
    Beta(usize),
}

impl fmt::Display for CoefId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefId::Alpha { k, j } => write!(f, "alpha_{k}_{j}"),
            CoefId::Beta(j) => write!(f, "beta_{j}"),
        }
    }
}

impl FromStr for CoefId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognized coefficient name {s:?}"));
        let parts: Vec<&str> = s.split('_').collect();
        match parts.as_slice() {
            ["alpha", k, j] => {
                let k = k.parse().map_err(|_| bad())?;
                let j: usize = j.parse().map_err(|_| bad())?;
                if j == 0 {
                    return Err(bad());
                }
                Ok(CoefId::Alpha { k, j })
            }
            ["beta", j] => Ok(CoefId::Beta(j.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl From<CoefId> for String {
    fn from(c: CoefId) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for CoefId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Column layout of `theta = (alpha_0, ..., alpha_q, [beta_0], beta)` and of
/// the design row `Gamma_ij = (X', z_1 X', ..., z_q X', [1], Z')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub p: usize,
    pub q: usize,
    pub intercept: bool,
}

impl Layout {
    pub fn new(p: usize, q: usize, intercept: bool) -> Self {
        Layout { p, q, intercept }
    }

    /// Number of coefficient functions, `(q + 1) p + q` (+1 with intercept).
    pub fn s(&self) -> usize {
        (self.q + 1) * self.p + self.q + usize::from(self.intercept)
    }

    /// Position of the first cluster-level coefficient.
    pub fn beta_start(&self) -> usize {
        (self.q + 1) * self.p
    }

    pub fn index(&self, id: CoefId) -> Option<usize> {
        match id {
            CoefId::Alpha { k, j } if k <= self.q && (1..=self.p).contains(&j) => {
                Some(k * self.p + j - 1)
            }
            CoefId::Beta(0) if self.intercept => Some(self.beta_start()),
            CoefId::Beta(j) if (1..=self.q).contains(&j) => {
                Some(self.beta_start() + usize::from(self.intercept) + j - 1)
            }
            _ => None,
        }
    }

    pub fn require(&self, id: CoefId) -> Result<usize> {
        self.index(id)
            .ok_or_else(|| Error::InvalidConfig(format!("coefficient {id} is not in the model")))
    }

    pub fn id(&self, index: usize) -> CoefId {
        let b = self.beta_start();
        if index < b {
            CoefId::Alpha {
                k: index / self.p,
                j: index % self.p + 1,
            }
        } else if self.intercept {
            CoefId::Beta(index - b)
        } else {
            CoefId::Beta(index - b + 1)
        }
    }

    pub fn ids(&self) -> Vec<CoefId> {
        (0..self.s()).map(|i| self.id(i)).collect()
    }

    /// Writes `Gamma_ij` for covariates `x` and cluster covariates `z`.
    pub fn fill_gamma(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.s());
        out[..self.p].copy_from_slice(x);
        for (k, zk) in z.iter().enumerate() {
            let block = &mut out[(k + 1) * self.p..(k + 2) * self.p];
            for (o, xv) in block.iter_mut().zip(x) {
                *o = zk * xv;
            }
        }
        let mut c = self.beta_start();
        if self.intercept {
            out[c] = 1.0;
            c += 1;
        }
        out[c..c + self.q].copy_from_slice(z);
    }
}
