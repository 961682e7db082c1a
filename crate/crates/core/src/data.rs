//! Clustered observations `(y_ij, U_ij, X_ij)` with cluster covariates `Z_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub u: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub z: Vec<f64>,
    pub obs: Vec<Observation>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, z: Vec<f64>, obs: Vec<Observation>) -> Self {
        Cluster {
            id: id.into(),
            z,
            obs,
        }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// A validated clustered dataset. Construction through [`ClusterDataset::new`]
/// guarantees consistent dimensions, finite values and a nondegenerate range
/// of the index covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDataset {
    clusters: Vec<Cluster>,
    p: usize,
    q: usize,
    n: usize,
    u_min: f64,
    u_max: f64,
    offsets: Vec<usize>,
    small: Vec<usize>,
}

impl ClusterDataset {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let first = clusters.first().ok_or(Error::EmptyDataset)?;
        let q = first.z.len();
        let p = first
            .obs
            .first()
            .map(|o| o.x.len())
            .ok_or_else(|| Error::DimensionMismatch(format!("cluster {} is empty", first.id)))?;
        if p == 0 {
            return Err(Error::DimensionMismatch(
                "individual covariate vector x must be non-empty".into(),
            ));
        }

        let mut offsets = Vec::with_capacity(clusters.len() + 1);
        let mut n = 0;
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut small = Vec::new();
        for (i, c) in clusters.iter().enumerate() {
            if c.obs.is_empty() {
                return Err(Error::DimensionMismatch(format!("cluster {} is empty", c.id)));
            }
            if c.z.len() != q {
                return Err(Error::DimensionMismatch(format!(
                    "cluster {} has {} cluster covariates, expected {q}",
                    c.id,
                    c.z.len()
                )));
            }
            if c.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("z of cluster {}", c.id)));
            }
            for (j, o) in c.obs.iter().enumerate() {
                if o.x.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "cluster {} observation {j} has {} covariates, expected {p}",
                        c.id,
                        o.x.len()
                    )));
                }
                if !o.y.is_finite() || !o.u.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteValue(format!(
                        "cluster {} observation {j}",
                        c.id
                    )));
                }
                u_min = u_min.min(o.u);
                u_max = u_max.max(o.u);
            }
            if c.obs.len() <= p {
                small.push(i);
            }
            offsets.push(n);
            n += c.obs.len();
        }
        offsets.push(n);
        if u_max <= u_min {
            return Err(Error::DegenerateIndex(u_min));
        }
        Ok(ClusterDataset {
            clusters,
            p,
            q,
            n,
            u_min,
            u_max,
            offsets,
            small,
        })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn into_clusters(self) -> Vec<Cluster> {
        self.clusters
    }

    /// Dimension of `X_ij`.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Dimension of `Z_i`.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Total observation count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of clusters.
    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn u_range(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }

    /// Global (cluster-major) index of the first row of cluster `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Clusters with `n_i <= p`, which cannot carry a per-cluster least
    /// squares fit and are left out of variance-component estimation.
    pub fn small_clusters(&self) -> &[usize] {
        &self.small
    }

    /// Iterates `(cluster index, observation)` in cluster-major order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, &Observation)> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.obs.iter().map(move |o| (i, o)))
    }

    /// The dataset with cluster `i` removed.
    pub fn without_cluster(&self, i: usize) -> Result<ClusterDataset> {
        let clusters = self
            .clusters
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, c)| c.clone())
            .collect();
        ClusterDataset::new(clusters)
    }
}

/// Re-checks a dataset; idempotent.
pub fn validate_dataset(raw: &ClusterDataset) -> Result<ClusterDataset> {
    ClusterDataset::new(raw.clusters.clone())
}
