//! Dense brute-force reference implementations and random small instances.
//! Nothing here calls the library's solvers.

#![allow(dead_code)]

use clustervc::{Cluster, ClusterDataset, Kernel, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

/// Solves `a x = b` (b has several columns) by Gaussian elimination with
/// partial pivoting.
pub fn gauss_solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let k = b[0].len();
    let mut aug: Mat = (0..n)
        .map(|i| a[i].iter().chain(b[i].iter()).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        assert!(d != 0.0, "singular oracle system");
        for r in 0..n {
            if r != col {
                let f = aug[r][col] / d;
                if f != 0.0 {
                    for c in col..n + k {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..k).map(|c| aug[i][n + c] / aug[i][i]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, k) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..k)
                .map(|j| (0..m).map(|l| a[i][l] * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn kernel_value(kernel: &Kernel, t: f64) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    match kernel {
        Kernel::Epanechnikov => 0.75 * (1.0 - t * t),
        Kernel::Uniform => 0.5,
        Kernel::Triweight => 35.0 / 32.0 * (1.0 - t * t).powi(3),
        Kernel::Tabulated(_) => panic!("oracle has no tabulated kernel"),
    }
}

/// Regressor vector: `x`, `z_1 x`, ..., `z_q x`, optional 1, `z`.
pub fn gamma(x: &[f64], z: &[f64], intercept: bool) -> Vec<f64> {
    let mut g: Vec<f64> = x.to_vec();
    for zk in z {
        g.extend(x.iter().map(|v| zk * v));
    }
    if intercept {
        g.push(1.0);
    }
    g.extend_from_slice(z);
    g
}

pub struct Row {
    pub cluster: usize,
    pub y: f64,
    pub u: f64,
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub fn flatten(data: &ClusterDataset, intercept: bool) -> Vec<Row> {
    let mut out = Vec::new();
    for (i, c) in data.clusters().iter().enumerate() {
        for o in &c.obs {
            out.push(Row {
                cluster: i,
                y: o.y,
                u: o.u,
                x: o.x.clone(),
                gamma: gamma(&o.x, &c.z, intercept),
            });
        }
    }
    out
}

/// Dense weighted local polynomial fit over all rows.
pub struct DenseFit {
    /// `(d + 1) s` coefficients; block `j` is `theta^(j) / j!`.
    pub beta: Vec<f64>,
    /// First `s` rows of `(X'WX)^-1 X'W`, one column per row of the data
    /// (zero for rows outside the kernel support).
    pub smoother: Mat,
}

pub fn dense_local_fit(
    rows: &[Row],
    u0: f64,
    h: f64,
    kernel: &Kernel,
    degree: usize,
) -> DenseFit {
    let s = rows[0].gamma.len();
    let cols = (degree + 1) * s;
    let x: Mat = rows
        .iter()
        .map(|r| {
            let t = r.u - u0;
            (0..=degree)
                .flat_map(|j| r.gamma.iter().map(move |g| g * t.powi(j as i32)))
                .collect()
        })
        .collect();
    let w: Vec<f64> = rows.iter().map(|r| kernel_value(kernel, (r.u - u0) / h) / h).collect();
    let mut xtwx = vec![vec![0.0; cols]; cols];
    for (r, xr) in x.iter().enumerate() {
        for a in 0..cols {
            for b in 0..cols {
                xtwx[a][b] += xr[a] * w[r] * xr[b];
            }
        }
    }
    let xtw: Mat = (0..cols)
        .map(|a| x.iter().enumerate().map(|(r, xr)| xr[a] * w[r]).collect())
        .collect();
    let full = gauss_solve(&xtwx, &xtw);
    let y: Mat = rows.iter().map(|r| vec![r.y]).collect();
    let beta = matmul(&full, &y).into_iter().map(|v| v[0]).collect();
    DenseFit {
        beta,
        smoother: full[..s].to_vec(),
    }
}

/// `sigma2` and raw `Sigma` from residuals `r` (cluster-major).
pub fn dense_sigma(data: &ClusterDataset, r: &[Vec<f64>]) -> (f64, Mat, Vec<Vec<f64>>) {
    let p = data.p();
    let m = data.m();
    let mut rss = 0.0;
    let mut outer = vec![vec![0.0; p]; p];
    let mut inv_sum = vec![vec![0.0; p]; p];
    let mut es = Vec::new();
    for (i, c) in data.clusters().iter().enumerate() {
        let x: Mat = c.obs.iter().map(|o| o.x.clone()).collect();
        let xt = transpose(&x);
        let xtx = matmul(&xt, &x);
        let ri: Mat = r[i].iter().map(|v| vec![*v]).collect();
        let e: Vec<f64> = gauss_solve(&xtx, &matmul(&xt, &ri)).into_iter().map(|v| v[0]).collect();
        for (j, xr) in x.iter().enumerate() {
            let fitted: f64 = xr.iter().zip(&e).map(|(a, b)| a * b).sum();
            rss += (r[i][j] - fitted).powi(2);
        }
        let inv = gauss_solve(&xtx, &identity(p));
        for a in 0..p {
            for b in 0..p {
                outer[a][b] += e[a] * e[b];
                inv_sum[a][b] += inv[a][b];
            }
        }
        es.push(e);
    }
    let sigma2 = rss / (data.n() - m * p) as f64;
    let raw = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| (outer[a][b] - sigma2 * inv_sum[a][b]) / m as f64)
                .collect()
        })
        .collect();
    (sigma2, raw, es)
}

/// `S V S'` with `V = sigma2 I + blockdiag(x_i Sigma x_i')` materialized.
pub fn dense_variance(rows: &[Row], smoother: &Mat, sigma2: f64, sigma: &Mat) -> Mat {
    let n = rows.len();
    let mut v = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if rows[a].cluster == rows[b].cluster {
                let xa = &rows[a].x;
                let xb = &rows[b].x;
                let mut s = 0.0;
                for k in 0..xa.len() {
                    for l in 0..xb.len() {
                        s += xa[k] * sigma[k][l] * xb[l];
                    }
                }
                v[a][b] = s;
            }
        }
        v[a][a] += sigma2;
    }
    matmul(&matmul(smoother, &v), &transpose(smoother))
}

/// Plug-in bias: smoother of the linear fit at `u0` applied to the Taylor
/// remainder built from a dense cubic pilot fit.
pub fn dense_bias(rows: &[Row], u0: f64, h: f64, h_pilot: f64, kernel: &Kernel) -> Vec<f64> {
    let s = rows[0].gamma.len();
    let lin = dense_local_fit(rows, u0, h, kernel, 1);
    let cubic = dense_local_fit(rows, u0, h_pilot, kernel, 3);
    let b2 = &cubic.beta[2 * s..3 * s];
    let b3 = &cubic.beta[3 * s..4 * s];
    let remainder: Vec<f64> = rows
        .iter()
        .map(|r| {
            let t = r.u - u0;
            let g2: f64 = r.gamma.iter().zip(b2).map(|(g, b)| g * b).sum();
            let g3: f64 = r.gamma.iter().zip(b3).map(|(g, b)| g * b).sum();
            t * t * g2 + t * t * t * g3
        })
        .collect();
    lin.smoother
        .iter()
        .map(|row| row.iter().zip(&remainder).map(|(a, b)| a * b).sum())
        .collect()
}

/// Norm-wise relative difference `max|a - b| / max(max|b|, tiny)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub struct Instance {
    pub data: ClusterDataset,
    pub intercept: bool,
    pub kernel: Kernel,
    pub h: f64,
    pub h_pilot: f64,
    pub u0: f64,
}

/// A random instance with at most 50 rows whose local systems are well
/// posed at `u0` for both the linear fit and the cubic pilot.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=2usize);
    let q = rng.random_range(0..=1usize);
    let intercept = rng.random_bool(0.5);
    let kernel = match rng.random_range(0..3) {
        0 => Kernel::Epanechnikov,
        1 => Kernel::Uniform,
        _ => Kernel::Triweight,
    };
    let mut clusters = Vec::new();
    let mut n = 0;
    let target = rng.random_range(36..=50usize);
    let mut i = 0;
    while n < target {
        let size = rng.random_range(p + 2..=p + 7).min(target - n).max(p + 1);
        if n + size > 50 {
            break;
        }
        let z: Vec<f64> = (0..q).map(|_| rng.random_range(-1.5..1.5)).collect();
        let obs = (0..size)
            .map(|_| Observation {
                y: rng.random_range(-2.0..2.0),
                u: rng.random_range(0.0..1.0),
                x: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
            })
            .collect();
        clusters.push(Cluster::new(format!("c{i}"), z, obs));
        n += size;
        i += 1;
    }
    Instance {
        data: ClusterDataset::new(clusters).unwrap(),
        intercept,
        kernel,
        h: rng.random_range(0.6..1.2),
        h_pilot: rng.random_range(1.5..2.5),
        u0: rng.random_range(0.3..0.7),
    }
}

/// Relative differences between the library and the dense oracles for
/// `[local_fit, estimate_Sigma, estimate_variance, estimate_bias]`.
pub fn oracle_differences(seed: u64) -> [f64; 4] {
    use clustervc::inference::{estimate_bias, estimate_variance};
    use clustervc::varcomp::{estimate_Sigma, estimate_sigma2, ResidualSet};
    use clustervc::{local_fit, Degree, FitConfig};

    let inst = random_instance(seed);
    let data = &inst.data;
    let cfg = FitConfig {
        kernel: inst.kernel.clone(),
        h_pilot: Some(inst.h_pilot),
        min_local_obs_factor: 1.0,
        intercept: inst.intercept,
        ..FitConfig::with_bandwidth(inst.h)
    };
    let rows = flatten(data, inst.intercept);
    let s = rows[0].gamma.len();

    let fit = local_fit(data, inst.u0, &cfg, Degree::Linear).unwrap();
    let dense = dense_local_fit(&rows, inst.u0, inst.h, &inst.kernel, 1);
    let mut ours = fit.theta.clone();
    ours.extend(&fit.derivs[0]);
    let d_fit = rel_diff(&ours, &dense.beta);

    // Residuals: the responses themselves.
    let r: Vec<Vec<f64>> = data
        .clusters()
        .iter()
        .map(|c| c.obs.iter().map(|o| o.y).collect())
        .collect();
    let res = ResidualSet { r: r.clone() };
    let sigma2 = estimate_sigma2(data, &res).unwrap();
    let vc = estimate_Sigma(data, &res, sigma2).unwrap();
    let (o_sigma2, o_raw, _) = dense_sigma(data, &r);
    let mut ours: Vec<f64> = vc.sigma_raw.concat();
    ours.push(vc.sigma2);
    let mut theirs: Vec<f64> = o_raw.concat();
    theirs.push(o_sigma2);
    let d_sigma = rel_diff(&ours, &theirs);

    let var = estimate_variance(data, &cfg, inst.u0, &vc).unwrap();
    let dense_var = dense_variance(&rows, &dense.smoother, vc.sigma2, &vc.sigma);
    let d_var = rel_diff(&var.cov.concat(), &dense_var.concat());

    let bias = estimate_bias(data, &cfg, inst.u0).unwrap();
    let dense_b = dense_bias(&rows, inst.u0, inst.h, inst.h_pilot, &inst.kernel);
    assert_eq!(dense_b.len(), s);
    let d_bias = rel_diff(&bias.values, &dense_b);

    [d_fit, d_sigma, d_var, d_bias]
}
