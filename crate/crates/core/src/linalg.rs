//! Symmetric positive (semi)definite solves for normal equations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest accepted condition estimate before a system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Pivoted Cholesky factorization of a Jacobi-equilibrated SPD matrix:
/// `D^-1 M D^-1 = P L L' P'`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    perm: Vec<usize>,
    scale: Vec<f64>,
    condition: f64,
}

impl SpdFactor {
    /// Factors `m`; returns the condition estimate on failure (infinite when
    /// the matrix is numerically rank deficient).
    pub fn new(m: &DMatrix<f64>) -> Result<SpdFactor, f64> {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            let d = m[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(f64::INFINITY);
            }
            scale.push(d.sqrt());
        }
        let mut a = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (scale[i] * scale[j]));
        let mut perm: Vec<usize> = (0..n).collect();
        let mut first_pivot = 0.0;
        let mut last_pivot = f64::INFINITY;
        for k in 0..n {
            // Pick the largest remaining diagonal entry.
            let (mut best, mut best_val) = (k, a[(k, k)]);
            for i in k + 1..n {
                if a[(i, i)] > best_val {
                    best = i;
                    best_val = a[(i, i)];
                }
            }
            if k == 0 {
                first_pivot = best_val;
            }
            if !(best_val > first_pivot * 1e-15) || !best_val.is_finite() {
                return Err(f64::INFINITY);
            }
            if best != k {
                a.swap_rows(k, best);
                a.swap_columns(k, best);
                perm.swap(k, best);
            }
            last_pivot = last_pivot.min(best_val);
            let lkk = best_val.sqrt();
            a[(k, k)] = lkk;
            for i in k + 1..n {
                a[(i, k)] /= lkk;
            }
            // The whole trailing block is kept symmetric so later pivot swaps
            // move valid entries.
            for j in k + 1..n {
                let ljk = a[(j, k)];
                if ljk == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    let v = a[(i, k)] * ljk;
                    a[(i, j)] -= v;
                }
            }
        }
        let condition = first_pivot / last_pivot;
        if condition > MAX_CONDITION {
            return Err(condition);
        }
        // Keep only the lower triangle.
        for j in 0..n {
            for i in 0..j {
                a[(i, j)] = 0.0;
            }
        }
        Ok(SpdFactor {
            l: a,
            perm,
            scale,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `M X = B` column by column, in place.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        debug_assert_eq!(b.nrows(), n);
        let mut work = vec![0.0; n];
        for c in 0..b.ncols() {
            for (k, w) in work.iter_mut().enumerate() {
                let r = self.perm[k];
                *w = b[(r, c)] / self.scale[r];
            }
            // L y = w
            for i in 0..n {
                let mut s = work[i];
                for k in 0..i {
                    s -= self.l[(i, k)] * work[k];
                }
                work[i] = s / self.l[(i, i)];
            }
            // L' v = y
            for i in (0..n).rev() {
                let mut s = work[i];
                for k in i + 1..n {
                    s -= self.l[(k, i)] * work[k];
                }
                work[i] = s / self.l[(i, i)];
            }
            for (k, w) in work.iter().enumerate() {
                let r = self.perm[k];
                b[(r, c)] = w / self.scale[r];
            }
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut m);
        DVector::from_column_slice(m.as_slice())
    }
}

/// Factors `m`, falling back to a ridge `eps * trace / dim` when `eps > 0`.
/// Returns the factor and whether the ridge was applied, or the condition
/// estimate when the system stays singular.
pub fn factor_with_ridge(m: &DMatrix<f64>, eps: f64) -> Result<(SpdFactor, bool), f64> {
    match SpdFactor::new(m) {
        Ok(f) => Ok((f, false)),
        Err(cond) if eps > 0.0 => {
            let n = m.nrows();
            let lambda = eps * m.trace() / n as f64;
            if !(lambda > 0.0) {
                return Err(cond);
            }
            let mut r = m.clone();
            for i in 0..n {
                r[(i, i)] += lambda;
            }
            SpdFactor::new(&r).map(|f| (f, true))
        }
        Err(cond) => Err(cond),
    }
}

/// Nearest positive semidefinite matrix in Frobenius norm: symmetrize and
/// clip negative eigenvalues to zero. Returns the input unchanged when it is
/// already PSD.
pub fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x;
        let f = SpdFactor::new(&a).unwrap();
        let got = f.solve_vec(&b);
        for i in 0..3 {
            assert_relative_eq!(got[i], x[i], epsilon = 1e-13);
        }
        assert!(f.condition() >= 1.0);
    }

    #[test]
    fn scale_does_not_affect_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e6]));
        let scaled = &d * &a * &d;
        let c1 = SpdFactor::new(&a).unwrap().condition();
        let c2 = SpdFactor::new(&scaled).unwrap().condition();
        assert_relative_eq!(c1, c2, max_relative = 1e-10);
    }

    #[test]
    fn singular_matrix_and_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::new(&a).is_err());
        assert!(factor_with_ridge(&a, 0.0).is_err());
        let (f, ridged) = factor_with_ridge(&a, 1e-6).unwrap();
        assert!(ridged);
        assert!(f.condition().is_finite());
        let z = DMatrix::zeros(2, 2);
        assert!(factor_with_ridge(&z, 1e-3).is_err());
    }

    #[test]
    fn psd_projection_clips_and_preserves() {
        let psd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(psd_projection(&psd), psd);
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = psd_projection(&indef);
        // eigenvalues 3 and -1; the projection keeps the eigenvalue-3 part.
        assert_relative_eq!(p[(0, 0)], 1.5, epsilon = 1e-12);
        assert_relative_eq!(p[(0, 1)], 1.5, epsilon = 1e-12);
        let e = SymmetricEigen::new(p).eigenvalues;
        assert!(e.iter().all(|&v| v >= -1e-12));
    }
}
