//! Dense symmetric linear algebra sized for desk-scale problems (p up to
//! a few hundred): Cholesky factorization, SPD inversion, and a cyclic
//! Jacobi eigensolver. No external solver dependency, so results are
//! bit-reproducible across platforms.

/// Every numerical tolerance used by this module and its tests lives here
/// so code and tests cannot drift apart.
pub mod tolerances {
    /// A Cholesky pivot at or below this fraction of the largest diagonal
    /// entry is treated as a failure of positive definiteness.
    pub const CHOLESKY_PIVOT_REL: f64 = 1e-12;
    /// Relative Frobenius error allowed when reconstructing A from L.
    pub const CHOLESKY_RECONSTRUCTION_REL: f64 = 1e-10;
    /// Jacobi stops once the off-diagonal Frobenius norm falls below this
    /// fraction of the full Frobenius norm.
    pub const JACOBI_OFFDIAG_REL: f64 = 1e-12;
    /// Jacobi sweep budget before giving up.
    pub const JACOBI_MAX_SWEEPS: usize = 100;
    /// Relative error allowed on A * invert_spd(A) versus the identity.
    pub const SPD_ROUNDTRIP_REL: f64 = 1e-8;
    /// Relative error allowed on eigenvalue sum versus trace.
    pub const EIGEN_TRACE_REL: f64 = 1e-10;
}

use crate::error::{Error, Result};

/// Dense symmetric matrix with full row-major storage. Both triangles are
/// kept in sync by every mutating method, so `get(i, j) == get(j, i)` holds
/// exactly, not merely up to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        SymmetricMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymmetricMatrix::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds from a function evaluated on the upper triangle (i <= j) and
    /// mirrored below.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymmetricMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.entries[i * dim + j] = v;
                m.entries[j * dim + i] = v;
            }
        }
        m
    }

    /// Accepts full row data, requiring exact symmetry.
    pub fn try_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        assert!(dim > 0, "matrix dimension must be positive");
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
                if rows[j][i] != v {
                    return Err(Error::MalformedInput(format!(
                        "asymmetric entries at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymmetricMatrix {
            dim,
            entries: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Writes both (i, j) and (j, i).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] = v;
        self.entries[j * self.dim + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest |entry| strictly above the diagonal.
    pub fn max_abs_offdiag(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                m = m.max(self.get(i, j).abs());
            }
        }
        m
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.entries[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Lower-triangular Cholesky factor L with A = L * L^T.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    dim: usize,
    // Row-major dense storage; entries above the diagonal are zero.
    lower: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Solves L y = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves L^T x = b in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves A x = b via the two triangular solves.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// Computes L z, the map that turns iid standard normals into draws
    /// with covariance A.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim);
        let n = self.dim;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.lower[i * n + k] * z[k];
            }
            out[i] = s;
        }
        out
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Fails with `NotPositiveDefinite` when a pivot falls at or below
/// `CHOLESKY_PIVOT_REL` times the largest diagonal entry of the input.
pub fn cholesky(a: &SymmetricMatrix) -> Result<CholeskyFactor> {
    let n = a.dim();
    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(a.get(i, i)));
    let pivot_floor = tolerances::CHOLESKY_PIVOT_REL * max_diag;
    let mut lower = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= lower[j * n + k] * lower[j * n + k];
        }
        if d <= pivot_floor {
            return Err(Error::NotPositiveDefinite {
                column: j,
                pivot: d,
            });
        }
        let ljj = d.sqrt();
        lower[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= lower[i * n + k] * lower[j * n + k];
            }
            lower[i * n + j] = s / ljj;
        }
    }
    Ok(CholeskyFactor { dim: n, lower })
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor:
/// two triangular solves per unit vector, then averaging the two triangles
/// so the result is exactly symmetric.
pub fn invert_spd(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = a.dim();
    let chol = cholesky(a)?;
    let mut cols = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        chol.solve_lower_in_place(&mut e);
        chol.solve_upper_in_place(&mut e);
        for i in 0..n {
            cols[i * n + j] = e[i];
        }
    }
    Ok(SymmetricMatrix::from_fn(n, |i, j| {
        0.5 * (cols[i * n + j] + cols[j * n + i])
    }))
}

/// All eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi
/// rotations. Converges when the off-diagonal Frobenius norm drops below
/// `JACOBI_OFFDIAG_REL` times the Frobenius norm of the input; gives up
/// with `NoConvergence` after `JACOBI_MAX_SWEEPS` sweeps.
pub fn symmetric_eigenvalues(a: &SymmetricMatrix) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = a.get(i, j);
        }
    }
    let threshold = tolerances::JACOBI_OFFDIAG_REL * a.frobenius_norm();

    let off_norm = |b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += b[i * n + j] * b[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = off_norm(&b) <= threshold;
    for _ in 0..tolerances::JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = b[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (b[q * n + q] - b[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b[k * n + p];
                    let bkq = b[k * n + q];
                    b[k * n + p] = c * bkp - s * bkq;
                    b[k * n + q] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[p * n + k];
                    let bqk = b[q * n + k];
                    b[p * n + k] = c * bpk - s * bqk;
                    b[q * n + k] = s * bpk + c * bqk;
                }
            }
        }
        converged = off_norm(&b) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: tolerances::JACOBI_MAX_SWEEPS,
        });
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| b[i * n + i]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd(dim: usize, rng: &mut StdRng) -> SymmetricMatrix {
        let m: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        SymmetricMatrix::from_fn(dim, |i, j| {
            let dot: f64 = (0..dim).map(|k| m[k][i] * m[k][j]).sum();
            if i == j {
                dot + 0.5
            } else {
                dot
            }
        })
    }

    #[test]
    fn cholesky_two_by_two_closed_form() {
        let a = SymmetricMatrix::try_from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((l.get(1, 1) - 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymmetricMatrix::try_from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn cholesky_reconstructs_input() {
        let mut rng = StdRng::seed_from_u64(11);
        for dim in [2usize, 5, 17, 40] {
            let a = random_spd(dim, &mut rng);
            let l = cholesky(&a).unwrap();
            let mut err = 0.0f64;
            for i in 0..dim {
                for j in 0..dim {
                    let mut s = 0.0;
                    for k in 0..=i.min(j) {
                        s += l.get(i, k) * l.get(j, k);
                    }
                    err += (s - a.get(i, j)).powi(2);
                }
            }
            let rel = err.sqrt() / a.frobenius_norm();
            assert!(
                rel <= tolerances::CHOLESKY_RECONSTRUCTION_REL,
                "dim {dim}: reconstruction error {rel:.3e}"
            );
        }
    }

    #[test]
    fn invert_two_by_two_closed_form() {
        let a = SymmetricMatrix::try_from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let inv = invert_spd(&a).unwrap();
        assert!((inv.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((inv.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((inv.get(1, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invert_round_trip_hits_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for dim in [3usize, 10, 30] {
            let a = random_spd(dim, &mut rng);
            let inv = invert_spd(&a).unwrap();
            let mut err = 0.0f64;
            for i in 0..dim {
                let col: Vec<f64> = (0..dim).map(|j| inv.get(j, i)).collect();
                let prod = a.mul_vec(&col);
                for (j, v) in prod.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    err = err.max((v - target).abs());
                }
            }
            assert!(
                err <= tolerances::SPD_ROUNDTRIP_REL,
                "dim {dim}: round-trip error {err:.3e}"
            );
        }
    }

    #[test]
    fn eigenvalues_two_by_two_closed_form() {
        let a = SymmetricMatrix::try_from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let eigs = symmetric_eigenvalues(&a).unwrap();
        assert!((eigs[0] - 1.0).abs() < 1e-12);
        assert!((eigs[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_sum_matches_trace() {
        let mut rng = StdRng::seed_from_u64(23);
        for dim in [2usize, 6, 21, 50] {
            let a = SymmetricMatrix::from_fn(dim, |i, j| {
                if i == j {
                    rng.gen_range(0.5..2.0)
                } else {
                    rng.gen_range(-0.5..0.5)
                }
            });
            let eigs = symmetric_eigenvalues(&a).unwrap();
            let sum: f64 = eigs.iter().sum();
            let rel = (sum - a.trace()).abs() / a.trace().abs().max(1.0);
            assert!(
                rel <= tolerances::EIGEN_TRACE_REL,
                "dim {dim}: trace mismatch {rel:.3e}"
            );
        }
    }

    #[test]
    fn eigenvalues_of_diagonal_matrix_need_no_sweeps() {
        let mut a = SymmetricMatrix::zeros(4);
        for (i, v) in [4.0, 1.0, 3.0, 2.0].iter().enumerate() {
            a.set(i, i, *v);
        }
        let eigs = symmetric_eigenvalues(&a).unwrap();
        assert_eq!(eigs, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn symmetry_is_exact_after_set() {
        let mut a = SymmetricMatrix::zeros(5);
        a.set(1, 3, 0.123456789);
        assert_eq!(a.get(3, 1), a.get(1, 3));
    }
}
