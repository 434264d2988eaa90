//! Dense symmetric-matrix kernels and truncated SVD.
//!
//! Everything here is a pure function of its inputs. Both decompositions are
//! cyclic Jacobi sweeps in a fixed pair order, with ordering and sign
//! conventions fixed on top, so results are reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Maximum tolerated `|a_ij - a_ji|` when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues more negative than `-PSD_TOL * lambda_max` reject the input.
pub const PSD_TOL: f64 = 1e-8;

/// A square matrix known to be symmetric.
///
/// The stored values are exactly symmetric: construction averages the input
/// with its transpose after checking the asymmetry is within [`SYMMETRY_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let max_asymmetry = max_asymmetry(&m);
        if !(max_asymmetry <= SYMMETRY_TOL) {
            return Err(Error::NotSymmetric { max_asymmetry });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(values: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Number of eigenvalues above `rank_tol * lambda_max`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let eig = sym_eig(self);
        let cutoff = rank_cutoff(&eig.values, rank_tol);
        eig.values.iter().filter(|&&l| l > cutoff).count()
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst || d.is_nan() {
                worst = d;
            }
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    if n == 0 {
        return SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let (eigenvalues, eigenvectors) = jacobi_eigen(&m.0);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the sweep order among ties
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi on a symmetric matrix: unsorted eigenvalues and eigenvectors.
fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    let scale = m.norm();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for j in 0..n {
            for i in 0..j {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= f64::EPSILON * 1e-2 * scale {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 || apq.abs() <= f64::EPSILON * 1e-3 * (a[(p, p)].abs() + a[(q, q)].abs()).max(f64::MIN_POSITIVE) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// One-sided Jacobi on a tall matrix (`rows >= cols`).
///
/// Returns unsorted singular values, left vectors (columns, normalised where
/// the singular value is nonzero, zero otherwise) and orthogonal right vectors.
fn jacobi_svd_tall(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = c * t;
                for k in 0..a.nrows() {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * x - s * y;
                    a[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    for (j, &s) in sv.iter().enumerate() {
        if s > 0.0 {
            a.column_mut(j).scale_mut(1.0 / s);
        }
    }
    (sv, a, v)
}

/// Replaces near-null left vectors with an orthonormal completion of the rest.
fn complete_orthonormal(u: &mut DMatrix<f64>, d: &DVector<f64>) {
    let rows = u.nrows();
    let cutoff = d.iter().copied().fold(0.0_f64, f64::max) * rows.max(u.ncols()) as f64 * f64::EPSILON;
    let mut basis = 0;
    for j in 0..u.ncols() {
        if d[j] > cutoff && d[j] > 0.0 {
            continue;
        }
        loop {
            let mut cand = DVector::<f64>::zeros(rows);
            cand[basis % rows] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for i in 0..u.ncols() {
                    if i == j || (i > j && !(d[i] > cutoff)) {
                        continue;
                    }
                    let proj = u.column(i).dot(&cand);
                    cand -= u.column(i) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(j, &(cand / norm));
                break;
            }
            if basis > 2 * rows {
                break;
            }
        }
    }
}

fn rank_cutoff(values: &DVector<f64>, rank_tol: f64) -> f64 {
    let lambda_max = values.iter().copied().fold(0.0_f64, f64::max);
    rank_tol * lambda_max
}

/// Matrix power applied to the eigenvalues of a PSD matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exponent {
    Half,
    NegHalf,
    NegOne,
}

impl Exponent {
    fn apply(self, lambda: f64) -> f64 {
        match self {
            Exponent::Half => lambda.sqrt(),
            Exponent::NegHalf => 1.0 / lambda.sqrt(),
            Exponent::NegOne => 1.0 / lambda,
        }
    }
}

/// Power of a symmetric PSD matrix in the Moore-Penrose sense.
///
/// Eigenvalues at or below `rank_tol * lambda_max` are mapped to exactly zero,
/// so `NegOne` yields the pseudoinverse and `NegHalf` its square root.
pub fn sym_power(m: &SymMatrix, exponent: Exponent, rank_tol: f64) -> Result<SymMatrix> {
    let eig = sym_eig(m);
    power_from_eigen(&eig, exponent, rank_tol)
}

pub(crate) fn power_from_eigen(eig: &SymEigen, exponent: Exponent, rank_tol: f64) -> Result<SymMatrix> {
    let n = eig.values.len();
    let lambda_max = eig.values.iter().copied().fold(0.0_f64, f64::max);
    if let Some(&worst) = eig.values.as_slice().last() {
        if worst < -PSD_TOL * lambda_max.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd {
                eigenvalue: worst,
                largest: lambda_max,
            });
        }
    }
    let cutoff = rank_tol * lambda_max;
    let mapped = DVector::from_iterator(
        n,
        eig.values
            .iter()
            .map(|&l| if l > cutoff { exponent.apply(l) } else { 0.0 }),
    );
    let scaled = &eig.vectors * DMatrix::from_diagonal(&mapped);
    let out = &scaled * eig.vectors.transpose();
    Ok(SymMatrix((&out + out.transpose()) * 0.5))
}

/// Leading singular triplets of a rectangular matrix.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// m x k, orthonormal columns.
    pub u: DMatrix<f64>,
    /// k singular values, non-increasing.
    pub d: DVector<f64>,
    /// n x k, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.d) * self.v.transpose()
    }
}

/// The `k` leading singular triplets of `m`.
///
/// Each left singular vector is signed so that its entry of largest absolute
/// value is positive; the matching right vector is flipped with it.
pub fn truncated_svd(m: &DMatrix<f64>, k: usize) -> Result<SvdFactors> {
    let (rows, cols) = m.shape();
    let full = rows.min(cols);
    if k == 0 || k > full {
        return Err(Error::InvalidArgument(format!(
            "rank {k} out of range for a {rows}x{cols} matrix (1..={full})"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let (sv, u_full, v_full) = full_svd(m);

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut d = DVector::zeros(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        u.set_column(dst, &u_full.column(src));
        v.set_column(dst, &v_full.column(src));
        d[dst] = sv[src];
    }
    complete_orthonormal(&mut u, &d);
    complete_orthonormal(&mut v, &d);
    for j in 0..k {
        let pivot = u
            .column(j)
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok(SvdFactors { u, d, v })
}

fn full_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    if m.nrows() >= m.ncols() {
        jacobi_svd_tall(m)
    } else {
        let (sv, u, v) = jacobi_svd_tall(&m.transpose());
        (sv, v, u)
    }
}

/// Singular values of `m`, non-increasing.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let (mut sv, _, _) = full_svd(m);
    sv.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(sv)
}
