//! Standardized blocks and the within-/between-set correlation matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, DEFAULT_RANK_TOL};

/// Two numeric blocks observed on the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBlockData {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    x_names: Vec<String>,
    y_names: Vec<String>,
}

impl TwoBlockData {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        x_names: Vec<String>,
        y_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "blocks have {} and {} rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() < 2 {
            return Err(Error::Data(format!("need at least 2 rows, got {}", x.nrows())));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Data("both blocks need at least one column".into()));
        }
        if x_names.len() != x.ncols() || y_names.len() != y.ncols() {
            return Err(Error::ShapeMismatch("column names do not match block widths".into()));
        }
        for (block, names) in [(&x, &x_names), (&y, &y_names)] {
            for (j, name) in names.iter().enumerate() {
                let col = block.column(j);
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("column `{name}` has non-finite values")));
                }
                if column_sd(col.as_slice()) <= 0.0 {
                    return Err(Error::ZeroVariance(name.clone()));
                }
            }
        }
        Ok(TwoBlockData {
            x,
            y,
            x_names,
            y_names,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn y_names(&self) -> &[String] {
        &self.y_names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    /// Same data with the rows of the Y block reordered by `perm`.
    pub fn with_y_rows_permuted(&self, perm: &[usize]) -> TwoBlockData {
        let y = DMatrix::from_fn(self.y.nrows(), self.y.ncols(), |i, j| self.y[(perm[i], j)]);
        TwoBlockData { y, ..self.clone() }
    }
}

fn column_mean(col: &[f64]) -> f64 {
    col.iter().sum::<f64>() / col.len() as f64
}

fn column_sd(col: &[f64]) -> f64 {
    let mean = column_mean(col);
    let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (col.len() - 1) as f64).sqrt()
}

fn standardize_block(m: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (j, name) in names.iter().enumerate() {
        let col = m.column(j);
        let mean = column_mean(col.as_slice());
        let sd = column_sd(col.as_slice());
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance(name.clone()));
        }
        for i in 0..m.nrows() {
            out[(i, j)] = (m[(i, j)] - mean) / sd;
        }
    }
    Ok(out)
}

/// Standardized copies of both blocks: zero mean and unit sample standard
/// deviation (denominator `n - 1`) per column.
pub fn standardize(data: &TwoBlockData) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((
        standardize_block(&data.x, &data.x_names)?,
        standardize_block(&data.y, &data.y_names)?,
    ))
}

/// Rxx, Ryy, Rxy and the numerical ranks of the within-set matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationStructure {
    #[serde(with = "crate::serde_mat::sym")]
    pub rxx: SymMatrix,
    #[serde(with = "crate::serde_mat::sym")]
    pub ryy: SymMatrix,
    #[serde(with = "crate::serde_mat::matrix")]
    pub rxy: DMatrix<f64>,
    pub rank_xx: usize,
    pub rank_yy: usize,
}

impl CorrelationStructure {
    /// Builds the structure from precomputed matrices, checking shapes and
    /// computing ranks with `rank_tol`.
    pub fn from_matrices(
        rxx: SymMatrix,
        ryy: SymMatrix,
        rxy: DMatrix<f64>,
        rank_tol: f64,
    ) -> Result<Self> {
        if rxy.nrows() != rxx.dim() || rxy.ncols() != ryy.dim() {
            return Err(Error::ShapeMismatch(format!(
                "rxy is {}x{} but rxx is {}x{} and ryy is {}x{}",
                rxy.nrows(),
                rxy.ncols(),
                rxx.dim(),
                rxx.dim(),
                ryy.dim(),
                ryy.dim()
            )));
        }
        let rank_xx = rxx.rank(rank_tol);
        let rank_yy = ryy.rank(rank_tol);
        if rank_xx == 0 || rank_yy == 0 {
            return Err(Error::Data("within-set correlation matrix has rank zero".into()));
        }
        Ok(CorrelationStructure {
            rxx,
            ryy,
            rxy,
            rank_xx,
            rank_yy,
        })
    }

    pub fn p(&self) -> usize {
        self.rxy.nrows()
    }

    pub fn q(&self) -> usize {
        self.rxy.ncols()
    }
}

fn cross_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    (a.transpose() * b).map(|v| (v / (n - 1.0)).clamp(-1.0, 1.0))
}

fn within_correlation(a: &DMatrix<f64>) -> Result<SymMatrix> {
    let mut r = cross_correlation(a, a);
    for i in 0..r.nrows() {
        r[(i, i)] = 1.0;
    }
    SymMatrix::new(r)
}

/// Correlation structure computed from standardized blocks.
pub fn correlations_from_standardized(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<CorrelationStructure> {
    CorrelationStructure::from_matrices(
        within_correlation(xs)?,
        within_correlation(ys)?,
        cross_correlation(xs, ys),
        DEFAULT_RANK_TOL,
    )
}

pub fn correlations(data: &TwoBlockData) -> Result<CorrelationStructure> {
    let (xs, ys) = standardize(data)?;
    correlations_from_standardized(&xs, &ys)
}
