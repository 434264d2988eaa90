//! Classic canonical correlation analysis and biplot factorizations of Rxy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agls::{weighted_ss, FitResult, GlsWeights};
use crate::correlation::CorrelationStructure;
use crate::error::{Error, Result};
use crate::linalg::{sym_power, truncated_svd, Exponent, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcaSolution {
    /// `min(p, q)` values, non-increasing. Entries past the within-set rank
    /// are exact zeros flagged in `structural_zero`.
    #[serde(with = "crate::serde_mat::vector")]
    pub canonical_correlations: DVector<f64>,
    pub structural_zero: Vec<bool>,
    /// Canonical weights for the retained axes, p x m.
    #[serde(with = "crate::serde_mat::matrix")]
    pub a_weights: DMatrix<f64>,
    /// q x m.
    #[serde(with = "crate::serde_mat::matrix")]
    pub b_weights: DMatrix<f64>,
    /// n x m, unit variance columns.
    #[serde(with = "crate::serde_mat::matrix")]
    pub u_variates: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub v_variates: DMatrix<f64>,
}

impl CcaSolution {
    pub fn retained(&self) -> usize {
        self.a_weights.ncols()
    }

    /// Standard coordinates and singular values such that
    /// `a diag(d) b'` is the rank-k GLS approximation of Rxy.
    pub fn factors(&self, cs: &CorrelationStructure, k: usize) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        if k == 0 || k > self.retained() {
            return Err(Error::InvalidArgument(format!(
                "rank {k} out of range (1..={} retained dimensions)",
                self.retained()
            )));
        }
        let a = cs.rxx.as_matrix() * self.a_weights.columns(0, k);
        let b = cs.ryy.as_matrix() * self.b_weights.columns(0, k);
        let d = self.canonical_correlations.rows(0, k).clone_owned();
        Ok((a, d, b))
    }

    pub fn biplot(&self, cs: &CorrelationStructure, alpha: f64, k: usize) -> Result<BiplotCoordinates> {
        let (a, d, b) = self.factors(cs, k)?;
        coordinates_from_factors(&a, &d, &b, alpha, k)
    }
}

/// `Rxx^{-1/2} Rxy Ryy^{-1/2}` with pseudoinverse roots.
pub(crate) fn whitened_rxy(cs: &CorrelationStructure) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let wx = sym_power(&cs.rxx, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix();
    let wy = sym_power(&cs.ryy, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix();
    let k = &wx * &cs.rxy * &wy;
    Ok((k, wx, wy))
}

pub(crate) fn retained_dims(cs: &CorrelationStructure) -> usize {
    cs.rank_xx.min(cs.rank_yy).min(cs.p()).min(cs.q())
}

/// Canonical correlations only, with structural zeros flagged.
pub fn canonical_correlations(cs: &CorrelationStructure) -> Result<(DVector<f64>, Vec<bool>)> {
    let (k, _, _) = whitened_rxy(cs)?;
    let sv = crate::linalg::singular_values(&k);
    let m = retained_dims(cs);
    Ok(mask_structural(sv, m))
}

pub(crate) fn mask_structural(mut sv: DVector<f64>, m: usize) -> (DVector<f64>, Vec<bool>) {
    let flags: Vec<bool> = (0..sv.len()).map(|i| i >= m).collect();
    for (v, &z) in sv.iter_mut().zip(&flags) {
        if z {
            *v = 0.0;
        }
    }
    (sv, flags)
}

fn column_sd(m: &DMatrix<f64>, j: usize) -> f64 {
    let col = m.column(j);
    let n = col.len() as f64;
    let mean = col.sum() / n;
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Classic CCA of standardized blocks `xs`, `ys` consistent with `cs`.
pub fn cca(cs: &CorrelationStructure, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<CcaSolution> {
    let (p, q) = (cs.p(), cs.q());
    if xs.ncols() != p || ys.ncols() != q || xs.nrows() != ys.nrows() {
        return Err(Error::ShapeMismatch("standardized blocks do not match the correlation structure".into()));
    }
    let (k, wx, wy) = whitened_rxy(cs)?;
    let full = p.min(q);
    let svd = truncated_svd(&k, full)?;
    let m = retained_dims(cs);
    let (rho, structural_zero) = mask_structural(svd.d.clone(), m);

    let mut a_weights = &wx * svd.u.columns(0, m);
    let mut b_weights = &wy * svd.v.columns(0, m);
    let mut u_variates = xs * &a_weights;
    let mut v_variates = ys * &b_weights;
    // unit variance; a no-op whenever the singular vector lies in the retained subspace
    for j in 0..m {
        for (w, s) in [(&mut a_weights, &mut u_variates), (&mut b_weights, &mut v_variates)] {
            let sd = column_sd(s, j);
            if sd > 1e-12 {
                w.column_mut(j).scale_mut(1.0 / sd);
                s.column_mut(j).scale_mut(1.0 / sd);
            }
        }
    }
    Ok(CcaSolution {
        canonical_correlations: rho,
        structural_zero,
        a_weights,
        b_weights,
        u_variates,
        v_variates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// alpha = 1
    Standard,
    /// alpha = 0
    Principal,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiplotCoordinates {
    /// p x k row (X) markers.
    #[serde(with = "crate::serde_mat::matrix")]
    pub f: DMatrix<f64>,
    /// q x k column (Y) markers.
    #[serde(with = "crate::serde_mat::matrix")]
    pub g: DMatrix<f64>,
    pub alpha: f64,
    pub scaling: Scaling,
}

fn coordinates_from_factors(
    a: &DMatrix<f64>,
    d: &DVector<f64>,
    b: &DMatrix<f64>,
    alpha: f64,
    k: usize,
) -> Result<BiplotCoordinates> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if k == 0 || k > d.len() {
        return Err(Error::InvalidArgument(format!("rank {k} out of range (1..={})", d.len())));
    }
    let da = DVector::from_iterator(k, d.iter().take(k).map(|v| v.powf(alpha)));
    let db = DVector::from_iterator(k, d.iter().take(k).map(|v| v.powf(1.0 - alpha)));
    let f = a.columns(0, k) * DMatrix::from_diagonal(&da);
    let g = b.columns(0, k) * DMatrix::from_diagonal(&db);
    let scaling = if alpha == 1.0 {
        Scaling::Standard
    } else if alpha == 0.0 {
        Scaling::Principal
    } else {
        Scaling::Other
    };
    Ok(BiplotCoordinates { f, g, alpha, scaling })
}

/// Biplot markers `F = A D^alpha`, `G = B D^(1-alpha)` for the first `k`
/// axes of a fit, so that `F G'` is the rank-k part of the approximation.
pub fn biplot_coordinates(fit: &FitResult, alpha: f64, k: usize) -> Result<BiplotCoordinates> {
    coordinates_from_factors(&fit.a, &fit.d, &fit.b, alpha, k)
}

/// Fraction of the total weighted sum-of-squares of Rxy reproduced by
/// `khat`: `1 - sigma(khat) / sigma(0)`.
pub fn goodness_of_fit(cs: &CorrelationStructure, khat: &DMatrix<f64>) -> Result<f64> {
    if khat.shape() != cs.rxy.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction is {}x{}, expected {}x{}",
            khat.nrows(),
            khat.ncols(),
            cs.p(),
            cs.q()
        )));
    }
    let w = GlsWeights::from_correlations(cs)?;
    let rw = w.row_weights().as_matrix();
    let cw = w.column_weights().as_matrix();
    let total = weighted_ss(&cs.rxy, rw, cw);
    if total <= 0.0 {
        return Err(Error::InvalidArgument("between-set correlation matrix has zero weighted norm".into()));
    }
    Ok(1.0 - weighted_ss(&(&cs.rxy - khat), rw, cw) / total)
}
