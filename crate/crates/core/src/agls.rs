//! Alternating generalized least squares (AGLS) fitting of low-rank
//! approximations to the between-set correlation matrix.
//!
//! The loss for target `X`, rank-k approximation `Y` and offsets is
//!
//! ```text
//! sigma = trace{ R (X - Y - O) C (X - Y - O)' }
//! ```
//!
//! where `O` is `delta 11'` (scalar), `1c'` (column), `r1'` (row) or
//! `1c' + r1'` (row and column). For fixed offsets the optimal `Y` is a
//! truncated SVD in the metric defined by the weights; for fixed `Y` each
//! offset has a closed-form minimizer. Alternating the two never increases
//! the loss.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationStructure;
use crate::diagnostics::{rmse, RmsePair};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, power_from_eigen, truncated_svd, Exponent, SymMatrix, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentModel {
    None,
    Scalar,
    Row,
    Column,
    RowColumn,
}

impl AdjustmentModel {
    /// Fixed comparison order used by [`fit_all`].
    pub const ALL: [AdjustmentModel; 5] = [
        AdjustmentModel::None,
        AdjustmentModel::Scalar,
        AdjustmentModel::Row,
        AdjustmentModel::Column,
        AdjustmentModel::RowColumn,
    ];

    /// Label used in comparison tables and plot titles.
    pub fn label(self) -> &'static str {
        match self {
            AdjustmentModel::None => "CCA",
            AdjustmentModel::Scalar => "CCA-delta",
            AdjustmentModel::Row => "CCA-r",
            AdjustmentModel::Column => "CCA-c",
            AdjustmentModel::RowColumn => "CCA-rc",
        }
    }

    /// Short name accepted on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            AdjustmentModel::None => "cca",
            AdjustmentModel::Scalar => "delta",
            AdjustmentModel::Row => "row",
            AdjustmentModel::Column => "col",
            AdjustmentModel::RowColumn => "rowcol",
        }
    }

    fn adjusts_rows(self) -> bool {
        matches!(self, AdjustmentModel::Row | AdjustmentModel::RowColumn)
    }

    fn adjusts_columns(self) -> bool {
        matches!(self, AdjustmentModel::Column | AdjustmentModel::RowColumn)
    }
}

impl fmt::Display for AdjustmentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for AdjustmentModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdjustmentModel::ALL
            .into_iter()
            .find(|m| m.short_name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}` (cca, delta, row, col, rowcol)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `Y = 0` and all offsets zero.
    Zero,
    /// `Y` = unadjusted rank-k fit, offsets zero.
    ClassicCca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AglsConfig {
    pub rank: usize,
    /// The alternation stops once an iteration lowers the loss by at most this.
    pub epsilon: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for AglsConfig {
    fn default() -> Self {
        AglsConfig {
            rank: 2,
            epsilon: 1e-10,
            max_iter: 10_000,
            init: Init::Zero,
        }
    }
}

impl AglsConfig {
    pub fn with_rank(rank: usize) -> Self {
        AglsConfig {
            rank,
            ..AglsConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row and column weight matrices together with the square roots the SVD
/// step needs.
#[derive(Debug, Clone)]
pub struct GlsWeights {
    rw: SymMatrix,
    cw: SymMatrix,
    rw_half: DMatrix<f64>,
    rw_inv_half: DMatrix<f64>,
    cw_half: DMatrix<f64>,
    cw_inv_half: DMatrix<f64>,
}

impl GlsWeights {
    pub fn new(rw: SymMatrix, cw: SymMatrix) -> Result<Self> {
        Self::with_rank_tol(rw, cw, DEFAULT_RANK_TOL)
    }

    pub fn with_rank_tol(rw: SymMatrix, cw: SymMatrix, rank_tol: f64) -> Result<Self> {
        let re = sym_eig(&rw);
        let ce = sym_eig(&cw);
        Ok(GlsWeights {
            rw_half: power_from_eigen(&re, Exponent::Half, rank_tol)?.into_matrix(),
            rw_inv_half: power_from_eigen(&re, Exponent::NegHalf, rank_tol)?.into_matrix(),
            cw_half: power_from_eigen(&ce, Exponent::Half, rank_tol)?.into_matrix(),
            cw_inv_half: power_from_eigen(&ce, Exponent::NegHalf, rank_tol)?.into_matrix(),
            rw,
            cw,
        })
    }

    /// `R = Rxx^+` and `C = Ryy^+`, the weights under which the unadjusted
    /// fit is classic canonical correlation analysis.
    pub fn from_correlations(cs: &CorrelationStructure) -> Result<Self> {
        let rxx = sym_eig(&cs.rxx);
        let ryy = sym_eig(&cs.ryy);
        let rw = power_from_eigen(&rxx, Exponent::NegOne, DEFAULT_RANK_TOL)?;
        let cw = power_from_eigen(&ryy, Exponent::NegOne, DEFAULT_RANK_TOL)?;
        Ok(GlsWeights {
            // R^{1/2} = Rxx^{-1/2} and R^{-1/2} = Rxx^{1/2}, on the retained subspace
            rw_half: power_from_eigen(&rxx, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix(),
            rw_inv_half: power_from_eigen(&rxx, Exponent::Half, DEFAULT_RANK_TOL)?.into_matrix(),
            cw_half: power_from_eigen(&ryy, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix(),
            cw_inv_half: power_from_eigen(&ryy, Exponent::Half, DEFAULT_RANK_TOL)?.into_matrix(),
            rw,
            cw,
        })
    }

    pub fn identity(p: usize, q: usize) -> Self {
        GlsWeights::new(SymMatrix::identity(p), SymMatrix::identity(q)).expect("identity weights")
    }

    pub fn row_weights(&self) -> &SymMatrix {
        &self.rw
    }

    pub fn column_weights(&self) -> &SymMatrix {
        &self.cw
    }
}

/// Offsets subtracted from the target before the low-rank fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Adjustments {
    pub delta: Option<f64>,
    #[serde(with = "crate::serde_mat::option_vector")]
    pub r: Option<DVector<f64>>,
    #[serde(with = "crate::serde_mat::option_vector")]
    pub c: Option<DVector<f64>>,
}

impl Adjustments {
    pub fn none() -> Self {
        Adjustments::default()
    }

    pub fn scalar(delta: f64) -> Self {
        Adjustments {
            delta: Some(delta),
            ..Default::default()
        }
    }

    pub fn rows(r: DVector<f64>) -> Self {
        Adjustments {
            r: Some(r),
            ..Default::default()
        }
    }

    pub fn columns(c: DVector<f64>) -> Self {
        Adjustments {
            c: Some(c),
            ..Default::default()
        }
    }

    /// The `p x q` offset matrix `delta 11' + 1c' + r1'`.
    pub fn offset_matrix(&self, p: usize, q: usize) -> Result<DMatrix<f64>> {
        if let Some(r) = &self.r {
            if r.len() != p {
                return Err(Error::ShapeMismatch(format!("row adjustment has length {}, expected {p}", r.len())));
            }
        }
        if let Some(c) = &self.c {
            if c.len() != q {
                return Err(Error::ShapeMismatch(format!("column adjustment has length {}, expected {q}", c.len())));
            }
        }
        let delta = self.delta.unwrap_or(0.0);
        Ok(DMatrix::from_fn(p, q, |i, j| {
            delta + self.r.as_ref().map_or(0.0, |r| r[i]) + self.c.as_ref().map_or(0.0, |c| c[j])
        }))
    }
}

fn check_shapes(x: &DMatrix<f64>, yhat: &DMatrix<f64>, rw: Option<&SymMatrix>, cw: Option<&SymMatrix>) -> Result<()> {
    if x.shape() != yhat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "target is {}x{} but approximation is {}x{}",
            x.nrows(),
            x.ncols(),
            yhat.nrows(),
            yhat.ncols()
        )));
    }
    if let Some(rw) = rw {
        if rw.dim() != x.nrows() {
            return Err(Error::ShapeMismatch(format!("row weights are {0}x{0}, expected {1}x{1}", rw.dim(), x.nrows())));
        }
    }
    if let Some(cw) = cw {
        if cw.dim() != x.ncols() {
            return Err(Error::ShapeMismatch(format!("column weights are {0}x{0}, expected {1}x{1}", cw.dim(), x.ncols())));
        }
    }
    Ok(())
}

/// `trace{R E C E'}` for a residual `E`.
pub(crate) fn weighted_ss(e: &DMatrix<f64>, rw: &DMatrix<f64>, cw: &DMatrix<f64>) -> f64 {
    let rec = rw * e * cw;
    rec.component_mul(e).sum().max(0.0)
}

/// GLS loss of `yhat` plus offsets as an approximation of `x`.
pub fn gls_loss(
    x: &DMatrix<f64>,
    yhat: &DMatrix<f64>,
    adjustments: &Adjustments,
    rw: &SymMatrix,
    cw: &SymMatrix,
) -> Result<f64> {
    check_shapes(x, yhat, Some(rw), Some(cw))?;
    let offsets = adjustments.offset_matrix(x.nrows(), x.ncols())?;
    let e = x - yhat - offsets;
    Ok(weighted_ss(&e, rw.as_matrix(), cw.as_matrix()))
}

/// `1'W1`, rejected when numerically zero.
fn total_weight(w: &SymMatrix, what: &str) -> Result<f64> {
    let m = w.as_matrix();
    let total = m.sum();
    let scale = m.norm().max(f64::MIN_POSITIVE) * m.nrows() as f64;
    if !(total.abs() > 1e-12 * scale) {
        return Err(Error::DegenerateWeights(format!("1'{what}1 is numerically zero ({total:e})")));
    }
    Ok(total)
}

/// Column adjustment minimizing the loss for fixed `yhat` and row adjustment:
/// `c = ((X - Y)'R1 - 1 (1'Rr)) / 1'R1`.
pub fn update_column_adjustment(
    x: &DMatrix<f64>,
    yhat: &DMatrix<f64>,
    r_adj: &DVector<f64>,
    rw: &SymMatrix,
) -> Result<DVector<f64>> {
    check_shapes(x, yhat, Some(rw), None)?;
    if r_adj.len() != x.nrows() {
        return Err(Error::ShapeMismatch("row adjustment length".into()));
    }
    let total = total_weight(rw, "R")?;
    let r1 = rw.as_matrix().column_sum();
    let r_term = r1.dot(r_adj);
    let proj = (x - yhat).transpose() * &r1;
    Ok(proj.map(|v| (v - r_term) / total))
}

/// Row adjustment minimizing the loss for fixed `yhat` and column adjustment:
/// `r = ((X - Y)C1 - 1 (1'Cc)) / 1'C1`.
pub fn update_row_adjustment(
    x: &DMatrix<f64>,
    yhat: &DMatrix<f64>,
    c_adj: &DVector<f64>,
    cw: &SymMatrix,
) -> Result<DVector<f64>> {
    check_shapes(x, yhat, None, Some(cw))?;
    if c_adj.len() != x.ncols() {
        return Err(Error::ShapeMismatch("column adjustment length".into()));
    }
    let total = total_weight(cw, "C")?;
    let c1 = cw.as_matrix().column_sum();
    let c_term = c1.dot(c_adj);
    let proj = (x - yhat) * &c1;
    Ok(proj.map(|v| (v - c_term) / total))
}

/// Scalar adjustment minimizing the loss for fixed `yhat`:
/// `delta = 1'R(X - Y)C1 / (1'C1 1'R1)`.
pub fn update_scalar_adjustment(x: &DMatrix<f64>, yhat: &DMatrix<f64>, rw: &SymMatrix, cw: &SymMatrix) -> Result<f64> {
    check_shapes(x, yhat, Some(rw), Some(cw))?;
    let rt = total_weight(rw, "R")?;
    let ct = total_weight(cw, "C")?;
    let r1 = rw.as_matrix().column_sum();
    let c1 = cw.as_matrix().column_sum();
    let num = r1.dot(&((x - yhat) * c1));
    Ok(num / (rt * ct))
}

/// Best rank-k approximation in the weighted metric, in factored form.
#[derive(Debug, Clone)]
pub struct LowRankFit {
    /// `R^{-1/2} U~`, p x k.
    pub a: DMatrix<f64>,
    pub d: DVector<f64>,
    /// `C^{-1/2} V~`, q x k.
    pub b: DMatrix<f64>,
    pub yhat: DMatrix<f64>,
}

/// Truncated SVD of `R^{1/2} Z C^{1/2}` mapped back to the original metric.
pub fn weighted_low_rank(target: &DMatrix<f64>, weights: &GlsWeights, k: usize) -> Result<LowRankFit> {
    let m = &weights.rw_half * target * &weights.cw_half;
    let svd = truncated_svd(&m, k)?;
    let a = &weights.rw_inv_half * &svd.u;
    let b = &weights.cw_inv_half * &svd.v;
    let yhat = &a * DMatrix::from_diagonal(&svd.d) * b.transpose();
    Ok(LowRankFit { a, d: svd.d, b, yhat })
}

/// Outcome of one AGLS fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: AdjustmentModel,
    pub rank: usize,
    /// Rank-k part of the approximation, excluding offsets.
    #[serde(with = "crate::serde_mat::matrix")]
    pub yhat: DMatrix<f64>,
    /// Standard row coordinates, p x k (`yhat = a diag(d) b'`).
    #[serde(with = "crate::serde_mat::matrix")]
    pub a: DMatrix<f64>,
    /// Standard column coordinates, q x k.
    #[serde(with = "crate::serde_mat::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub d: DVector<f64>,
    pub delta: Option<f64>,
    #[serde(with = "crate::serde_mat::option_vector")]
    pub r_adj: Option<DVector<f64>>,
    #[serde(with = "crate::serde_mat::option_vector")]
    pub c_adj: Option<DVector<f64>>,
    pub loss_trace: Vec<f64>,
    pub loss: f64,
    pub rmse_gls: f64,
    pub rmse_ols: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn adjustments(&self) -> Adjustments {
        Adjustments {
            delta: self.delta,
            r: self.r_adj.clone(),
            c: self.c_adj.clone(),
        }
    }

    /// Approximated correlation matrix: `yhat` plus offsets.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let (p, q) = self.yhat.shape();
        let offsets = self.adjustments().offset_matrix(p, q).expect("offsets match fitted shape");
        &self.yhat + offsets
    }

    pub fn rmse(&self) -> RmsePair {
        RmsePair {
            gls: self.rmse_gls,
            ols: self.rmse_ols,
        }
    }

    /// Correlation represented by the plot origin for entry `(i, j)`.
    pub fn offset_at(&self, i: usize, j: usize) -> f64 {
        self.delta.unwrap_or(0.0)
            + self.r_adj.as_ref().map_or(0.0, |r| r[i])
            + self.c_adj.as_ref().map_or(0.0, |c| c[j])
    }
}

/// AGLS fit of `cs.rxy` with weights `Rxx^+`, `Ryy^+`.
pub fn fit(cs: &CorrelationStructure, model: AdjustmentModel, config: &AglsConfig) -> Result<FitResult> {
    let weights = GlsWeights::from_correlations(cs)?;
    fit_weighted(&cs.rxy, &weights, model, config)
}

/// AGLS fit of an arbitrary target under arbitrary PSD weights.
///
/// Every adjusted model contains the classic fit (all offsets zero). If a
/// zero start ends above the classic loss, the fit is rerun from the classic
/// solution, which can only descend from there, and a warning is attached.
pub fn fit_weighted(
    x: &DMatrix<f64>,
    weights: &GlsWeights,
    model: AdjustmentModel,
    config: &AglsConfig,
) -> Result<FitResult> {
    let first = run_agls(x, weights, model, config)?;
    if model == AdjustmentModel::None || config.init == Init::ClassicCca {
        return Ok(first);
    }
    let classic = run_agls(x, weights, AdjustmentModel::None, config)?;
    if first.loss <= classic.loss {
        return Ok(first);
    }
    let warm = AglsConfig {
        init: Init::ClassicCca,
        ..*config
    };
    let mut second = run_agls(x, weights, model, &warm)?;
    second.warnings.insert(
        0,
        format!(
            "zero start ended at loss {:e}, above the classic fit {:e}; refitted from the classic solution",
            first.loss, classic.loss
        ),
    );
    Ok(second)
}

fn run_agls(
    x: &DMatrix<f64>,
    weights: &GlsWeights,
    model: AdjustmentModel,
    config: &AglsConfig,
) -> Result<FitResult> {
    config.validate()?;
    let (p, q) = x.shape();
    check_shapes(x, x, Some(&weights.rw), Some(&weights.cw))?;
    let k = config.rank;
    if k > p.min(q) {
        return Err(Error::InvalidArgument(format!("rank {k} exceeds min(p, q) = {}", p.min(q))));
    }
    let rw = &weights.rw;
    let cw = &weights.cw;

    if model == AdjustmentModel::None {
        let lr = weighted_low_rank(x, weights, k)?;
        let loss = gls_loss(x, &lr.yhat, &Adjustments::none(), rw, cw)?;
        return Ok(finish(x, model, k, lr, Adjustments::none(), vec![loss], 1, true, Vec::new()));
    }

    let (mut current, mut prev_loss) = match config.init {
        Init::Zero => {
            let zero = LowRankFit {
                a: DMatrix::zeros(p, k),
                d: DVector::zeros(k),
                b: DMatrix::zeros(q, k),
                yhat: DMatrix::zeros(p, q),
            };
            let loss = weighted_ss(x, rw.as_matrix(), cw.as_matrix());
            (zero, loss)
        }
        Init::ClassicCca => {
            let lr = weighted_low_rank(x, weights, k)?;
            let loss = gls_loss(x, &lr.yhat, &Adjustments::none(), rw, cw)?;
            (lr, loss)
        }
    };

    let mut r_adj = DVector::zeros(p);
    let mut c_adj = DVector::zeros(q);
    let mut delta = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let adjustments = match model {
            AdjustmentModel::Scalar => {
                delta = update_scalar_adjustment(x, &current.yhat, rw, cw)?;
                Adjustments::scalar(delta)
            }
            _ => {
                if model.adjusts_columns() {
                    c_adj = update_column_adjustment(x, &current.yhat, &r_adj, rw)?;
                }
                if model.adjusts_rows() {
                    r_adj = update_row_adjustment(x, &current.yhat, &c_adj, cw)?;
                }
                model_adjustments(model, 0.0, &r_adj, &c_adj)
            }
        };
        let target = x - adjustments.offset_matrix(p, q)?;
        current = weighted_low_rank(&target, weights, k)?;
        let loss = gls_loss(x, &current.yhat, &adjustments, rw, cw)?;
        trace.push(loss);
        if prev_loss - loss <= config.epsilon {
            converged = true;
            break;
        }
        prev_loss = loss;
    }

    let adjustments = model_adjustments(model, delta, &r_adj, &c_adj);
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "{} did not converge within {} iterations (last decrease above {:e})",
            model.label(),
            config.max_iter,
            config.epsilon
        ));
    }
    Ok(finish(x, model, k, current, adjustments, trace, iterations, converged, warnings))
}

fn model_adjustments(model: AdjustmentModel, delta: f64, r: &DVector<f64>, c: &DVector<f64>) -> Adjustments {
    match model {
        AdjustmentModel::None => Adjustments::none(),
        AdjustmentModel::Scalar => Adjustments::scalar(delta),
        AdjustmentModel::Row => Adjustments::rows(r.clone()),
        AdjustmentModel::Column => Adjustments::columns(c.clone()),
        AdjustmentModel::RowColumn => Adjustments {
            delta: None,
            r: Some(r.clone()),
            c: Some(c.clone()),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    x: &DMatrix<f64>,
    model: AdjustmentModel,
    rank: usize,
    lr: LowRankFit,
    adjustments: Adjustments,
    loss_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    warnings: Vec<String>,
) -> FitResult {
    let (p, q) = x.shape();
    let loss = *loss_trace.last().expect("at least one iteration");
    let e = x - &lr.yhat - adjustments.offset_matrix(p, q).expect("fitted offsets");
    let ols = rmse(&e, &SymMatrix::identity(p), &SymMatrix::identity(q)).expect("identity weights").ols;
    FitResult {
        model,
        rank,
        yhat: lr.yhat,
        a: lr.a,
        b: lr.b,
        d: lr.d,
        delta: adjustments.delta,
        r_adj: adjustments.r,
        c_adj: adjustments.c,
        loss_trace,
        loss,
        rmse_gls: (loss / (p * q) as f64).sqrt(),
        rmse_ols: ols,
        iterations,
        converged,
        warnings,
    }
}

/// One row of a model comparison.
#[derive(Debug)]
pub struct ModelOutcome {
    pub model: AdjustmentModel,
    pub result: Result<FitResult>,
}

/// Fits all five models in [`AdjustmentModel::ALL`] order. A failing model
/// does not prevent the others from being fitted.
pub fn fit_all(cs: &CorrelationStructure, config: &AglsConfig) -> Result<Vec<ModelOutcome>> {
    let weights = GlsWeights::from_correlations(cs)?;
    Ok(fit_all_weighted(&cs.rxy, &weights, config))
}

pub fn fit_all_weighted(x: &DMatrix<f64>, weights: &GlsWeights, config: &AglsConfig) -> Vec<ModelOutcome> {
    AdjustmentModel::ALL
        .par_iter()
        .map(|&model| ModelOutcome {
            model,
            result: fit_weighted(x, weights, model, config),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let b = random_matrix(rng, n, n);
        SymMatrix::new(&b * b.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
    }

    #[test]
    fn loss_zero_for_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 3, 4);
        let l = gls_loss(&x, &x, &Adjustments::none(), &random_pd(&mut rng, 3), &random_pd(&mut rng, 4)).unwrap();
        assert!(l.abs() < 1e-14);
    }

    #[test]
    fn scalar_loss_is_centered_sum_of_squares() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.4, -0.3, 0.6]);
        let mean = x.mean();
        let want: f64 = x.iter().map(|v: &f64| (v - mean).powi(2)).sum();
        let got = gls_loss(
            &x,
            &DMatrix::zeros(2, 2),
            &Adjustments::scalar(mean),
            &SymMatrix::identity(2),
            &SymMatrix::identity(2),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn loss_shape_mismatch() {
        let x = DMatrix::zeros(2, 3);
        let err = gls_loss(&x, &DMatrix::zeros(3, 2), &Adjustments::none(), &SymMatrix::identity(2), &SymMatrix::identity(3));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn column_update_reduces_to_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 4, 3);
        let c = update_column_adjustment(&x, &DMatrix::zeros(4, 3), &DVector::zeros(4), &SymMatrix::identity(4)).unwrap();
        for j in 0..3 {
            assert!((c[j] - x.column(j).mean()).abs() < 1e-15);
        }
        let r = update_row_adjustment(&x, &DMatrix::zeros(4, 3), &DVector::zeros(3), &SymMatrix::identity(3)).unwrap();
        for i in 0..4 {
            assert!((r[i] - x.row(i).mean()).abs() < 1e-15);
        }
    }

    #[test]
    fn column_update_recovers_exact_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c0 = DVector::from_column_slice(&[0.3, -0.2, 0.05, 0.7]);
        let x = DMatrix::from_fn(3, 4, |_, j| c0[j]);
        let c = update_column_adjustment(&x, &DMatrix::zeros(3, 4), &DVector::zeros(3), &random_pd(&mut rng, 3)).unwrap();
        assert!((c - c0).abs().max() < 1e-12);
    }

    #[test]
    fn row_update_is_transpose_of_column_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 3, 5);
        let y = random_matrix(&mut rng, 3, 5) * 0.2;
        let rw = random_pd(&mut rng, 3);
        let r = DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));
        let c = update_column_adjustment(&x, &y, &r, &rw).unwrap();
        let via_rows = update_row_adjustment(&x.transpose(), &y.transpose(), &r, &rw).unwrap();
        assert!((c - via_rows).abs().max() < 1e-14);
    }

    #[test]
    fn scalar_update_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 3, 4);
        let rw = random_pd(&mut rng, 3);
        let cw = random_pd(&mut rng, 4);
        assert!(update_scalar_adjustment(&x, &x, &rw, &cw).unwrap().abs() < 1e-15);
        let d = update_scalar_adjustment(&x, &DMatrix::zeros(3, 4), &SymMatrix::identity(3), &SymMatrix::identity(4)).unwrap();
        assert!((d - x.mean()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights_rejected() {
        // 1'R1 = 0 for R = vv' with v orthogonal to the ones vector
        let v = DVector::from_column_slice(&[1.0, -1.0]);
        let rw = SymMatrix::new(&v * v.transpose()).unwrap();
        let x = DMatrix::from_element(2, 2, 0.3);
        let err = update_column_adjustment(&x, &DMatrix::zeros(2, 2), &DVector::zeros(2), &rw);
        assert!(matches!(err, Err(Error::DegenerateWeights(_))));
    }

    fn perturbation_check(loss: impl Fn(f64, usize) -> f64, n: usize) {
        let base = loss(0.0, 0);
        for idx in 0..n {
            for h in [1e-4, -1e-4] {
                assert!(loss(h, idx) >= base - 1e-10, "coordinate {idx} perturbation {h} lowered the loss");
            }
        }
    }

    #[test]
    fn updates_are_coordinate_minimizers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, q) = (4, 5);
        let x = random_matrix(&mut rng, p, q);
        let y = random_matrix(&mut rng, p, q) * 0.3;
        let rw = random_pd(&mut rng, p);
        let cw = random_pd(&mut rng, q);
        let r0 = DVector::from_fn(p, |_, _| rng.random_range(-0.2..0.2));
        let c = update_column_adjustment(&x, &y, &r0, &rw).unwrap();
        perturbation_check(
            |h, j| {
                let mut cc = c.clone();
                cc[j] += h;
                let adj = Adjustments { delta: None, r: Some(r0.clone()), c: Some(cc) };
                gls_loss(&x, &y, &adj, &rw, &cw).unwrap()
            },
            q,
        );
        let r = update_row_adjustment(&x, &y, &c, &cw).unwrap();
        perturbation_check(
            |h, i| {
                let mut rr = r.clone();
                rr[i] += h;
                let adj = Adjustments { delta: None, r: Some(rr), c: Some(c.clone()) };
                gls_loss(&x, &y, &adj, &rw, &cw).unwrap()
            },
            p,
        );
        let d = update_scalar_adjustment(&x, &y, &rw, &cw).unwrap();
        perturbation_check(|h, _| gls_loss(&x, &y, &Adjustments::scalar(d + h), &rw, &cw).unwrap(), 1);
    }

    #[test]
    fn rank_k_target_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 4, 2) * random_matrix(&mut rng, 2, 5);
        let w = GlsWeights::new(random_pd(&mut rng, 4), random_pd(&mut rng, 5)).unwrap();
        let res = fit_weighted(&x, &w, AdjustmentModel::None, &AglsConfig::with_rank(2)).unwrap();
        assert!(res.loss < 1e-12);
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        let warm = AglsConfig { init: Init::ClassicCca, ..AglsConfig::with_rank(2) };
        for model in AdjustmentModel::ALL {
            let res = fit_weighted(&x, &w, model, &warm).unwrap();
            assert!(res.loss < 1e-12, "{model}: {}", res.loss);
            assert_eq!(res.iterations, 1, "{model}");
        }
    }

    #[test]
    fn row_only_model_keeps_columns_unset() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 4, 5);
        let w = GlsWeights::new(random_pd(&mut rng, 4), random_pd(&mut rng, 5)).unwrap();
        let res = fit_weighted(&x, &w, AdjustmentModel::Row, &AglsConfig::with_rank(1)).unwrap();
        assert!(res.c_adj.is_none() && res.delta.is_none());
        assert_eq!(res.r_adj.as_ref().unwrap().len(), 4);
        let col = fit_weighted(&x, &w, AdjustmentModel::Column, &AglsConfig::with_rank(1)).unwrap();
        assert!(col.r_adj.is_none());
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 5, 5);
        let w = GlsWeights::new(random_pd(&mut rng, 5), random_pd(&mut rng, 5)).unwrap();
        let cfg = AglsConfig { max_iter: 1, epsilon: 1e-300, ..AglsConfig::with_rank(1) };
        let res = fit_weighted(&x, &w, AdjustmentModel::RowColumn, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.warnings.len(), 1);
    }

    #[test]
    fn rank_out_of_range_rejected() {
        let w = GlsWeights::identity(3, 2);
        let err = fit_weighted(&DMatrix::zeros(3, 2), &w, AdjustmentModel::Scalar, &AglsConfig::with_rank(3));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn model_names_round_trip() {
        for m in AdjustmentModel::ALL {
            assert_eq!(m.short_name().parse::<AdjustmentModel>().unwrap(), m);
        }
        assert!("rc".parse::<AdjustmentModel>().is_err());
    }

    #[test]
    fn drifting_scalar_start_is_refitted_from_classic() {
        // zero start lets delta run off along a flat direction here
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let p = rng.random_range(3..=12);
        let q = rng.random_range(3..=12);
        let k = rng.random_range(1..=2usize.min(p.min(q) - 1));
        let x = random_matrix(&mut rng, p, q);
        let wishart = |rng: &mut ChaCha8Rng, n: usize| {
            let b = random_matrix(rng, n, n + 2);
            SymMatrix::new(&b * b.transpose() / (n + 2) as f64).unwrap()
        };
        let w = GlsWeights::new(wishart(&mut rng, p), wishart(&mut rng, q)).unwrap();
        let cfg = AglsConfig::with_rank(k);
        let plain = run_agls(&x, &w, AdjustmentModel::Scalar, &cfg).unwrap();
        let classic = fit_weighted(&x, &w, AdjustmentModel::None, &cfg).unwrap();
        assert!(plain.loss > classic.loss, "fixture no longer exercises the restart");
        let guarded = fit_weighted(&x, &w, AdjustmentModel::Scalar, &cfg).unwrap();
        assert!(guarded.loss <= classic.loss);
        assert!(guarded.converged);
        assert!(guarded.warnings[0].contains("refitted from the classic solution"));
        for pair in guarded.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn monotone_descent_and_rmse_identity(seed in 0u64..300, p in 2usize..7, q in 2usize..7, k in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = k.min(p.min(q));
            let x = random_matrix(&mut rng, p, q);
            let w = GlsWeights::new(random_pd(&mut rng, p), random_pd(&mut rng, q)).unwrap();
            for model in AdjustmentModel::ALL {
                let res = fit_weighted(&x, &w, model, &AglsConfig::with_rank(k)).unwrap();
                for pair in res.loss_trace.windows(2) {
                    proptest::prop_assert!(pair[1] <= pair[0] + 1e-12);
                }
                proptest::prop_assert!((res.rmse_gls.powi(2) * (p * q) as f64 - res.loss).abs() < 1e-10);
                let sv = crate::linalg::singular_values(&res.yhat);
                if k < sv.len() {
                    proptest::prop_assert!(sv[k] < 1e-8);
                }
            }
        }
    }
}
