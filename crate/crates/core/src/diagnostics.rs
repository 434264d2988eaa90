//! RMSE under GLS and OLS weighting, permutation tests for the canonical
//! correlations, and adjusted canonical variates.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agls::weighted_ss;
use crate::cca::{mask_structural, retained_dims};
use crate::correlation::{correlations_from_standardized, standardize, CorrelationStructure, TwoBlockData};
use crate::error::{Error, Result};
use crate::linalg::{singular_values, sym_power, Exponent, SymMatrix, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsePair {
    pub gls: f64,
    pub ols: f64,
}

/// RMSE of an error matrix `e = Rxy - Rxy_hat`, weighted by `rw`/`cw` and
/// unweighted.
pub fn rmse(e: &DMatrix<f64>, rw: &SymMatrix, cw: &SymMatrix) -> Result<RmsePair> {
    let (p, q) = e.shape();
    if rw.dim() != p || cw.dim() != q {
        return Err(Error::ShapeMismatch(format!(
            "error matrix is {p}x{q}, weights are {}x{} and {}x{}",
            rw.dim(),
            rw.dim(),
            cw.dim(),
            cw.dim()
        )));
    }
    let cells = (p * q) as f64;
    let gls = (weighted_ss(e, rw.as_matrix(), cw.as_matrix()) / cells).sqrt();
    // same accumulation as the weighted form, so identity weights agree exactly
    let ols = (e.component_mul(e).sum() / cells).sqrt();
    Ok(RmsePair { gls, ols })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub observed: Vec<f64>,
    pub structural_zero: Vec<bool>,
    pub p_values: Vec<f64>,
    pub n_permutations: usize,
    pub seed: u64,
}

pub const MIN_PERMUTATIONS: usize = 99;

/// Replicate `index` draws from its own ChaCha stream, so results do not
/// depend on scheduling.
fn replicate_permutation(seed: u64, index: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Permutation test of every canonical correlation.
///
/// Rows of the Y block are permuted jointly while X stays fixed, which leaves
/// both within-set matrices untouched; only Rxy is recomputed per replicate.
/// The p-value for axis i is `(1 + #{replicate_i >= observed_i}) / (B + 1)`.
pub fn permutation_test(data: &TwoBlockData, n_permutations: usize, seed: u64) -> Result<PermutationTestResult> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_permutations}"
        )));
    }
    let (xs, ys) = standardize(data)?;
    let cs = correlations_from_standardized(&xs, &ys)?;
    let wx = sym_power(&cs.rxx, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix();
    let wy = sym_power(&cs.ryy, Exponent::NegHalf, DEFAULT_RANK_TOL)?.into_matrix();
    let m = retained_dims(&cs);
    let n = data.n();
    let scale = 1.0 / (n as f64 - 1.0);
    let xs_w = xs * &wx;
    let ys_w = ys * &wy;

    let stat = |ys_block: &DMatrix<f64>| -> DVector<f64> {
        let k = xs_w.transpose() * ys_block * scale;
        mask_structural(singular_values(&k), m).0
    };
    let (observed, structural_zero) = mask_structural(stat(&ys_w), m);
    let dims = observed.len();

    let exceed = (0..n_permutations as u64)
        .into_par_iter()
        .map(|index| {
            let perm = replicate_permutation(seed, index, n);
            let permuted = DMatrix::from_fn(n, ys_w.ncols(), |i, j| ys_w[(perm[i], j)]);
            let rho = stat(&permuted);
            (0..dims)
                .map(|i| usize::from(rho[i] >= observed[i] - 1e-12))
                .collect::<Vec<usize>>()
        })
        .reduce(
            || vec![0; dims],
            |mut acc, v| {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                acc
            },
        );
    let denom = (n_permutations + 1) as f64;
    Ok(PermutationTestResult {
        observed: observed.iter().copied().collect(),
        structural_zero,
        p_values: exceed.iter().map(|&c| (1 + c) as f64 / denom).collect(),
        n_permutations,
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustedVariates {
    #[serde(with = "crate::serde_mat::matrix")]
    pub u_adj: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub v_adj: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub adjusted_canonical_correlations: DVector<f64>,
    /// Set when a Gram matrix was rank deficient and its pseudoinverse used.
    pub pseudo_inverse_used: bool,
}

/// `S W M (M' W M)^+` for standardized block `S`, within-set inverse `W` and
/// standard markers `M`. Returns the variates and whether the Gram matrix
/// was rank deficient.
fn regress_markers(s: &DMatrix<f64>, within: &SymMatrix, markers: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let winv = sym_power(within, Exponent::NegOne, DEFAULT_RANK_TOL)?.into_matrix();
    let wm = &winv * markers;
    let gram = SymMatrix::new(markers.transpose() * &wm)?;
    let k = markers.ncols();
    let deficient = gram.rank(DEFAULT_RANK_TOL) < k;
    let ginv = sym_power(&gram, Exponent::NegOne, DEFAULT_RANK_TOL)?.into_matrix();
    Ok((s * wm * ginv, deficient))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut c = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    c / (va * vb).sqrt()
}

/// Adjusted canonical variates from standard biplot coordinates `fs`, `gs`:
/// `Ua = Xs Rxx^-1 Fs (Fs' Rxx^-1 Fs)^-1`, and likewise for `Va`.
pub fn adjusted_variates(
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    cs: &CorrelationStructure,
    fs: &DMatrix<f64>,
    gs: &DMatrix<f64>,
) -> Result<AdjustedVariates> {
    if fs.nrows() != cs.p() || gs.nrows() != cs.q() || fs.ncols() != gs.ncols() {
        return Err(Error::ShapeMismatch("coordinates do not match the correlation structure".into()));
    }
    if xs.ncols() != cs.p() || ys.ncols() != cs.q() || xs.nrows() != ys.nrows() {
        return Err(Error::ShapeMismatch("standardized blocks do not match the correlation structure".into()));
    }
    let (u_adj, du) = regress_markers(xs, &cs.rxx, fs)?;
    let (v_adj, dv) = regress_markers(ys, &cs.ryy, gs)?;
    let k = fs.ncols();
    let rho = DVector::from_fn(k, |i, _| pearson(u_adj.column(i).as_slice(), v_adj.column(i).as_slice()));
    Ok(AdjustedVariates {
        u_adj,
        v_adj,
        adjusted_canonical_correlations: rho,
        pseudo_inverse_used: du || dv,
    })
}

/// Flips columns of `candidate` so each correlates non-negatively with the
/// matching column of `reference`.
pub fn align_signs(candidate: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = candidate.clone();
    for j in 0..candidate.ncols().min(reference.ncols()) {
        if candidate.column(j).dot(&reference.column(j)) < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agls::{fit, gls_loss, AdjustmentModel, AglsConfig};
    use crate::cca::cca;
    use crate::correlation::correlations;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn normal_block(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn related_data(seed: u64, n: usize) -> TwoBlockData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = normal_block(&mut rng, n, 1);
        let x = normal_block(&mut rng, n, 3) + DMatrix::from_fn(n, 3, |i, j| z[i] * (j as f64 + 1.0) * 0.5);
        let y = normal_block(&mut rng, n, 4) + DMatrix::from_fn(n, 4, |i, _| z[i]);
        TwoBlockData::new(x, y, names("x", 3), names("y", 4)).unwrap()
    }

    #[test]
    fn rmse_of_zero_error() {
        let r = rmse(&DMatrix::zeros(3, 2), &SymMatrix::identity(3), &SymMatrix::identity(2)).unwrap();
        assert_eq!(r, RmsePair { gls: 0.0, ols: 0.0 });
    }

    #[test]
    fn rmse_identity_weights_agree() {
        let e = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.05, 0.0, 0.3, -0.1]);
        let r = rmse(&e, &SymMatrix::identity(2), &SymMatrix::identity(3)).unwrap();
        assert_eq!(r.gls, r.ols);
    }

    #[test]
    fn rmse_squared_matches_loss() {
        let data = related_data(1, 80);
        let cs = correlations(&data).unwrap();
        let f = fit(&cs, AdjustmentModel::Scalar, &AglsConfig::with_rank(1)).unwrap();
        let w = crate::agls::GlsWeights::from_correlations(&cs).unwrap();
        let e = &cs.rxy - f.reconstruction();
        let r = rmse(&e, w.row_weights(), w.column_weights()).unwrap();
        let loss = gls_loss(&cs.rxy, &f.yhat, &f.adjustments(), w.row_weights(), w.column_weights()).unwrap();
        assert!((r.gls.powi(2) * 12.0 - loss).abs() < 1e-10);
        assert!((r.gls - f.rmse_gls).abs() < 1e-12);
        assert!((r.ols - f.rmse_ols).abs() < 1e-12);
    }

    #[test]
    fn permutation_detects_signal_and_is_reproducible() {
        let data = related_data(2, 150);
        let a = permutation_test(&data, 199, 42).unwrap();
        let b = permutation_test(&data, 199, 42).unwrap();
        assert_eq!(a, b);
        assert!((a.p_values[0] - 1.0 / 200.0).abs() < 1e-15);
        for p in &a.p_values {
            assert!(*p >= 1.0 / 200.0 && *p <= 1.0);
        }
        assert_ne!(permutation_test(&data, 199, 43).unwrap().p_values, vec![0.0; 3]);
    }

    #[test]
    fn permutation_requires_enough_replicates() {
        let data = related_data(3, 30);
        assert!(matches!(permutation_test(&data, 50, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn permutation_observed_matches_cca() {
        let data = related_data(4, 60);
        let cs = correlations(&data).unwrap();
        let (rho, _) = crate::cca::canonical_correlations(&cs).unwrap();
        let res = permutation_test(&data, 99, 0).unwrap();
        for (a, b) in res.observed.iter().zip(rho.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn null_blocks_rarely_significant() {
        let mut all_above = 0;
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = normal_block(&mut rng, 100, 3);
            let y = normal_block(&mut rng, 100, 3);
            let data = TwoBlockData::new(x, y, names("x", 3), names("y", 3)).unwrap();
            let res = permutation_test(&data, 199, seed).unwrap();
            if res.p_values.iter().all(|&p| p > 0.01) {
                all_above += 1;
            }
        }
        assert!(all_above >= 26, "only {all_above} of 30 null replicates had all p > 0.01");
    }

    #[test]
    fn adjusted_variates_recover_classic_variates() {
        let data = related_data(5, 90);
        let cs = correlations(&data).unwrap();
        let (xs, ys) = standardize(&data).unwrap();
        let sol = cca(&cs, &xs, &ys).unwrap();
        let f = fit(&cs, AdjustmentModel::None, &AglsConfig::with_rank(2)).unwrap();
        let adj = adjusted_variates(&xs, &ys, &cs, &f.a, &f.b).unwrap();
        let u = align_signs(&adj.u_adj, &sol.u_variates);
        let v = align_signs(&adj.v_adj, &sol.v_variates);
        assert!((u - sol.u_variates.columns(0, 2)).abs().max() < 1e-8);
        assert!((v - sol.v_variates.columns(0, 2)).abs().max() < 1e-8);
        assert!(!adj.pseudo_inverse_used);
        for i in 0..2 {
            assert!((adj.adjusted_canonical_correlations[i] - sol.canonical_correlations[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_regressor_gives_that_variable() {
        let data = related_data(6, 70);
        let cs = correlations(&data).unwrap();
        let (xs, ys) = standardize(&data).unwrap();
        let fs = cs.rxx.as_matrix().columns(0, 1) * 2.0;
        let gs = cs.ryy.as_matrix().columns(2, 1) * 0.7;
        let adj = adjusted_variates(&xs, &ys, &cs, &fs.clone_owned(), &gs.clone_owned()).unwrap();
        let v = adj.v_adj.column(0);
        let target = ys.column(2);
        let ratio = v[0] / target[0];
        assert!((v - target * ratio).abs().max() < 1e-10);
    }

    #[test]
    fn rank_deficient_gram_uses_pseudoinverse() {
        let data = related_data(7, 50);
        let cs = correlations(&data).unwrap();
        let (xs, ys) = standardize(&data).unwrap();
        let col = cs.rxx.as_matrix().column(0).clone_owned();
        let fs = DMatrix::from_columns(&[col.clone(), col]);
        let gs = cs.ryy.as_matrix().columns(0, 2).clone_owned();
        let adj = adjusted_variates(&xs, &ys, &cs, &fs, &gs).unwrap();
        assert!(adj.pseudo_inverse_used);
        assert!(adj.u_adj.iter().all(|v| v.is_finite()));
    }
}
