//! Unconstrained CANCOR between the spline basis of the response and the
//! predictors, plus sequential tests for the number of nonzero canonical
//! correlations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{C3Error, Result};
use crate::moments::{
    center_columns, inv_sqrt, pinv_threshold, quad_form, sign_normalize, sym_eigen, symmetrize,
    StandardizedData,
};

pub const DEFAULT_TEST_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimTestRecord {
    pub s: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub rejected: bool,
}

/// Canonical correlations and direction pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CancorFit {
    /// Canonical correlations, descending, length `min(p, q)`.
    pub gamma: Vec<f64>,
    /// Predictor directions as columns, `p_sub x r`, unit `S_xx` norm.
    pub beta: DMatrix<f64>,
    /// Basis directions as columns, `q x r`, unit `S_pp` norm.
    pub alpha: DMatrix<f64>,
    pub k_hat: Option<usize>,
    pub test_trace: Vec<DimTestRecord>,
    /// Original predictor index of each fitted column.
    pub columns: Vec<usize>,
    pub total_predictors: usize,
    pub n: usize,
}

impl CancorFit {
    pub fn num_directions(&self) -> usize {
        self.gamma.len()
    }

    pub fn beta_col(&self, i: usize) -> DVector<f64> {
        self.beta.column(i).into_owned()
    }

    pub fn alpha_col(&self, i: usize) -> DVector<f64> {
        self.alpha.column(i).into_owned()
    }

    /// Direction `i` embedded back into all predictor coordinates.
    pub fn embedded_beta(&self, i: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_predictors);
        for (k, &j) in self.columns.iter().enumerate() {
            out[j] = self.beta[(k, i)];
        }
        out
    }

    pub fn with_dimension_test(mut self, level: f64) -> Self {
        let p = self.beta.nrows();
        let q = self.alpha.nrows();
        let (k, trace) = dimension_test(&self.gamma, self.n, p, q, level);
        self.k_hat = Some(k);
        self.test_trace = trace;
        self
    }
}

/// Fits CANCOR with covariance divisor `n - 1`.
pub fn fit(x: &StandardizedData, basis: &DMatrix<f64>, rank_tol: f64) -> Result<CancorFit> {
    fit_matrices(&x.x, basis, rank_tol, 1)
}

/// Fits CANCOR on raw predictor and basis matrices.
///
/// The predictors are whitened, `Z = X_c S_xx^{-1/2}`, and the canonical
/// correlations come from the eigen decomposition of the projection of `Z`
/// onto the column space of the centered basis,
/// `Delta = Z^T Pi (Pi^T Pi)^+ Pi^T Z / (n - ddof)`.
pub fn fit_matrices(
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    rank_tol: f64,
    ddof: usize,
) -> Result<CancorFit> {
    let (n, p) = x.shape();
    let q = basis.ncols();
    if q == 0 {
        return Err(C3Error::Config("spline basis has no retained columns".into()));
    }
    if p == 0 {
        return Err(C3Error::Config("no predictors".into()));
    }
    if basis.nrows() != n {
        return Err(C3Error::DimensionMismatch(format!(
            "predictors have {n} rows, basis has {}",
            basis.nrows()
        )));
    }
    if n <= ddof + 1 {
        return Err(C3Error::Config(format!("too few rows ({n})")));
    }
    let div = (n - ddof) as f64;

    let xc = center_columns(x);
    let s_xx = symmetrize(&(xc.tr_mul(&xc) / div));
    let whiten = inv_sqrt(&s_xx, rank_tol)?;
    let z = &xc * &whiten;

    let pc = center_columns(basis);
    let gram = symmetrize(&pc.tr_mul(&pc));
    let (gram_pinv, basis_rank) = pinv_threshold(&gram, rank_tol)?;
    let zp = z.tr_mul(&pc);
    let delta = symmetrize(&(&zp * &gram_pinv * zp.transpose() / div));

    let (values, vectors) = sym_eigen(&delta)?;
    let r = p.min(q);
    let s_pp = symmetrize(&(&gram / div));
    let s_px = pc.tr_mul(&xc) / div;
    let s_pp_pinv = &gram_pinv * div;

    let mut gamma = Vec::with_capacity(r);
    let mut beta = DMatrix::zeros(p, r);
    let mut alpha = DMatrix::zeros(q, r);
    for i in 0..r {
        let lambda = if i < basis_rank { values[i] } else { 0.0 };
        gamma.push(lambda.clamp(0.0, 1.0).sqrt());

        let mut b = &whiten * vectors.column(i);
        let norm = quad_form(&b, &s_xx, &b).sqrt();
        b /= norm;
        sign_normalize(&mut b);

        let mut a = &s_pp_pinv * (&s_px * &b);
        let a_norm = quad_form(&a, &s_pp, &a).sqrt();
        if a_norm > 1e-12 {
            a /= a_norm;
        } else {
            a.fill(0.0);
        }
        beta.set_column(i, &b);
        alpha.set_column(i, &a);
    }

    Ok(CancorFit {
        gamma,
        beta,
        alpha,
        k_hat: None,
        test_trace: Vec::new(),
        columns: (0..p).collect(),
        total_predictors: p,
        n,
    })
}

/// CANCOR restricted to a subset of predictor columns.
pub fn fit_on_subset(
    x: &StandardizedData,
    columns: &[usize],
    basis: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<CancorFit> {
    if columns.is_empty() {
        return Err(C3Error::Config("empty predictor subset".into()));
    }
    if let Some(&bad) = columns.iter().find(|&&j| j >= x.ncols()) {
        return Err(C3Error::DimensionMismatch(format!(
            "column {bad} out of range for {} predictors",
            x.ncols()
        )));
    }
    let sub = x.x.select_columns(columns);
    let mut fit = fit_matrices(&sub, basis, rank_tol, 1)?;
    fit.columns = columns.to_vec();
    fit.total_predictors = x.ncols();
    Ok(fit)
}

/// Sequential tests of `H_0: gamma_{s+1} = 0` for `s = 0, 1, ...`.
///
/// Uses `T_s = n * sum_{i > s} gamma_i^2` against a chi-square with
/// `(p - s)(q - s)` degrees of freedom. The estimate is the first `s` whose
/// test is not rejected, capped at `min(p, q)`.
pub fn dimension_test(
    gamma: &[f64],
    n: usize,
    p: usize,
    q: usize,
    level: f64,
) -> (usize, Vec<DimTestRecord>) {
    let cap = p.min(q);
    let mut trace = Vec::with_capacity(cap);
    for s in 0..cap {
        let statistic = n as f64 * gamma.iter().skip(s).map(|g| g * g).sum::<f64>();
        let df = (p - s) * (q - s);
        let p_value = ChiSquared::new(df as f64)
            .map(|dist| dist.sf(statistic))
            .unwrap_or(1.0);
        let rejected = p_value < level;
        trace.push(DimTestRecord {
            s,
            statistic,
            df,
            p_value,
            rejected,
        });
        if !rejected {
            return (s, trace);
        }
    }
    (cap, trace)
}
