//! Standardization, sample moments and symmetric spectral helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{C3Error, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Predictors centered to mean zero and scaled to unit sample variance.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedData {
    pub x: DMatrix<f64>,
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
    pub names: Vec<String>,
}

impl StandardizedData {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> StandardizedData {
        StandardizedData {
            x: self.x.select_columns(columns),
            column_means: columns.iter().map(|&j| self.column_means[j]).collect(),
            column_sds: columns.iter().map(|&j| self.column_sds[j]).collect(),
            names: columns.iter().map(|&j| self.names[j].clone()).collect(),
        }
    }
}

/// Centers each column and divides by its sample standard deviation
/// (divisor `n - 1`).
pub fn standardize(raw: &DMatrix<f64>, names: &[String]) -> Result<StandardizedData> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(C3Error::Config(format!("need at least 2 rows, got {n}")));
    }
    if names.len() != p {
        return Err(C3Error::DimensionMismatch(format!(
            "{} names for {p} columns",
            names.len()
        )));
    }
    let mut x = raw.clone();
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || sd <= 1e-14 * mean.abs().max(1.0) {
            return Err(C3Error::ZeroVariance(names[j].clone()));
        }
        col /= sd;
        means.push(mean);
        sds.push(sd);
    }
    Ok(StandardizedData {
        x,
        column_means: means,
        column_sds: sds,
        names: names.to_vec(),
    })
}

/// Sample covariance blocks of the predictors and the retained spline basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub s_xx: DMatrix<f64>,
    pub s_pp: DMatrix<f64>,
    /// Cross covariance, `q x p`.
    pub s_px: DMatrix<f64>,
    pub n: usize,
}

impl MomentSet {
    pub fn p(&self) -> usize {
        self.s_xx.nrows()
    }

    pub fn q(&self) -> usize {
        self.s_pp.nrows()
    }
}

pub(crate) fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Moments with divisor `n - ddof`.
pub fn moments_with_divisor(
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    ddof: usize,
) -> Result<MomentSet> {
    let n = x.nrows();
    if basis.nrows() != n {
        return Err(C3Error::DimensionMismatch(format!(
            "predictors have {n} rows, basis has {}",
            basis.nrows()
        )));
    }
    if n <= ddof {
        return Err(C3Error::Config(format!("too few rows ({n})")));
    }
    let xc = center_columns(x);
    let pc = center_columns(basis);
    let div = (n - ddof) as f64;
    let mut s_xx = xc.tr_mul(&xc) / div;
    let mut s_pp = pc.tr_mul(&pc) / div;
    s_xx = symmetrize(&s_xx);
    s_pp = symmetrize(&s_pp);
    let s_px = pc.tr_mul(&xc) / div;
    Ok(MomentSet { s_xx, s_pp, s_px, n })
}

/// Sample moments with divisor `n - 1`.
pub fn moments(x: &StandardizedData, basis: &DMatrix<f64>) -> Result<MomentSet> {
    moments_with_divisor(&x.x, basis, 1)
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(C3Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(C3Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Flips `v` so that its largest-magnitude entry is nonnegative.
pub fn sign_normalize(v: &mut DVector<f64>) {
    if let Some((idx, _)) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
    {
        if v[idx] < 0.0 {
            v.neg_mut();
        }
    }
}

/// Eigen decomposition of a symmetric matrix: eigenvalues in descending
/// order with orthonormal eigenvectors as columns.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(a)?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        sign_normalize(&mut v);
        vectors.set_column(dst, &v);
    }
    Ok((values, vectors))
}

/// `A^{-1/2}` for a symmetric positive definite matrix.
pub fn inv_sqrt(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(a)?;
    let lmax = values.iter().copied().fold(0.0f64, f64::max);
    let threshold = rank_tol * lmax;
    let n = values.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let lmin = values[n - 1];
    if !(lmax > 0.0) || lmin <= threshold {
        return Err(C3Error::Singular {
            eigenvalue: lmin,
            threshold,
        });
    }
    let scales = values.map(|v| 1.0 / v.sqrt());
    let scaled = &vectors * DMatrix::from_diagonal(&scales);
    Ok(symmetrize(&(scaled * vectors.transpose())))
}

/// Spectral pseudo-inverse dropping eigenvalues at or below
/// `rank_tol * lambda_max`. Returns the inverse and the retained rank.
pub fn pinv_threshold(a: &DMatrix<f64>, rank_tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let (values, vectors) = sym_eigen(a)?;
    let lmax = values.iter().copied().fold(0.0f64, f64::max);
    let threshold = rank_tol * lmax;
    let n = values.len();
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for i in 0..n {
        if lmax > 0.0 && values[i] > threshold {
            let v = vectors.column(i);
            out += (v * v.transpose()) / values[i];
            rank += 1;
        }
    }
    Ok((symmetrize(&out), rank))
}

/// Pieces of the spectral half-inverse of a PSD matrix restricted to its
/// numerical range: `A^{+1/2} = V_r diag(lambda_r^{-1/2}) V_r^T`.
#[derive(Debug, Clone)]
pub(crate) struct RangeWhitener {
    /// `V_r diag(lambda_r^{-1/2})`, `n x r`.
    pub to_range: DMatrix<f64>,
    /// `V_r diag(lambda_r^{1/2})`, `n x r`.
    pub from_range: DMatrix<f64>,
}

impl RangeWhitener {
    pub fn new(a: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let (values, vectors) = sym_eigen(a)?;
        let lmax = values.iter().copied().fold(0.0f64, f64::max);
        let keep: Vec<usize> = (0..values.len())
            .filter(|&i| lmax > 0.0 && values[i] > rank_tol * lmax)
            .collect();
        let v = vectors.select_columns(&keep);
        let inv = DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / values[i].sqrt()));
        let fwd = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i].sqrt()));
        Ok(Self {
            to_range: &v * DMatrix::from_diagonal(&inv),
            from_range: &v * DMatrix::from_diagonal(&fwd),
        })
    }
}

/// Quadratic form `u^T A v`.
pub fn quad_form(u: &DVector<f64>, a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (a * v).dot(u)
}
