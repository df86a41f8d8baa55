//! BIC-type variable filtering of constrained directions and re-estimation
//! on the union of the surviving variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::c3solver::ConstrainedDirection;
use crate::cancor::{fit_on_subset, CancorFit};
use crate::error::{C3Error, Result};
use crate::moments::{pinv_threshold, quad_form, sign_normalize, MomentSet, StandardizedData};

/// Below this `S_xx` norm a projected direction counts as the zero vector.
pub const ZERO_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub d: usize,
    pub support: Vec<usize>,
    /// Projected direction in all `p` coordinates; `None` when the projection vanished.
    pub projected: Option<Vec<f64>>,
    pub r: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub index: usize,
    pub n: usize,
    /// Records for `d = p, p - 1, ..., index`.
    pub records: Vec<FilterRecord>,
    pub chosen_d: usize,
    pub chosen_support: Vec<usize>,
}

/// Indices of the `d` largest `|beta_j|`, ties to the lower index, returned
/// in increasing order.
pub fn threshold(beta: &[f64], d: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..beta.len()).collect();
    idx.sort_by(|&i, &j| beta[j].abs().total_cmp(&beta[i].abs()).then(i.cmp(&j)));
    let mut keep = idx[..d.min(beta.len())].to_vec();
    keep.sort_unstable();
    keep
}

/// Projects the truncation of `beta` to `support` onto the directions that
/// are `S_xx`-orthogonal to every prior direction and share the zero
/// pattern, in the `S_xx` metric, then rescales to unit `S_xx` norm.
/// Returns `None` when the projection is (numerically) zero.
pub fn project(
    support: &[usize],
    beta: &[f64],
    prior: &[ConstrainedDirection],
    s_xx: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    let p = beta.len();
    if support.is_empty() {
        return None;
    }
    let s_ss = s_xx.select_rows(support).select_columns(support);
    let truncated = DVector::from_iterator(support.len(), support.iter().map(|&j| beta[j]));

    let restricted = if prior.is_empty() {
        truncated
    } else {
        let mut c = DMatrix::zeros(prior.len(), support.len());
        for (row, dir) in prior.iter().enumerate() {
            let sb = s_xx * dir.beta_vec();
            for (col, &j) in support.iter().enumerate() {
                c[(row, col)] = sb[j];
            }
        }
        let s_inv = s_ss.clone().try_inverse()?;
        let s_inv_ct = &s_inv * c.transpose();
        let (middle, _) = pinv_threshold(&(&c * &s_inv_ct), 1e-12).ok()?;
        &truncated - s_inv_ct * (middle * (&c * &truncated))
    };

    let norm = quad_form(&restricted, &s_ss, &restricted).sqrt();
    if !(norm >= ZERO_NORM_TOL) {
        return None;
    }
    let mut out = DVector::zeros(p);
    for (k, &j) in support.iter().enumerate() {
        out[j] = restricted[k] / norm;
    }
    Some(out)
}

/// Sample correlation between `P alpha` and `X beta` from the moments.
pub fn correlation(moments: &MomentSet, alpha: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let va = quad_form(alpha, &moments.s_pp, alpha);
    let vb = quad_form(beta, &moments.s_xx, beta);
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    (quad_form(alpha, &moments.s_px, beta) / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

pub fn bic(n: usize, r: f64, d: usize) -> f64 {
    let n = n as f64;
    n * (1.0 - r * r).ln() + d as f64 * n.ln()
}

/// Scans `d = p` down to `d = i` and picks the support size minimizing
/// `BIC(d) = n log(1 - r_d^2) + d log n` (ties to the smaller `d`).
pub fn filter_direction(
    direction: &ConstrainedDirection,
    prior: &[ConstrainedDirection],
    moments: &MomentSet,
) -> Result<FilterTrace> {
    let p = moments.p();
    let i = direction.index;
    if direction.beta.len() != p || direction.alpha.len() != moments.q() {
        return Err(C3Error::DimensionMismatch(format!(
            "direction {i} does not match the moment dimensions"
        )));
    }
    if i == 0 || i > p {
        return Err(C3Error::Config(format!("direction index {i} out of range 1..={p}")));
    }
    let alpha = direction.alpha_vec();
    let n = moments.n;
    let mut records = Vec::with_capacity(p - i + 1);
    for d in (i..=p).rev() {
        let support = threshold(&direction.beta, d);
        let projected = project(&support, &direction.beta, prior, &moments.s_xx);
        let r = match &projected {
            Some(b) => correlation(moments, &alpha, b),
            None => 0.0,
        };
        records.push(FilterRecord {
            d,
            support,
            projected: projected.map(|b| b.iter().copied().collect()),
            r,
            bic: bic(n, r, d),
        });
    }
    let best = records
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.d.cmp(&b.d)))
        .expect("at least one record");
    let chosen_d = best.d;
    Ok(FilterTrace {
        index: i,
        n,
        chosen_support: threshold(&direction.beta, chosen_d),
        chosen_d,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDirection {
    pub index: usize,
    pub support: Vec<usize>,
    /// Coefficients on standardized predictors, zero off the support.
    pub beta: Vec<f64>,
    /// `beta` rescaled to unit Euclidean norm.
    pub reported: Vec<f64>,
    /// Coefficients for the original (unstandardized) predictors, unit norm.
    pub original_units: Vec<f64>,
    /// Correlation between the re-estimated basis combination and `X beta`.
    pub correlation: f64,
}

/// Re-estimation CANCOR on the union of selected variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refit {
    pub columns: Vec<usize>,
    pub gamma: Vec<f64>,
    /// Directions in subset coordinates, one vector per direction.
    pub beta: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
}

impl From<&CancorFit> for Refit {
    fn from(fit: &CancorFit) -> Self {
        Self {
            columns: fit.columns.clone(),
            gamma: fit.gamma.clone(),
            beta: fit.beta.column_iter().map(|c| c.iter().copied().collect()).collect(),
            alpha: fit.alpha.column_iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFit {
    pub directions: Vec<FinalDirection>,
    pub union_support: Vec<usize>,
    pub traces: Vec<FilterTrace>,
    pub refit: Refit,
}

impl FinalFit {
    /// The `p x K` matrix of final directions (standardized scale).
    pub fn beta_matrix(&self) -> DMatrix<f64> {
        let p = self.directions.first().map_or(0, |d| d.beta.len());
        let mut out = DMatrix::zeros(p, self.directions.len());
        for (k, dir) in self.directions.iter().enumerate() {
            out.set_column(k, &DVector::from_column_slice(&dir.beta));
        }
        out
    }
}

fn unit(mut v: DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    sign_normalize(&mut v);
    v
}

/// Re-estimates CANCOR on the union of the filtered supports and keeps each
/// direction's own zero pattern.
pub fn finalize(
    traces: &[FilterTrace],
    x: &StandardizedData,
    basis: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<FinalFit> {
    let p = x.ncols();
    let mut union: Vec<usize> = traces.iter().flat_map(|t| t.chosen_support.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    if union.is_empty() {
        return Err(C3Error::DegenerateFit("every direction was filtered to zero".into()));
    }
    let refit = fit_on_subset(x, &union, basis, rank_tol)?;
    let moments = crate::moments::moments(x, basis)?;

    let mut directions = Vec::with_capacity(traces.len());
    for (k, trace) in traces.iter().enumerate() {
        if k >= refit.num_directions() {
            return Err(C3Error::DegenerateFit(format!(
                "re-estimation yields {} directions, need {}",
                refit.num_directions(),
                traces.len()
            )));
        }
        let full = refit.embedded_beta(k);
        let mut beta = DVector::zeros(p);
        for &j in &trace.chosen_support {
            beta[j] = full[j];
        }
        let reported = unit(beta.clone());
        // keep the internal copy on the same side as the reported one
        if reported.dot(&beta) < 0.0 {
            beta.neg_mut();
        }
        let original = unit(DVector::from_iterator(
            p,
            (0..p).map(|j| beta[j] / x.column_sds[j]),
        ));
        let alpha = refit.alpha_col(k);
        let correlation = correlation(&moments, &alpha, &beta).abs();
        directions.push(FinalDirection {
            index: trace.index,
            support: trace.chosen_support.clone(),
            beta: beta.iter().copied().collect(),
            reported: reported.iter().copied().collect(),
            original_units: original.iter().copied().collect(),
            correlation,
        });
    }
    Ok(FinalFit {
        directions,
        union_support: union,
        traces: traces.to_vec(),
        refit: Refit::from(&refit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{moments, standardize};
    use crate::splines::{make_basis, SplineConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(n: usize, p: usize, seed: u64) -> (StandardizedData, DMatrix<f64>, MomentSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                raw[(i, 0)] + raw[(i, 1)] + 0.5 * e
            })
            .collect();
        let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        let x = standardize(&raw, &names).unwrap();
        let basis = make_basis(&y, &SplineConfig::default()).unwrap().design_matrix(&y);
        let m = moments(&x, &basis).unwrap();
        (x, basis, m)
    }

    fn direction(index: usize, beta: Vec<f64>, alpha: Vec<f64>) -> ConstrainedDirection {
        ConstrainedDirection {
            index,
            beta,
            alpha,
            gamma: 0.0,
            t_selected: 1.0,
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold(&[0.9, -0.8, 0.1], 2), vec![0, 1]);
        assert_eq!(threshold(&[0.9, -0.8, 0.1], 3), vec![0, 1, 2]);
        assert_eq!(threshold(&[0.5, -0.5, 0.5], 2), vec![0, 1]);
        assert!(threshold(&[0.5, 0.2], 0).is_empty());
    }

    #[test]
    fn threshold_against_sort() {
        let beta = [0.3, -0.05, 0.7, 0.11, -0.9, 0.02];
        for d in 0..=6 {
            let keep = threshold(&beta, d);
            let mut mags: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
            mags.sort_by(|a, b| a.total_cmp(b));
            let dropped: Vec<f64> = (0..6).filter(|j| !keep.contains(j)).map(|j| beta[j].abs()).collect();
            let mut dropped_sorted = dropped.clone();
            dropped_sorted.sort_by(|a, b| a.total_cmp(b));
            assert_eq!(dropped_sorted, mags[..6 - d].to_vec());
        }
    }

    #[test]
    fn projection_first_direction_is_rescaled_truncation() {
        let (_, _, m) = setup(100, 4, 1);
        let beta = vec![0.8, 0.5, -0.1, 0.05];
        let out = project(&[0, 1], &beta, &[], &m.s_xx).unwrap();
        assert_eq!(out[2], 0.0);
        assert_eq!(out[3], 0.0);
        assert!((out[0] / out[1] - 1.6).abs() < 1e-12);
        assert!((quad_form(&out, &m.s_xx, &out) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_vanishes_when_support_too_small() {
        let (_, _, m) = setup(100, 4, 2);
        let prior = vec![direction(1, vec![0.6, 0.5, 0.3, 0.1], vec![0.0; 6])];
        // d = 1 < i = 2: a single coordinate cannot be orthogonal to the prior
        assert!(project(&[2], &[0.1, 0.2, 0.9, 0.1], &prior, &m.s_xx).is_none());
    }

    #[test]
    fn projection_matches_grid_oracle() {
        // p = 3, i = 2; feasible set on support {0, 1, 2} is a plane through
        // the origin, searched by brute force over a grid of its coordinates.
        let (_, _, m) = setup(150, 3, 3);
        let prior_beta = vec![0.7, 0.4, -0.2];
        let prior = vec![direction(1, prior_beta.clone(), vec![0.0; 6])];
        let beta = vec![0.3, -0.6, 0.5];
        let out = project(&[0, 1, 2], &beta, &prior, &m.s_xx).unwrap();
        let c = &m.s_xx * DVector::from_vec(prior_beta);
        assert!(c.dot(&out).abs() < 1e-10);
        assert!((quad_form(&out, &m.s_xx, &out) - 1.0).abs() < 1e-10);

        // null space basis of c^T
        let u = DVector::from_vec(vec![c[1], -c[0], 0.0]).normalize();
        let w = c.cross(&u).normalize();
        let target = DVector::from_vec(beta);
        let dist = |v: &DVector<f64>| {
            let diff = v - &target;
            quad_form(&diff, &m.s_xx, &diff)
        };
        let mut best = (f64::INFINITY, DVector::zeros(3));
        for a in -300..=300 {
            for b in -300..=300 {
                let v = &u * (a as f64 / 200.0) + &w * (b as f64 / 200.0);
                let dv = dist(&v);
                if dv < best.0 {
                    best = (dv, v);
                }
            }
        }
        // unnormalized minimizer is parallel to the projection
        let grid_dir = &best.1 / quad_form(&best.1, &m.s_xx, &best.1).sqrt();
        assert!((grid_dir - &out).amax() < 2e-2);
    }

    #[test]
    fn full_support_projection_is_identity() {
        let (_, _, m) = setup(100, 4, 4);
        let mut b = DVector::from_vec(vec![0.4, 0.3, -0.2, 0.1]);
        b /= quad_form(&b, &m.s_xx, &b).sqrt();
        let out = project(&[0, 1, 2, 3], b.as_slice(), &[], &m.s_xx).unwrap();
        assert!((out - b).amax() < 1e-10);
    }

    #[test]
    fn bic_identity_and_choice() {
        let (x, basis, m) = setup(200, 5, 5);
        let fit = crate::cancor::fit(&x, &basis, 1e-10).unwrap();
        let dir = direction(1, fit.beta_col(0).iter().copied().collect(), fit.alpha_col(0).iter().copied().collect());
        let trace = filter_direction(&dir, &[], &m).unwrap();
        assert_eq!(trace.records.len(), 5);
        for rec in &trace.records {
            assert_eq!(rec.support.len(), rec.d);
            let expect = 200.0 * (1.0 - rec.r * rec.r).ln() + rec.d as f64 * 200f64.ln();
            assert_eq!(rec.bic, expect);
            assert!(rec.r.abs() <= 1.0);
        }
        assert!(trace.chosen_d >= 1);
        assert!(trace.chosen_support.contains(&0) && trace.chosen_support.contains(&1));
    }

    #[test]
    fn sample_pearson_matches_moment_correlation() {
        let (x, basis, m) = setup(90, 3, 6);
        let alpha = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.4]);
        let beta = DVector::from_vec(vec![1.0, 0.0, -0.5]);
        let u = &basis * &alpha;
        let v = &x.x * &beta;
        let (mu, mv) = (u.mean(), v.mean());
        let cov: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - mu) * (b - mv)).sum();
        let su: f64 = u.iter().map(|a| (a - mu).powi(2)).sum::<f64>().sqrt();
        let sv: f64 = v.iter().map(|b| (b - mv).powi(2)).sum::<f64>().sqrt();
        assert!((correlation(&m, &alpha, &beta) - cov / (su * sv)).abs() < 1e-12);
    }

    #[test]
    fn equal_correlations_pick_smallest_support() {
        // direction supported on the first two coordinates; the others carry
        // zero weight, so r_d is the same for every d >= 2
        let (x, basis, m) = setup(150, 5, 7);
        let sub = crate::cancor::fit_on_subset(&x, &[0, 1], &basis, 1e-10).unwrap();
        let beta: Vec<f64> = sub.embedded_beta(0).iter().copied().collect();
        let dir = direction(1, beta, sub.alpha_col(0).iter().copied().collect());
        let trace = filter_direction(&dir, &[], &m).unwrap();
        let r2 = trace.records.iter().find(|r| r.d == 2).unwrap().r;
        for rec in trace.records.iter().filter(|r| r.d >= 2) {
            assert!((rec.r - r2).abs() < 1e-12);
        }
        assert_eq!(trace.chosen_d, 2);
    }

    #[test]
    fn finalize_keeps_zero_pattern() {
        let (x, basis, m) = setup(150, 5, 8);
        let fit = crate::cancor::fit(&x, &basis, 1e-10).unwrap();
        let dir = direction(1, fit.beta_col(0).iter().copied().collect(), fit.alpha_col(0).iter().copied().collect());
        let trace = filter_direction(&dir, &[], &m).unwrap();
        let fin = finalize(std::slice::from_ref(&trace), &x, &basis, 1e-10).unwrap();
        let d = &fin.directions[0];
        for j in 0..5 {
            if !trace.chosen_support.contains(&j) {
                assert_eq!(d.beta[j], 0.0);
                assert_eq!(d.reported[j], 0.0);
            } else {
                assert!(d.beta[j] != 0.0);
            }
        }
        let norm: f64 = d.reported.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
        assert!((d.correlation - fin.refit.gamma[0]).abs() < 1e-10);
    }

    #[test]
    fn finalize_full_support_reproduces_cancor() {
        let (x, basis, _) = setup(120, 4, 9);
        let fit = crate::cancor::fit(&x, &basis, 1e-10).unwrap();
        let trace = FilterTrace {
            index: 1,
            n: 120,
            records: vec![],
            chosen_d: 4,
            chosen_support: vec![0, 1, 2, 3],
        };
        let fin = finalize(&[trace], &x, &basis, 1e-10).unwrap();
        let b = fit.beta_col(0);
        let expect = &b / b.norm();
        let got = DVector::from_column_slice(&fin.directions[0].reported);
        assert!((got - expect).amax() < 1e-10);
    }

    #[test]
    fn finalize_single_variable() {
        let (x, basis, _) = setup(120, 4, 10);
        let trace = FilterTrace {
            index: 1,
            n: 120,
            records: vec![],
            chosen_d: 1,
            chosen_support: vec![2],
        };
        let fin = finalize(&[trace], &x, &basis, 1e-10).unwrap();
        assert_eq!(fin.directions[0].reported, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn finalize_empty_union_is_degenerate() {
        let (x, basis, _) = setup(60, 3, 11);
        let trace = FilterTrace {
            index: 1,
            n: 60,
            records: vec![],
            chosen_d: 0,
            chosen_support: vec![],
        };
        assert!(matches!(
            finalize(&[trace], &x, &basis, 1e-10),
            Err(C3Error::DegenerateFit(_))
        ));
    }
}
