//! Clamped B-spline basis of the response.
//!
//! The response is expanded into `m + k_n` B-spline functions of order `m`
//! on `[a, b]`. Because the full set sums to one, only the first
//! `m + k_n - 1` functions are kept as the left-hand variable set for the
//! canonical correlation fit.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{C3Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotPlacement {
    #[default]
    Quantile,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    /// Spline order (degree + 1). Quadratic splines have order 3.
    pub order: usize,
    pub internal_knots: usize,
    /// Fixed `[a, b]`; the sample range of the response when `None`.
    pub range: Option<(f64, f64)>,
    pub placement: KnotPlacement,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            order: 3,
            internal_knots: 4,
            range: None,
            placement: KnotPlacement::Quantile,
        }
    }
}

impl SplineConfig {
    pub fn new(order: usize, internal_knots: usize) -> Self {
        Self {
            order,
            internal_knots,
            ..Self::default()
        }
    }

    pub fn with_placement(mut self, placement: KnotPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_range(mut self, a: f64, b: f64) -> Self {
        self.range = Some((a, b));
        self
    }

    pub fn num_basis(&self) -> usize {
        self.order + self.internal_knots
    }

    pub fn num_retained(&self) -> usize {
        self.num_basis() - 1
    }
}

/// An immutable clamped B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: Vec<f64>,
    config: SplineConfig,
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Builds the basis from the observed response values.
pub fn make_basis(y_values: &[f64], config: &SplineConfig) -> Result<SplineBasis> {
    if config.order == 0 {
        return Err(C3Error::Config("spline order must be at least 1".into()));
    }
    if y_values.len() < 2 {
        return Err(C3Error::Config(format!(
            "need at least 2 response values, got {}",
            y_values.len()
        )));
    }
    if y_values.iter().any(|v| !v.is_finite()) {
        return Err(C3Error::Data("response contains non-finite values".into()));
    }

    let mut sorted = y_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (a, b) = match config.range {
        Some((a, b)) => (a, b),
        None => (sorted[0], sorted[sorted.len() - 1]),
    };
    if a == b {
        return Err(C3Error::ConstantResponse(a));
    }
    if a > b {
        return Err(C3Error::Config(format!("invalid range [{a}, {b}]")));
    }

    let k = config.internal_knots;
    let mut distinct = sorted.clone();
    distinct.dedup();
    if config.placement == KnotPlacement::Quantile && distinct.len() < k + 2 {
        return Err(C3Error::DegenerateResponse {
            distinct: distinct.len(),
            required: k + 2,
        });
    }

    let raw: Vec<f64> = (1..=k)
        .map(|j| {
            let prob = j as f64 / (k + 1) as f64;
            match config.placement {
                KnotPlacement::Quantile => quantile_sorted(&sorted, prob),
                KnotPlacement::Uniform => a + prob * (b - a),
            }
        })
        .collect();

    // Interior knots must be strictly increasing and strictly inside (a, b).
    // A tied knot moves to the midpoint between its predecessor and the next
    // distinct sample value above it.
    let mut grid: Vec<f64> = distinct.iter().copied().filter(|v| *v > a && *v < b).collect();
    grid.push(b);
    let mut interior = Vec::with_capacity(k);
    let mut prev = a;
    for knot in raw {
        let mut knot = knot;
        if knot <= prev || knot >= b {
            let next = grid.iter().copied().find(|v| *v > prev).unwrap_or(b);
            knot = 0.5 * (prev + next);
        }
        if !(knot > prev && knot < b) {
            return Err(C3Error::DegenerateResponse {
                distinct: distinct.len(),
                required: k + 2,
            });
        }
        interior.push(knot);
        prev = knot;
    }

    let m = config.order;
    let mut knots = Vec::with_capacity(2 * m + k);
    knots.extend(std::iter::repeat_n(a, m));
    knots.extend(interior);
    knots.extend(std::iter::repeat_n(b, m));

    let mut config = config.clone();
    config.range = Some((a, b));
    Ok(SplineBasis { knots, config })
}

impl SplineBasis {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn config(&self) -> &SplineConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn range(&self) -> (f64, f64) {
        let m = self.config.order;
        (self.knots[0], self.knots[self.knots.len() - m])
    }

    pub fn num_basis(&self) -> usize {
        self.config.num_basis()
    }

    pub fn num_retained(&self) -> usize {
        self.config.num_retained()
    }

    /// Knot span index `mu` with `knots[mu] <= y < knots[mu + 1]`, using the
    /// last non-empty span at the right boundary.
    fn span(&self, y: f64) -> usize {
        let m = self.config.order;
        let last = self.num_basis() - 1;
        if y >= self.knots[last + 1] {
            return last;
        }
        // upper_bound over the active part of the knot vector
        let mut lo = m - 1;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// All `m + k_n` basis values at `y` (clamped into `[a, b]`).
    pub fn evaluate_full(&self, y: f64) -> Vec<f64> {
        let (a, b) = self.range();
        let y = y.clamp(a, b);
        let m = self.config.order;
        let degree = m - 1;
        let mu = self.span(y);

        // Triangular de Boor scheme for the `m` nonzero functions on the span.
        let mut local = vec![0.0; m];
        let mut left = vec![0.0; m];
        let mut right = vec![0.0; m];
        local[0] = 1.0;
        for j in 1..=degree {
            left[j] = y - self.knots[mu + 1 - j];
            right[j] = self.knots[mu + j] - y;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { local[r] / denom };
                local[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            local[j] = saved;
        }

        let mut out = vec![0.0; self.num_basis()];
        for (r, value) in local.into_iter().enumerate() {
            out[mu - degree + r] = value;
        }
        out
    }

    /// The retained vector `pi(y)`: the first `m + k_n - 1` basis values.
    pub fn evaluate_pi(&self, y: f64) -> Vec<f64> {
        let mut full = self.evaluate_full(y);
        full.pop();
        full
    }

    pub fn design_matrix(&self, y_values: &[f64]) -> DMatrix<f64> {
        let q = self.num_retained();
        let mut out = DMatrix::zeros(y_values.len(), q);
        for (row, &y) in y_values.iter().enumerate() {
            for (col, v) in self.evaluate_pi(y).into_iter().enumerate() {
                out[(row, col)] = v;
            }
        }
        out
    }

    pub fn full_design_matrix(&self, y_values: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(y_values.len(), self.num_basis());
        for (row, &y) in y_values.iter().enumerate() {
            for (col, v) in self.evaluate_full(y).into_iter().enumerate() {
                out[(row, col)] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox-de Boor definition, written independently of the
    /// triangular scheme above.
    fn cox_de_boor(knots: &[f64], i: usize, order: usize, y: f64, last_span: usize) -> f64 {
        if order == 1 {
            let inside = knots[i] <= y && y < knots[i + 1];
            // right boundary belongs to the last non-empty span
            let at_end = i == last_span && y == knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + order - 1] - knots[i];
        if d1 > 0.0 {
            v += (y - knots[i]) / d1 * cox_de_boor(knots, i, order - 1, y, last_span);
        }
        let d2 = knots[i + order] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + order] - y) / d2 * cox_de_boor(knots, i + 1, order - 1, y, last_span);
        }
        v
    }

    fn oracle_full(basis: &SplineBasis, y: f64) -> Vec<f64> {
        let m = basis.order();
        let nb = basis.num_basis();
        let last_span = nb - 1;
        (0..nb)
            .map(|i| cox_de_boor(basis.knots(), i, m, y, last_span))
            .collect()
    }

    #[test]
    fn linear_no_interior_knots() {
        let y = [0.0, 0.25, 0.5, 0.75, 1.0];
        let basis = make_basis(&y, &SplineConfig::new(2, 0)).unwrap();
        assert_eq!(basis.knots(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(basis.evaluate_pi(0.0), vec![1.0]);
        assert_eq!(basis.evaluate_pi(1.0), vec![0.0]);
        assert!((basis.evaluate_pi(0.25)[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_response_rejected() {
        let err = make_basis(&[1.0, 1.0, 1.0], &SplineConfig::new(3, 1)).unwrap_err();
        assert!(matches!(err, C3Error::ConstantResponse(_)));
    }

    #[test]
    fn too_few_distinct_values() {
        let y = [0.0, 1.0, 0.0, 1.0, 0.5];
        let err = make_basis(&y, &SplineConfig::new(3, 4)).unwrap_err();
        assert!(matches!(
            err,
            C3Error::DegenerateResponse { distinct: 3, required: 6 }
        ));
    }

    #[test]
    fn quantile_knots_on_uniform_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let basis = make_basis(&y, &SplineConfig::default()).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        // independent type-7 quantiles
        for (j, knot) in basis.knots()[3..7].iter().enumerate() {
            let h = 99.0 * (j + 1) as f64 / 5.0;
            let lo = h.floor() as usize;
            let expect = sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo]);
            assert!((knot - expect).abs() < 1e-15);
            // sampling error of a 100-point quantile is about 0.05
            assert!((knot - 0.2 * (j + 1) as f64).abs() < 0.15);
        }
        assert_eq!(basis.knots().len(), 2 * 3 + 4);
    }

    #[test]
    fn uniform_placement() {
        let y = [2.0, 3.0, 6.0];
        let basis =
            make_basis(&y, &SplineConfig::new(3, 3).with_placement(KnotPlacement::Uniform)).unwrap();
        assert_eq!(&basis.knots()[3..6], &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn tied_quantiles_are_nudged_apart() {
        let mut y = vec![0.0; 20];
        y.extend([0.1, 0.2, 0.3, 0.4, 1.0]);
        let basis = make_basis(&y, &SplineConfig::new(3, 4)).unwrap();
        let knots = basis.knots();
        for w in knots[2..8].windows(2) {
            assert!(w[1] > w[0], "{knots:?}");
        }
    }

    #[test]
    fn matches_recursive_oracle_single_interior_knot() {
        let basis = make_basis(&[0.0, 0.5, 1.0], &SplineConfig::new(3, 1)).unwrap();
        assert_eq!(basis.knots(), &[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
        for y in [0.0, 0.1, 0.5, 0.75, 1.0] {
            let got = basis.evaluate_full(y);
            let expect = oracle_full(&basis, y);
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-12, "y={y}: {got:?} vs {expect:?}");
            }
        }
        // at the interior knot: N = (0, 1/2, 1/2, 0)
        let at_knot = basis.evaluate_full(0.5);
        assert!((at_knot[1] - 0.5).abs() < 1e-15 && (at_knot[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn design_matrix_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        let basis = make_basis(&y, &SplineConfig::default()).unwrap();
        let design = basis.design_matrix(&y);
        assert_eq!(design.shape(), (50, 6));
        for (row, &yv) in y.iter().enumerate() {
            let expect = oracle_full(&basis, yv);
            for col in 0..6 {
                assert!((design[(row, col)] - expect[col]).abs() < 1e-12);
            }
        }
        let full = basis.full_design_matrix(&y);
        for row in full.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let single = basis.design_matrix(&y[..1]);
        assert_eq!(single.row(0).iter().copied().collect::<Vec<_>>(), basis.evaluate_pi(y[0]));
    }

    #[test]
    fn out_of_range_is_clamped() {
        let basis = make_basis(&[0.0, 0.3, 0.6, 1.0], &SplineConfig::new(3, 1)).unwrap();
        assert_eq!(basis.evaluate_full(-3.0), basis.evaluate_full(0.0));
        assert_eq!(basis.evaluate_full(9.0), basis.evaluate_full(1.0));
    }

    #[test]
    fn local_support_exact_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let basis = make_basis(&y, &SplineConfig::new(3, 4)).unwrap();
        let knots = basis.knots();
        let (a, b) = basis.range();
        for _ in 0..500 {
            let v = a + (b - a) * rng.random::<f64>();
            let values = basis.evaluate_full(v);
            for (i, value) in values.iter().enumerate() {
                let inside = v >= knots[i] && v <= knots[i + 3];
                if !inside {
                    assert_eq!(*value, 0.0);
                }
            }
        }
    }

    #[test]
    fn retained_basis_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let basis = make_basis(&y, &SplineConfig::default()).unwrap();
        let design = basis.design_matrix(&y);
        let sv = design.singular_values();
        assert!(sv.min() > 1e-6 * sv.max());
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity(y in 0.0f64..=1.0, order in 1usize..5, k in 0usize..6) {
            let sample: Vec<f64> = (0..=20).map(|i| (i as f64 / 20.0).powi(2)).collect();
            let basis = make_basis(&sample, &SplineConfig::new(order, k)).unwrap();
            let values = basis.evaluate_full(y);
            proptest::prop_assert_eq!(values.len(), order + k);
            proptest::prop_assert!(values.iter().all(|v| *v >= 0.0 && *v <= 1.0 + 1e-15));
            proptest::prop_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let pi = basis.evaluate_pi(y);
            proptest::prop_assert_eq!(pi.len(), order + k - 1);
        }
    }
}
