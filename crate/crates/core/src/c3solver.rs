//! L1-constrained canonical correlation along a decreasing `t` path.
//!
//! For a fixed predictor direction `beta`, the best basis direction `alpha`
//! has a closed form, so each problem reduces to maximizing the convex form
//! `beta^T M beta` over
//!
//! ```text
//! F_t = { beta : beta^T S_xx beta = 1, ||beta||_1 <= t, beta^T S_xx beta_l = 0 (l < i) }.
//! ```
//!
//! The solver is a minorize-maximize scheme: the convex objective is
//! linearized at the current iterate and the linear function is maximized
//! exactly over `F_t`. That subproblem is a lasso in disguise. With
//! `b(nu) = argmin 1/2 b^T S b - a^T b + nu ||b||_1` subject to the
//! orthogonality constraints, the maximizer is `b(nu) / ||b(nu)||_S` at the
//! penalty where `||b||_1 = t ||b||_S`. `b(nu)` is piecewise linear in `nu`
//! and is followed exactly by a homotopy, so every iterate is feasible and
//! the objective never decreases.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{C3Error, Result};
use crate::moments::{pinv_threshold, quad_form, sym_eigen, MomentSet, RangeWhitener, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Level of the one-sided lower confidence limit.
    pub alpha_level: f64,
    pub delta_t: f64,
    pub constraint_tol: f64,
    pub objective_tol: f64,
    pub max_iterations: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            alpha_level: 0.005,
            delta_t: 0.05,
            constraint_tol: 1e-8,
            objective_tol: 1e-9,
            max_iterations: 500,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(C3Error::Config(format!(
                "alpha level must be in (0, 1), got {}",
                self.alpha_level
            )));
        }
        if !(self.delta_t > 0.0) {
            return Err(C3Error::Config(format!("delta t must be positive, got {}", self.delta_t)));
        }
        Ok(())
    }
}

/// The selected constrained direction `i` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedDirection {
    pub index: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub t_selected: f64,
}

impl ConstrainedDirection {
    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn alpha_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub t: f64,
    pub gamma: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Correlation at the next `t` fell below the lower confidence limit.
    BelowLimit,
    /// `t` reached its floor of 1.
    ReachedFloor,
    /// The solver did not converge at the next `t`.
    NonConverged,
    /// The next `t` admits no feasible direction.
    Infeasible,
    /// `t0` is already at the floor.
    SingleRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub index: usize,
    /// Accepted records; the last one is the selected solution.
    pub records: Vec<PathRecord>,
    pub t0: f64,
    pub lower_limit: f64,
    pub stop_reason: StopReason,
    /// The record that triggered the stop, if any.
    pub rejected: Option<PathRecord>,
}

/// Fisher-transform lower confidence limit of a canonical correlation.
pub fn lower_conf_limit(gamma_hat: f64, n: usize, alpha_level: f64) -> Result<f64> {
    if n <= 3 {
        return Err(C3Error::Config(format!("need n > 3 for the Fisher limit, got {n}")));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(C3Error::Config(format!("alpha level must be in (0, 1), got {alpha_level}")));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha_level);
    let gamma = gamma_hat.min(1.0 - 1e-12);
    let rho = gamma.atanh();
    let tau = rho - z / ((n - 3) as f64).sqrt();
    Ok(tau.tanh())
}

/// Result of one constrained solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub gamma: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Problem data for direction `i` given the prior constrained directions.
struct ReducedProblem<'a> {
    s_xx: &'a DMatrix<f64>,
    /// Whitened cross covariance with prior basis directions projected out, `r x p`.
    g: DMatrix<f64>,
    /// `M = G^T G`.
    m: DMatrix<f64>,
    /// Orthogonality constraints `C beta = 0`, one row per prior direction.
    c: DMatrix<f64>,
    /// Maps whitened basis coordinates back to `alpha`.
    to_alpha: DMatrix<f64>,
}

impl<'a> ReducedProblem<'a> {
    fn new(moments: &'a MomentSet, prior: &[ConstrainedDirection]) -> Result<Self> {
        let p = moments.p();
        let whitener = RangeWhitener::new(&moments.s_pp, DEFAULT_RANK_TOL)?;
        let mut g = whitener.to_range.tr_mul(&moments.s_px);

        // Prior alphas in whitened coordinates, orthonormalized.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for dir in prior {
            if dir.alpha.len() != moments.q() || dir.beta.len() != p {
                return Err(C3Error::DimensionMismatch(format!(
                    "prior direction {} does not match the moment dimensions",
                    dir.index
                )));
            }
            let mut u = whitener.from_range.tr_mul(&dir.alpha_vec());
            for e in &basis {
                let proj = e.dot(&u);
                u.axpy(-proj, e, 1.0);
            }
            let norm = u.norm();
            if norm > 1e-10 {
                basis.push(u / norm);
            }
        }
        for e in &basis {
            let proj = e.transpose() * &g;
            g -= e * proj;
        }
        let m = g.tr_mul(&g);
        let m = (&m + m.transpose()) * 0.5;

        let mut c = DMatrix::zeros(prior.len(), p);
        for (row, dir) in prior.iter().enumerate() {
            let sb = &moments.s_xx * dir.beta_vec();
            c.set_row(row, &sb.transpose());
        }
        Ok(Self {
            s_xx: &moments.s_xx,
            g,
            m,
            c,
            to_alpha: whitener.to_range,
        })
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        (&self.g * beta).norm()
    }

    fn alpha_for(&self, beta: &DVector<f64>) -> DVector<f64> {
        let h = &self.g * beta;
        let norm = h.norm();
        if norm > 0.0 {
            &self.to_alpha * (h / norm)
        } else {
            DVector::zeros(self.to_alpha.nrows())
        }
    }
}

/// Active set with signs describing one linear piece of the lasso path.
#[derive(Debug, Clone, PartialEq)]
struct Pattern {
    active: Vec<usize>,
    signs: Vec<f64>,
}

/// One linear piece `b_A(nu) = e - nu d` of the constrained lasso path with
/// inactive subgradients `c_j(nu) = g_j + nu h_j`.
struct Piece {
    e: DVector<f64>,
    d: DVector<f64>,
    g: DVector<f64>,
    h: DVector<f64>,
}

struct LinearMaximizer<'a> {
    s: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    a: DVector<f64>,
    t: f64,
}

const NU_EPS: f64 = 1e-12;
/// Relative slack on `||b||_1 <= t ||b||_S` absorbing round-off at `t = 1`.
const RATIO_SLACK: f64 = 1e-12;

impl<'a> LinearMaximizer<'a> {
    fn piece(&self, pattern: &Pattern) -> Option<Piece> {
        let p = self.s.nrows();
        let k = pattern.active.len();
        let s_aa = self.s.select_rows(&pattern.active).select_columns(&pattern.active);
        let a_a = DVector::from_iterator(k, pattern.active.iter().map(|&j| self.a[j]));
        let s_a = DVector::from_column_slice(&pattern.signs);
        let ncon = self.c.nrows();

        // Null space of the constraints restricted to the active set.
        let (null, c_a) = if ncon == 0 {
            (DMatrix::identity(k, k), None)
        } else {
            let c_a = self.c.select_columns(&pattern.active);
            let (vals, vecs) = sym_eigen(&c_a.tr_mul(&c_a)).ok()?;
            let top = vals.iter().copied().fold(0.0f64, f64::max).max(1e-300);
            let keep: Vec<usize> = (0..k).filter(|&i| vals[i] <= 1e-12 * top).collect();
            (vecs.select_columns(&keep), Some(c_a))
        };
        if null.ncols() == 0 {
            return None;
        }
        let reduced = null.tr_mul(&(&s_aa * &null));
        let chol = Cholesky::new((&reduced + reduced.transpose()) * 0.5)?;
        let e = &null * chol.solve(&null.tr_mul(&a_a));
        let d = &null * chol.solve(&null.tr_mul(&s_a));

        // Multipliers of the orthogonality constraints.
        let (lam_e, lam_d) = match &c_a {
            Some(c_a) => {
                let (cc_inv, _) = pinv_threshold(&(c_a * c_a.transpose()), 1e-14).ok()?;
                let r_e = &a_a - &s_aa * &e;
                let r_d = &s_a - &s_aa * &d;
                (cc_inv.clone() * (c_a * r_e), cc_inv * (c_a * r_d))
            }
            None => (DVector::zeros(0), DVector::zeros(0)),
        };

        let mut g = DVector::zeros(p);
        let mut h = DVector::zeros(p);
        let mut is_active = vec![false; p];
        for &j in &pattern.active {
            is_active[j] = true;
        }
        for j in (0..p).filter(|&j| !is_active[j]) {
            let mut sje = 0.0;
            let mut sjd = 0.0;
            for (idx, &l) in pattern.active.iter().enumerate() {
                sje += self.s[(j, l)] * e[idx];
                sjd += self.s[(j, l)] * d[idx];
            }
            let mut cle = 0.0;
            let mut cld = 0.0;
            for r in 0..ncon {
                cle += self.c[(r, j)] * lam_e[r];
                cld += self.c[(r, j)] * lam_d[r];
            }
            g[j] = self.a[j] - sje - cle;
            h[j] = sjd + cld;
        }
        Some(Piece { e, d, g, h })
    }

    /// Smallest `nu` in `[lo, hi]` with `||b||_1 <= t ||b||_S` on this piece.
    fn crossing(&self, pattern: &Pattern, piece: &Piece, lo: f64, hi: f64) -> Option<f64> {
        let s_aa = self.s.select_rows(&pattern.active).select_columns(&pattern.active);
        let signs = DVector::from_column_slice(&pattern.signs);
        let se = signs.dot(&piece.e);
        let sd = signs.dot(&piece.d);
        let ese = quad_form(&piece.e, &s_aa, &piece.e);
        let esd = quad_form(&piece.e, &s_aa, &piece.d);
        let dsd = quad_form(&piece.d, &s_aa, &piece.d);
        let t2 = (self.t * (1.0 + RATIO_SLACK)).powi(2);
        // f(nu) = L1(nu)^2 - t^2 Q(nu) <= 0 means feasible
        let c2 = sd * sd - t2 * dsd;
        let c1 = -2.0 * se * sd + 2.0 * t2 * esd;
        let c0 = se * se - t2 * ese;
        let f = |nu: f64| c0 + nu * (c1 + nu * c2);
        let scale = (se * se).abs().max(t2 * ese.abs()).max(1e-300);
        // Accept only points with a nondegenerate b whose actual ratio holds.
        let ok = |nu: f64| {
            let b = &piece.e - &piece.d * nu;
            let size = piece.e.amax().max(nu.abs() * piece.d.amax());
            if b.amax() <= 1e-9 * size {
                return false;
            }
            let l1: f64 = b.iter().map(|x| x.abs()).sum();
            let q = quad_form(&b, &s_aa, &b);
            q > 0.0 && l1 <= self.t * (1.0 + 1e-10) * q.sqrt()
        };

        if f(lo) <= 1e-13 * scale && ok(lo) {
            return Some(lo);
        }
        let mut roots = Vec::new();
        if c2.abs() > 1e-14 * scale {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // numerically stable pair
                let qv = -0.5 * (c1 + c1.signum() * sq);
                if qv != 0.0 {
                    roots.push(qv / c2);
                    roots.push(c0 / qv);
                }
            }
        } else if c1 != 0.0 {
            roots.push(-c0 / c1);
        }
        roots.sort_by(f64::total_cmp);
        roots
            .into_iter()
            .find(|&nu| nu >= lo && nu <= hi && ok(nu))
    }

    fn finish(&self, pattern: &Pattern, piece: &Piece, nu: f64) -> DVector<f64> {
        let p = self.s.nrows();
        let mut b = DVector::zeros(p);
        for (idx, &j) in pattern.active.iter().enumerate() {
            b[j] = piece.e[idx] - nu * piece.d[idx];
        }
        let norm = quad_form(&b, self.s, &b).sqrt();
        b / norm
    }

    /// Checks that `pattern` is the correct piece at `nu` (KKT conditions).
    fn verify(&self, pattern: &Pattern, piece: &Piece, nu: f64) -> bool {
        let tol = 1e-10 * (1.0 + nu);
        for (idx, &s) in pattern.signs.iter().enumerate() {
            let b = piece.e[idx] - nu * piece.d[idx];
            if b * s < 0.0 {
                return false;
            }
        }
        let mut is_active = vec![false; self.s.nrows()];
        for &j in &pattern.active {
            is_active[j] = true;
        }
        (0..self.s.nrows())
            .filter(|&j| !is_active[j])
            .all(|j| (piece.g[j] + nu * piece.h[j]).abs() <= nu + tol)
    }

    /// Tries to solve directly on a guessed pattern.
    fn solve_on_pattern(&self, pattern: &Pattern) -> Option<(DVector<f64>, Pattern)> {
        if pattern.active.is_empty() {
            return None;
        }
        let piece = self.piece(pattern)?;
        let nu = self.crossing(pattern, &piece, 0.0, f64::INFINITY)?;
        // At nu = 0 the unpenalized solution must itself be sign consistent.
        if self.verify(pattern, &piece, nu) && (nu > 0.0 || self.ratio_ok_at_zero(pattern, &piece)) {
            Some((self.finish(pattern, &piece, nu), pattern.clone()))
        } else {
            None
        }
    }

    fn ratio_ok_at_zero(&self, pattern: &Pattern, piece: &Piece) -> bool {
        let p = self.s.nrows();
        if pattern.active.len() != p {
            return piece.g.iter().all(|v| v.abs() <= 1e-10);
        }
        true
    }

    fn immediate_event(&self, pattern: &Pattern, piece: &Piece, nu: f64) -> Option<(usize, bool, f64)> {
        let p = self.s.nrows();
        let tol_c = 1e-9 * (1.0 + nu);
        let tol_b = 1e-12 * piece.e.amax().max(nu * piece.d.amax()).max(1e-300);
        let mut best: Option<(usize, bool, f64)> = None;
        let mut best_score = 0.0;
        for (idx, &j) in pattern.active.iter().enumerate() {
            let s = pattern.signs[idx];
            let val = piece.e[idx] - nu * piece.d[idx];
            let rate = s * piece.d[idx];
            if s * val <= tol_b && rate > 1e-15 && rate > best_score {
                best_score = rate;
                best = Some((j, false, 0.0));
            }
        }
        if best.is_some() {
            return best;
        }
        let mut is_active = vec![false; p];
        for &j in &pattern.active {
            is_active[j] = true;
        }
        for j in (0..p).filter(|&j| !is_active[j]) {
            let c = piece.g[j] + nu * piece.h[j];
            let s = if c.abs() > tol_c { c.signum() } else { piece.h[j].signum() };
            let excess = s * piece.h[j] - 1.0;
            if s * c >= nu - tol_c && excess > 1e-12 && excess > best_score {
                best_score = excess;
                best = Some((j, true, s));
            }
        }
        best
    }

    /// Full homotopy from `nu = 0` upward.
    fn solve_homotopy(&self) -> Result<(DVector<f64>, Pattern)> {
        let p = self.s.nrows();
        let all = Pattern {
            active: (0..p).collect(),
            signs: vec![1.0; p],
        };
        let piece0 = self
            .piece(&all)
            .ok_or_else(|| C3Error::Infeasible("orthogonality constraints leave no room".into()))?;
        let scale = piece0.e.amax().max(1e-300);
        let mut active = Vec::new();
        let mut signs = Vec::new();
        for j in 0..p {
            if piece0.e[j].abs() > 1e-14 * scale {
                active.push(j);
                signs.push(piece0.e[j].signum());
            }
        }
        let mut pattern = Pattern { active, signs };
        let mut nu = 0.0;

        for _ in 0..(40 * p + 100) {
            if pattern.active.is_empty() {
                break;
            }
            let piece = match self.piece(&pattern) {
                Some(pc) => pc,
                None => break,
            };
            if piece.e.amax() == 0.0 && piece.d.amax() == 0.0 {
                break;
            }

            // Degenerate starts: an inactive variable whose subgradient is
            // at the bound and grows faster than nu enters now, an active
            // variable at zero moving the wrong way leaves now.
            if let Some((j, entering, sign)) = self.immediate_event(&pattern, &piece, nu) {
                if entering {
                    let pos = pattern.active.partition_point(|&x| x < j);
                    pattern.active.insert(pos, j);
                    pattern.signs.insert(pos, sign);
                } else {
                    let pos = pattern.active.iter().position(|&x| x == j).unwrap();
                    pattern.active.remove(pos);
                    pattern.signs.remove(pos);
                }
                continue;
            }

            // next event
            let eps = NU_EPS * (1.0 + nu);
            let mut next = f64::INFINITY;
            let mut event: Option<(usize, bool, f64)> = None;
            for (idx, &j) in pattern.active.iter().enumerate() {
                let d = piece.d[idx];
                if d != 0.0 {
                    let cand = piece.e[idx] / d;
                    if cand > nu + eps && cand < next {
                        next = cand;
                        event = Some((j, false, 0.0));
                    }
                }
            }
            let mut is_active = vec![false; p];
            for &j in &pattern.active {
                is_active[j] = true;
            }
            for j in (0..p).filter(|&j| !is_active[j]) {
                let (g, h) = (piece.g[j], piece.h[j]);
                for sign in [1.0, -1.0] {
                    // sign * (g + nu h) = nu
                    let denom = 1.0 - sign * h;
                    if denom.abs() > 1e-15 {
                        let cand = sign * g / denom;
                        if cand > nu + eps && cand < next {
                            next = cand;
                            event = Some((j, true, sign));
                        }
                    }
                }
            }

            if let Some(cross) = self.crossing(&pattern, &piece, nu, next) {
                return Ok((self.finish(&pattern, &piece, cross), pattern));
            }
            match event {
                None => break,
                Some((j, entering, sign)) => {
                    nu = next;
                    if entering {
                        let pos = pattern.active.partition_point(|&x| x < j);
                        pattern.active.insert(pos, j);
                        pattern.signs.insert(pos, sign);
                    } else {
                        let pos = pattern.active.iter().position(|&x| x == j).unwrap();
                        pattern.active.remove(pos);
                        pattern.signs.remove(pos);
                    }
                }
            }
        }
        Err(C3Error::Infeasible(format!(
            "no direction with ||beta||_1 <= {} satisfies the constraints",
            self.t
        )))
    }
}

/// Maximizes `a^T beta` over `{beta^T S beta = 1, ||beta||_1 <= t, C beta = 0}`.
///
/// `hint` is a pattern from a nearby problem; when its KKT conditions check
/// out, the homotopy is skipped.
fn maximize_linear(
    s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    a: &DVector<f64>,
    t: f64,
    hint: Option<&Pattern>,
) -> Result<(DVector<f64>, Pattern)> {
    let solver = LinearMaximizer { s, c, a: a.clone(), t };
    if let Some(pattern) = hint {
        if let Some(found) = solver.solve_on_pattern(pattern) {
            return Ok(found);
        }
    }
    solver.solve_homotopy()
}

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Solves the constrained problem for direction `prior.len() + 1` at `t`.
///
/// Returns a local maximizer reached by monotone ascent from the projection
/// of `warm_beta` onto the feasible set. When the iteration cap is hit the
/// best iterate is returned with `converged = false`.
pub fn solve_constrained(
    moments: &MomentSet,
    t: f64,
    prior: &[ConstrainedDirection],
    warm_beta: &DVector<f64>,
    config: &PathConfig,
) -> Result<SolveOutcome> {
    if !(t >= 1.0) {
        return Err(C3Error::Infeasible(format!("t = {t} is below 1")));
    }
    if warm_beta.len() != moments.p() {
        return Err(C3Error::DimensionMismatch(format!(
            "warm start has length {}, expected {}",
            warm_beta.len(),
            moments.p()
        )));
    }
    let problem = ReducedProblem::new(moments, prior)?;

    // Projection of the warm start: the feasible point closest in angle.
    let a0 = problem.s_xx * warm_beta;
    let (mut beta, mut pattern) = maximize_linear(problem.s_xx, &problem.c, &a0, t, None)?;
    let mut value = problem.objective(&beta);
    let mut prev_beta = beta.clone();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        // Extrapolated linearization point; plain step if it does not help.
        let mut candidate = None;
        if iterations > 2 {
            let point = &beta + (&beta - &prev_beta) * 0.8;
            let a = &problem.m * point;
            if let Ok((b, pat)) = maximize_linear(problem.s_xx, &problem.c, &a, t, Some(&pattern)) {
                let v = problem.objective(&b);
                if v > value {
                    candidate = Some((b, pat, v));
                }
            }
        }
        let (next, next_pattern, next_value) = match candidate {
            Some(found) => found,
            None => {
                let a = &problem.m * &beta;
                if a.amax() == 0.0 {
                    converged = true;
                    break;
                }
                let (b, pat) = maximize_linear(problem.s_xx, &problem.c, &a, t, Some(&pattern))?;
                let v = problem.objective(&b);
                (b, pat, v)
            }
        };
        if next_value < value {
            // round-off at the optimum
            converged = value - next_value <= config.objective_tol;
            break;
        }
        let gain = next_value - value;
        let step = (&next - &beta).amax();
        prev_beta = std::mem::replace(&mut beta, next);
        pattern = next_pattern;
        value = next_value;
        if gain <= config.objective_tol && step <= 1e-5 {
            converged = true;
            break;
        }
    }

    let alpha = problem.alpha_for(&beta);
    if l1(&beta) > t + config.constraint_tol {
        return Err(C3Error::DegenerateFit(format!(
            "solver returned ||beta||_1 = {} above t = {t}",
            l1(&beta)
        )));
    }
    Ok(SolveOutcome {
        gamma: value,
        beta,
        alpha,
        converged,
        iterations,
    })
}

/// The unconstrained starting pair for a path.
#[derive(Debug, Clone)]
pub struct Unconstrained {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: f64,
}

fn record(t: f64, out: &SolveOutcome) -> PathRecord {
    PathRecord {
        t,
        gamma: out.gamma,
        beta: out.beta.iter().copied().collect(),
        converged: out.converged,
    }
}

/// Decreases `t` from `||beta_i||_1` in steps of `delta_t` and keeps the last
/// solution whose correlation stays at or above the Fisher lower limit of the
/// unconstrained correlation.
pub fn run_path(
    index: usize,
    moments: &MomentSet,
    unconstrained: &Unconstrained,
    prior: &[ConstrainedDirection],
    n: usize,
    config: &PathConfig,
) -> Result<(ConstrainedDirection, PathTrace)> {
    config.validate()?;
    if prior.len() + 1 != index {
        return Err(C3Error::Config(format!(
            "direction {index} needs {} prior directions, got {}",
            index - 1,
            prior.len()
        )));
    }
    let lower_limit = lower_conf_limit(unconstrained.gamma, n, config.alpha_level)?;
    let t0 = l1(&unconstrained.beta).max(1.0);

    let first = solve_constrained(moments, t0, prior, &unconstrained.beta, config)?;
    let mut records = vec![record(t0, &first)];
    let mut selected = first;
    let mut selected_t = t0;
    let mut rejected = None;

    let stop_reason = if t0 <= 1.0 + 1e-10 {
        StopReason::SingleRecord
    } else {
        let mut step = 1usize;
        loop {
            let t = (t0 - step as f64 * config.delta_t).max(1.0);
            match solve_constrained(moments, t, prior, &selected.beta, config) {
                Err(C3Error::Infeasible(_)) => break StopReason::Infeasible,
                Err(e) => return Err(e),
                Ok(out) => {
                    if !out.converged {
                        rejected = Some(record(t, &out));
                        break StopReason::NonConverged;
                    }
                    if out.gamma < lower_limit {
                        rejected = Some(record(t, &out));
                        break StopReason::BelowLimit;
                    }
                    records.push(record(t, &out));
                    selected = out;
                    selected_t = t;
                    if t <= 1.0 {
                        break StopReason::ReachedFloor;
                    }
                }
            }
            step += 1;
        }
    };

    let direction = ConstrainedDirection {
        index,
        beta: selected.beta.iter().copied().collect(),
        alpha: selected.alpha.iter().copied().collect(),
        gamma: selected.gamma,
        t_selected: selected_t,
    };
    let trace = PathTrace {
        index,
        records,
        t0,
        lower_limit,
        stop_reason,
        rejected,
    };
    Ok((direction, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cancor;
    use crate::moments::{moments, standardize, StandardizedData};
    use crate::splines::{make_basis, SplineConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(n: usize, p: usize, seed: u64, response: impl Fn(&[f64], f64) -> f64) -> (StandardizedData, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = raw.row(i).iter().copied().collect();
                response(&row, StandardNormal.sample(&mut rng))
            })
            .collect();
        let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        let x = standardize(&raw, &names).unwrap();
        let basis = make_basis(&y, &SplineConfig::default()).unwrap().design_matrix(&y);
        (x, basis)
    }

    #[test]
    fn fisher_limit_values() {
        let z = 2.5758293035489;
        let zero = lower_conf_limit(0.0, 50, 0.005).unwrap();
        assert!((zero + (z / 47f64.sqrt()).tanh()).abs() < 1e-9);
        let car = lower_conf_limit(0.950, 25, 0.005).unwrap();
        let expect = (0.95f64.atanh() - z / 22f64.sqrt()).tanh();
        assert!((car - expect).abs() < 1e-9);
        // 0.950 is itself rounded, so agreement is to the third decimal
        assert!((car - 0.858).abs() < 1e-3, "{car}");
        assert!(lower_conf_limit(0.5, 3, 0.005).is_err());
        assert!(lower_conf_limit(1.0, 30, 0.005).unwrap() < 1.0);
    }

    #[test]
    fn fisher_limit_monotone() {
        let mut prev = -1.0;
        for k in 0..100 {
            let g = k as f64 / 100.0;
            let l = lower_conf_limit(g, 60, 0.005).unwrap();
            assert!(l > prev && l < g.max(1e-300) + 1e-15 && l > -1.0);
            prev = l;
        }
    }

    #[test]
    fn two_dimensional_unit_circle_at_t_one() {
        // S_xx = I, feasible set at t = 1 is the four axis points
        let s = DMatrix::<f64>::identity(2, 2);
        let c = DMatrix::zeros(0, 2);
        let a = DVector::from_vec(vec![0.3, -0.8]);
        let (b, _) = maximize_linear(&s, &c, &a, 1.0, None).unwrap();
        assert!((b[0]).abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12, "{b}");
    }

    #[test]
    fn linear_maximizer_unconstrained_case() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let c = DMatrix::zeros(0, 2);
        let a = DVector::from_vec(vec![1.0, 0.5]);
        let (b, _) = maximize_linear(&s, &c, &a, 10.0, None).unwrap();
        let direct = s.clone().try_inverse().unwrap() * &a;
        let direct = &direct / quad_form(&direct, &s, &direct).sqrt();
        assert!((b - direct).amax() < 1e-12);
    }

    #[test]
    fn linear_maximizer_matches_grid_on_circle() {
        // identity metric, t = 1.2: grid search on the feasible arcs
        let s = DMatrix::<f64>::identity(2, 2);
        let c = DMatrix::zeros(0, 2);
        let a = DVector::from_vec(vec![0.7, 0.5]);
        let (b, _) = maximize_linear(&s, &c, &a, 1.2, None).unwrap();
        let mut best = f64::NEG_INFINITY;
        for k in 0..200_000 {
            let th = k as f64 / 200_000.0 * std::f64::consts::TAU;
            let (x, y) = (th.cos(), th.sin());
            if x.abs() + y.abs() <= 1.2 {
                best = best.max(0.7 * x + 0.5 * y);
            }
        }
        assert!((a.dot(&b) - best).abs() < 1e-6);
        assert!((b[0].abs() + b[1].abs() - 1.2).abs() < 1e-10);
    }

    #[test]
    fn recovers_unconstrained_when_t_large() {
        let (x, basis) = dataset(150, 5, 1, |r, e| r[0] + r[1] + 0.5 * e);
        let fit = cancor::fit(&x, &basis, DEFAULT_RANK_TOL).unwrap();
        let m = moments(&x, &basis).unwrap();
        let beta = fit.beta_col(0);
        let t0 = l1(&beta);
        let out = solve_constrained(&m, t0 + 0.5, &[], &beta, &PathConfig::default()).unwrap();
        assert!((out.gamma - fit.gamma[0]).abs() < 1e-6);
        assert!(out.converged);
        let out = solve_constrained(&m, t0, &[], &beta, &PathConfig::default()).unwrap();
        assert!((out.gamma - fit.gamma[0]).abs() < 1e-6);
    }

    #[test]
    fn infeasible_below_one() {
        let (x, basis) = dataset(80, 3, 2, |r, e| r[0] + 0.5 * e);
        let m = moments(&x, &basis).unwrap();
        let warm = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            solve_constrained(&m, 0.9, &[], &warm, &PathConfig::default()),
            Err(C3Error::Infeasible(_))
        ));
    }

    #[test]
    fn path_keeps_feasibility_and_limit() {
        let (x, basis) = dataset(120, 8, 3, |r, e| r[0] + r[1] + r[2] + 0.5 * e);
        let fit = cancor::fit(&x, &basis, DEFAULT_RANK_TOL).unwrap();
        let m = moments(&x, &basis).unwrap();
        let start = Unconstrained {
            alpha: fit.alpha_col(0),
            beta: fit.beta_col(0),
            gamma: fit.gamma[0],
        };
        let config = PathConfig::default();
        let (dir, trace) = run_path(1, &m, &start, &[], 120, &config).unwrap();
        assert!(dir.gamma >= trace.lower_limit);
        assert!(trace.records.len() > 1);
        for w in trace.records.windows(2) {
            assert!((w[0].t - w[1].t - config.delta_t).abs() < 1e-12 || w[1].t == 1.0);
            assert!(w[1].gamma <= w[0].gamma + 1e-6);
        }
        for r in &trace.records {
            let b = DVector::from_column_slice(&r.beta);
            assert!((quad_form(&b, &m.s_xx, &b) - 1.0).abs() < 1e-8);
            assert!(l1(&b) <= r.t + 1e-8);
            assert!(r.gamma <= fit.gamma[0] + 1e-8);
            assert!(r.t >= 1.0);
        }
        let a = dir.alpha_vec();
        assert!((quad_form(&a, &m.s_pp, &a) - 1.0).abs() < 1e-8);
        assert!((quad_form(&a, &m.s_px, &dir.beta_vec()) - dir.gamma).abs() < 1e-8);
        // the largest three coefficients sit on the relevant variables
        let mut idx: Vec<usize> = (0..8).collect();
        idx.sort_by(|&i, &j| dir.beta[j].abs().total_cmp(&dir.beta[i].abs()));
        let mut top = idx[..3].to_vec();
        top.sort();
        assert_eq!(top, vec![0, 1, 2]);
    }

    #[test]
    fn second_direction_respects_orthogonality() {
        let (x, basis) = dataset(200, 6, 4, |r, e| r[0] / (0.5 + (r[1] + 1.5).powi(2)) + 0.2 * e);
        let fit = cancor::fit(&x, &basis, DEFAULT_RANK_TOL).unwrap();
        let m = moments(&x, &basis).unwrap();
        let config = PathConfig::default();
        let mut prior = Vec::new();
        for i in 0..2 {
            let start = Unconstrained {
                alpha: fit.alpha_col(i),
                beta: fit.beta_col(i),
                gamma: fit.gamma[i],
            };
            let (dir, _) = run_path(i + 1, &m, &start, &prior, 200, &config).unwrap();
            prior.push(dir);
        }
        let b1 = prior[0].beta_vec();
        let b2 = prior[1].beta_vec();
        let a1 = prior[0].alpha_vec();
        let a2 = prior[1].alpha_vec();
        assert!(quad_form(&b1, &m.s_xx, &b2).abs() < 1e-8);
        assert!(quad_form(&a1, &m.s_pp, &a2).abs() < 1e-8);
        assert!((quad_form(&b2, &m.s_xx, &b2) - 1.0).abs() < 1e-8);
        assert!(l1(&b2) <= prior[1].t_selected + 1e-8);
    }

    #[test]
    fn unit_vector_gives_single_record() {
        // one predictor: beta is +-1 and t0 = 1
        let (x, basis) = dataset(60, 1, 5, |r, e| r[0] + 0.3 * e);
        let fit = cancor::fit(&x, &basis, DEFAULT_RANK_TOL).unwrap();
        let m = moments(&x, &basis).unwrap();
        let start = Unconstrained {
            alpha: fit.alpha_col(0),
            beta: fit.beta_col(0),
            gamma: fit.gamma[0],
        };
        let (dir, trace) = run_path(1, &m, &start, &[], 60, &PathConfig::default()).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::SingleRecord);
        assert!((dir.gamma - fit.gamma[0]).abs() < 1e-10);
    }
}
