//! Simulation studies: generative models, replicate runner and
//! zero-coefficient metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{C3Error, Result};
use crate::filter::FinalFit;
use crate::pipeline::{run_pipeline, PipelineConfig};

pub const NUM_PREDICTORS: usize = 24;
pub const DEFAULT_REPLICATES: usize = 100;

/// One of the four simulation designs.
///
/// 1. `y = x1 + x2 + x3 + 0.5 e`, independent predictors.
/// 2. `y = x1 / (0.5 + (x2 + 1.5)^2) + 0.2 e`, independent predictors.
/// 3. The model of study 2 with `Cov(x_i, x_j) = 0.5^|i - j|`.
/// 4. `y = x1 + ... + x24 + 0.5 e`, independent predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study: u8,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl StudySpec {
    pub fn new(study: u8, n: usize, replicates: usize, seed: u64) -> Result<Self> {
        if !(1..=4).contains(&study) {
            return Err(C3Error::Config(format!("study must be 1, 2, 3 or 4, got {study}")));
        }
        if n < 10 {
            return Err(C3Error::Config(format!("sample size {n} is too small")));
        }
        if replicates == 0 {
            return Err(C3Error::Config("at least one replicate is required".into()));
        }
        Ok(Self {
            study,
            n,
            p: NUM_PREDICTORS,
            replicates,
            seed,
        })
    }

    pub fn true_k(&self) -> usize {
        match self.study {
            2 | 3 => 2,
            _ => 1,
        }
    }

    /// True directions as columns of a `p x K` matrix.
    pub fn true_directions(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.p, self.true_k());
        match self.study {
            1 => b.view_mut((0, 0), (3, 1)).fill(1.0),
            4 => b.fill(1.0),
            _ => {
                b[(0, 0)] = 1.0;
                b[(1, 1)] = 1.0;
            }
        }
        b
    }

    /// True supports, 0-based.
    pub fn true_supports(&self) -> Vec<Vec<usize>> {
        match self.study {
            1 => vec![vec![0, 1, 2]],
            4 => vec![(0..self.p).collect()],
            _ => vec![vec![0], vec![1]],
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        if self.study == 3 {
            DMatrix::from_fn(self.p, self.p, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
        } else {
            DMatrix::identity(self.p, self.p)
        }
    }

    fn response(&self, x: &[f64], e: f64) -> f64 {
        match self.study {
            1 => x[0] + x[1] + x[2] + 0.5 * e,
            4 => x.iter().sum::<f64>() + 0.5 * e,
            _ => x[0] / (0.5 + (x[1] + 1.5).powi(2)) + 0.2 * e,
        }
    }

    pub fn metric_names(&self) -> &'static [&'static str] {
        match self.study {
            1 => &["A3", "A21"],
            4 => &["A"],
            _ => &["A2", "A22"],
        }
    }
}

/// Draws replicate `replicate` from its own stream of the base seed, so
/// results do not depend on execution order.
pub fn generate(spec: &StudySpec, replicate: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate);
    let p = spec.p;
    let chol = spec
        .covariance()
        .cholesky()
        .expect("study covariance is positive definite")
        .unpack();
    let independent = spec.study != 3;

    let mut x = DMatrix::zeros(spec.n, p);
    let mut y = Vec::with_capacity(spec.n);
    let mut z = DVector::zeros(p);
    for i in 0..spec.n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = if independent { z.clone() } else { &chol * &z };
        let e: f64 = rng.sample(StandardNormal);
        y.push(spec.response(row.as_slice(), e));
        x.set_row(i, &row.transpose());
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::new("y", y, names, x).expect("consistent dimensions")
}

/// Zero-coefficient counts for one replicate, in the order of
/// [`StudySpec::metric_names`].
pub fn metrics(fit: &FinalFit, spec: &StudySpec) -> Result<Vec<usize>> {
    let beta = fit.beta_matrix();
    if beta.nrows() != spec.p || beta.ncols() < spec.true_k() {
        return Err(C3Error::DimensionMismatch(format!(
            "fit is {}x{}, study needs {}x{}",
            beta.nrows(),
            beta.ncols(),
            spec.p,
            spec.true_k()
        )));
    }
    let zero = |j: usize, cols: usize| (0..cols).all(|k| beta[(j, k)] == 0.0);
    Ok(match spec.study {
        1 => {
            let first = (0..3).filter(|&j| zero(j, 1)).count();
            let rest = (3..spec.p).filter(|&j| zero(j, 1)).count();
            vec![first, rest]
        }
        4 => vec![(0..spec.p).filter(|&j| zero(j, 1)).count()],
        _ => {
            let first = (0..2).filter(|&j| zero(j, 2)).count();
            let rest = (2..spec.p).filter(|&j| zero(j, 2)).count();
            vec![first, rest]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub pipeline: PipelineConfig,
    /// Use the dimension test instead of the true number of directions.
    pub estimate_k: bool,
    pub parallel: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            estimate_k: false,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// Zero counts; `None` when the replicate failed or was not scored.
    pub counts: Option<Vec<usize>>,
    pub k_hat: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub spec: StudySpec,
    pub alpha_level: f64,
    pub delta_t: f64,
    pub order: usize,
    pub internal_knots: usize,
    /// `None` when the number of directions was estimated per replicate.
    pub k_used: Option<usize>,
    pub metrics: Vec<MetricSummary>,
    pub replicates: Vec<ReplicateOutcome>,
    pub scored: usize,
    pub failures: usize,
    /// Replicates whose estimated dimension differs from the truth.
    pub k_mismatches: usize,
    pub warnings: Vec<String>,
}

impl SimulationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Fits one replicate and scores it.
pub fn run_replicate(spec: &StudySpec, config: &StudyConfig, replicate: usize) -> ReplicateOutcome {
    let data = generate(spec, replicate as u64);
    let mut pipeline = config.pipeline.clone();
    pipeline.k = if config.estimate_k { None } else { Some(spec.true_k()) };
    let failed = |e: C3Error, k_hat| ReplicateOutcome {
        replicate,
        counts: None,
        k_hat,
        error: Some(e.to_string()),
    };
    match run_pipeline(&data, &pipeline) {
        Err(e) => failed(e, None),
        Ok(result) => {
            let k_hat = result.cancor.k_hat;
            if config.estimate_k && result.k != spec.true_k() {
                return ReplicateOutcome {
                    replicate,
                    counts: None,
                    k_hat,
                    error: None,
                };
            }
            let scored = result
                .final_fit
                .as_ref()
                .ok_or_else(|| C3Error::DegenerateFit("no final fit".into()))
                .and_then(|f| metrics(f, spec));
            match scored {
                Ok(counts) => ReplicateOutcome {
                    replicate,
                    counts: Some(counts),
                    k_hat,
                    error: None,
                },
                Err(e) => failed(e, k_hat),
            }
        }
    }
}

/// Sample mean and standard error (`sd / sqrt(m)`, divisor `m - 1`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

pub fn run_study(spec: &StudySpec, config: &StudyConfig) -> Result<SimulationReport> {
    config.pipeline.path.validate()?;
    let outcomes: Vec<ReplicateOutcome> = if config.parallel {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| run_replicate(spec, config, r))
            .collect()
    } else {
        (0..spec.replicates).map(|r| run_replicate(spec, config, r)).collect()
    };
    Ok(summarize(spec, config, outcomes))
}

/// Aggregates replicate outcomes in replicate order.
pub fn summarize(spec: &StudySpec, config: &StudyConfig, outcomes: Vec<ReplicateOutcome>) -> SimulationReport {
    let names = spec.metric_names();
    let scored: Vec<&Vec<usize>> = outcomes.iter().filter_map(|o| o.counts.as_ref()).collect();
    let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
    let k_mismatches = if config.estimate_k {
        outcomes.iter().filter(|o| o.error.is_none() && o.counts.is_none()).count()
    } else {
        0
    };
    let metrics = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<f64> = scored.iter().map(|c| c[k] as f64).collect();
            let (mean, se) = mean_se(&values);
            MetricSummary {
                name: name.to_string(),
                mean,
                se,
            }
        })
        .collect();

    let mut warnings = Vec::new();
    if spec.replicates == 1 {
        warnings.push("single replicate: standard errors reported as 0".to_string());
    }
    if failures > 0 {
        warnings.push(format!("{failures} replicate(s) failed and were excluded"));
    }
    if k_mismatches > 0 {
        warnings.push(format!("{k_mismatches} replicate(s) estimated the wrong dimension and were not scored"));
    }
    SimulationReport {
        spec: spec.clone(),
        alpha_level: config.pipeline.path.alpha_level,
        delta_t: config.pipeline.path.delta_t,
        order: config.pipeline.order,
        internal_knots: config.pipeline.internal_knots,
        k_used: (!config.estimate_k).then(|| spec.true_k()),
        metrics,
        scored: scored.len(),
        replicates: outcomes,
        failures,
        k_mismatches,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{FinalDirection, Refit};

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn fake_fit(columns: &[Vec<f64>]) -> FinalFit {
        FinalFit {
            directions: columns
                .iter()
                .enumerate()
                .map(|(k, b)| FinalDirection {
                    index: k + 1,
                    support: vec![],
                    beta: b.clone(),
                    reported: b.clone(),
                    original_units: b.clone(),
                    correlation: 1.0,
                })
                .collect(),
            union_support: vec![],
            traces: vec![],
            refit: Refit {
                columns: vec![],
                gamma: vec![],
                beta: vec![],
                alpha: vec![],
            },
        }
    }

    #[test]
    fn invalid_study() {
        assert!(StudySpec::new(5, 120, 10, 1).is_err());
        assert!(StudySpec::new(0, 120, 10, 1).is_err());
    }

    #[test]
    fn irrelevant_predictor_uncorrelated() {
        let spec = StudySpec::new(1, 10_000, 1, 7).unwrap();
        let d = generate(&spec, 3);
        let x4: Vec<f64> = d.x.column(3).iter().copied().collect();
        assert!(pearson(&d.y, &x4).abs() < 0.05);
        let x1: Vec<f64> = d.x.column(0).iter().copied().collect();
        assert!(pearson(&d.y, &x1) > 0.5);
    }

    #[test]
    fn toeplitz_correlation() {
        let spec = StudySpec::new(3, 10_000, 1, 11).unwrap();
        let d = generate(&spec, 0);
        let col = |j: usize| -> Vec<f64> { d.x.column(j).iter().copied().collect() };
        assert!((pearson(&col(0), &col(2)) - 0.25).abs() < 0.03);
        assert!((pearson(&col(0), &col(1)) - 0.5).abs() < 0.03);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = StudySpec::new(2, 50, 3, 99).unwrap();
        let a = generate(&spec, 2);
        let b = generate(&spec, 2);
        assert!(a.y.iter().zip(&b.y).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(a.x, b.x);
        assert_ne!(generate(&spec, 1).y, a.y);
    }

    #[test]
    fn metrics_examples() {
        let s1 = StudySpec::new(1, 120, 1, 0).unwrap();
        let truth: Vec<f64> = s1.true_directions().column(0).iter().copied().collect();
        assert_eq!(metrics(&fake_fit(&[truth]), &s1).unwrap(), vec![0, 21]);

        let s2 = StudySpec::new(2, 120, 1, 0).unwrap();
        let mut b1 = vec![0.0; 24];
        let mut b2 = vec![0.0; 24];
        b1[0] = 0.7;
        b1[1] = 0.2;
        b2[1] = 1.0;
        assert_eq!(metrics(&fake_fit(&[b1.clone(), b2.clone()]), &s2).unwrap(), vec![0, 22]);
        // row 1 zero in the first direction but not in the second
        b1[1] = 0.0;
        assert_eq!(metrics(&fake_fit(&[b1.clone(), b2]), &s2).unwrap(), vec![0, 22]);
        assert_eq!(metrics(&fake_fit(&[b1.clone(), vec![0.0; 24]]), &s2).unwrap(), vec![1, 22]);

        let s4 = StudySpec::new(4, 120, 1, 0).unwrap();
        assert_eq!(metrics(&fake_fit(&[vec![1.0; 24]]), &s4).unwrap(), vec![0]);
        assert!(metrics(&fake_fit(&[b1]), &s2).is_err());
    }

    #[test]
    fn standard_error_formula() {
        let (m, se) = mean_se(&[20.0, 21.0, 21.0, 19.0]);
        assert_eq!(m, 20.25);
        let var = ((0.25f64).powi(2) * 1.0 + 0.75f64.powi(2) * 2.0 + 1.25f64.powi(2)) / 3.0;
        assert!((se - (var / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn study1_replicate_recovers_support() {
        let spec = StudySpec::new(1, 120, 1, 20240601).unwrap();
        let out = run_replicate(&spec, &StudyConfig::default(), 0);
        assert_eq!(out.counts, Some(vec![0, 21]), "{out:?}");
    }
}
