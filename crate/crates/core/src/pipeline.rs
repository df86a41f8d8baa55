//! End-to-end estimation: standardize, expand the response, fit CANCOR,
//! shrink each direction along its L1 path, filter and re-estimate.

use serde::{Deserialize, Serialize};

use crate::c3solver::{run_path, ConstrainedDirection, PathConfig, PathTrace, Unconstrained};
use crate::cancor::{fit, CancorFit, DEFAULT_TEST_LEVEL};
use crate::data::Dataset;
use crate::error::{C3Error, Result};
use crate::filter::{filter_direction, finalize, FinalFit, FilterTrace};
use crate::moments::{moments, standardize, MomentSet, StandardizedData, DEFAULT_RANK_TOL};
use crate::splines::{make_basis, SplineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub order: usize,
    pub internal_knots: usize,
    pub path: PathConfig,
    /// Level of the sequential dimension tests.
    pub test_level: f64,
    /// Number of directions; `None` uses the dimension test.
    pub k: Option<usize>,
    pub rank_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            order: 3,
            internal_knots: 4,
            path: PathConfig::default(),
            test_level: DEFAULT_TEST_LEVEL,
            k: None,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl PipelineConfig {
    pub fn spline(&self) -> SplineConfig {
        SplineConfig::new(self.order, self.internal_knots)
    }
}

/// Everything computed on the way to the final directions.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub standardized: StandardizedData,
    pub moments: MomentSet,
    pub cancor: CancorFit,
    /// Number of directions carried through.
    pub k: usize,
    pub paths: Vec<PathTrace>,
    pub constrained: Vec<ConstrainedDirection>,
    pub filters: Vec<FilterTrace>,
    /// `None` when the dimension test finds no directions.
    pub final_fit: Option<FinalFit>,
}

/// Runs the L1 path and filter for the first `k` CANCOR directions.
pub fn run_pipeline(data: &Dataset, config: &PipelineConfig) -> Result<PipelineResult> {
    if config.k == Some(0) {
        return Err(C3Error::Config("no directions requested".into()));
    }
    let basis = make_basis(&data.y, &config.spline())?.design_matrix(&data.y);
    let standardized = standardize(&data.x, &data.names)?;
    let cancor = fit(&standardized, &basis, config.rank_tol)?.with_dimension_test(config.test_level);
    let m = moments(&standardized, &basis)?;

    let k = config.k.unwrap_or_else(|| cancor.k_hat.unwrap_or(0));
    if k > cancor.num_directions() {
        return Err(C3Error::Config(format!(
            "{k} directions requested, at most {} available",
            cancor.num_directions()
        )));
    }

    let mut constrained: Vec<ConstrainedDirection> = Vec::with_capacity(k);
    let mut paths = Vec::with_capacity(k);
    let mut filters = Vec::with_capacity(k);
    for i in 0..k {
        let start = Unconstrained {
            alpha: cancor.alpha_col(i),
            beta: cancor.beta_col(i),
            gamma: cancor.gamma[i],
        };
        let (dir, trace) = run_path(i + 1, &m, &start, &constrained, data.n(), &config.path)?;
        filters.push(filter_direction(&dir, &constrained, &m)?);
        paths.push(trace);
        constrained.push(dir);
    }

    let final_fit = if k == 0 {
        None
    } else {
        Some(finalize(&filters, &standardized, &basis, config.rank_tol)?)
    };
    Ok(PipelineResult {
        standardized,
        moments: m,
        cancor,
        k,
        paths,
        constrained,
        filters,
        final_fit,
    })
}
