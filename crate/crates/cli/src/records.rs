//! Output records. Structured output writes one JSON object per line with a
//! `record` field naming the variant; the table format renders the same
//! records for reading.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    FitSummary {
        response: String,
        n: usize,
        names: Vec<String>,
        order: usize,
        internal_knots: usize,
        alpha_level: f64,
        delta_t: f64,
        test_level: f64,
        gamma: Vec<f64>,
        k_hat: Option<usize>,
        k_used: usize,
    },
    DimTest {
        s: usize,
        statistic: f64,
        df: usize,
        p_value: f64,
        rejected: bool,
    },
    Direction {
        index: usize,
        gamma: f64,
        t0: f64,
        t_selected: f64,
        gamma_constrained: f64,
        lower_limit: f64,
        stop_reason: String,
        chosen_d: usize,
        support: Vec<String>,
        beta_standardized: Vec<f64>,
        beta_original: Vec<f64>,
        reported: Vec<f64>,
        final_correlation: f64,
    },
    DimTestRow {
        internal_knots: usize,
        k_hat: usize,
        gamma: Vec<f64>,
    },
    PathPoint {
        index: usize,
        step: usize,
        t: f64,
        gamma: f64,
        nonzero: usize,
        beta: Vec<f64>,
    },
    PathSummary {
        index: usize,
        t0: f64,
        lower_limit: f64,
        stop_reason: String,
        t_selected: f64,
        gamma_selected: f64,
        rejected_t: Option<f64>,
        rejected_gamma: Option<f64>,
    },
    SimulationConfig {
        study: u8,
        n: usize,
        p: usize,
        replicates: usize,
        seed: u64,
        alpha_level: f64,
        delta_t: f64,
        order: usize,
        internal_knots: usize,
        k_used: Option<usize>,
    },
    Metric {
        name: String,
        mean: f64,
        se: f64,
    },
    SimulationSummary {
        scored: usize,
        failures: usize,
        k_mismatches: usize,
    },
    Replicate {
        replicate: usize,
        counts: Option<Vec<usize>>,
        k_hat: Option<usize>,
        error: Option<String>,
    },
    Warning {
        message: String,
    },
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

pub fn to_structured(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn to_table(records: &[Record]) -> String {
    let mut out = String::new();
    let mut last: Option<&'static str> = None;
    for r in records {
        let kind = match r {
            Record::DimTest { .. } => Some("dimtest"),
            Record::DimTestRow { .. } => Some("dimtest_row"),
            Record::PathPoint { .. } => Some("path"),
            Record::Metric { .. } => Some("metric"),
            Record::Replicate { .. } => Some("replicate"),
            _ => None,
        };
        let header = kind.is_some() && kind != last;
        last = kind;
        let _ = match r {
            Record::FitSummary {
                response,
                n,
                names,
                order,
                internal_knots,
                alpha_level,
                delta_t,
                test_level,
                gamma,
                k_hat,
                k_used,
            } => writeln!(
                out,
                "response {response}, n = {n}, p = {}\n\
                 spline order {order}, internal knots {internal_knots}, alpha {alpha_level}, dt {delta_t}, test level {test_level}\n\
                 canonical correlations {}\n\
                 estimated dimension {}, directions used {k_used}",
                names.len(),
                fmt_vec(gamma),
                opt(k_hat)
            ),
            Record::DimTest {
                s,
                statistic,
                df,
                p_value,
                rejected,
            } => {
                if header {
                    let _ = writeln!(out, "{:>4} {:>12} {:>6} {:>10} {:>9}", "s", "statistic", "df", "p-value", "rejected");
                }
                writeln!(out, "{s:>4} {statistic:>12.4} {df:>6} {p_value:>10.4} {rejected:>9}")
            }
            Record::Direction {
                index,
                gamma,
                t0,
                t_selected,
                gamma_constrained,
                lower_limit,
                stop_reason,
                chosen_d,
                support,
                beta_standardized,
                beta_original,
                reported,
                final_correlation,
            } => writeln!(
                out,
                "\ndirection {index}\n  \
                 unconstrained correlation {gamma:.4}, lower limit {lower_limit:.4}\n  \
                 t0 {t0:.4}, selected t {t_selected:.4}, constrained correlation {gamma_constrained:.4} ({stop_reason})\n  \
                 {chosen_d} variable(s): {}\n  \
                 standardized {}\n  \
                 original units {}\n  \
                 unit length {}\n  \
                 final correlation {final_correlation:.4}",
                support.join(", "),
                fmt_vec(beta_standardized),
                fmt_vec(beta_original),
                fmt_vec(reported)
            ),
            Record::DimTestRow {
                internal_knots,
                k_hat,
                gamma,
            } => {
                if header {
                    let _ = writeln!(out, "{:>6} {:>6}  correlations", "knots", "K");
                }
                writeln!(out, "{internal_knots:>6} {k_hat:>6}  {}", fmt_vec(gamma))
            }
            Record::PathPoint {
                index,
                step,
                t,
                gamma,
                nonzero,
                beta,
            } => {
                if header {
                    let _ = writeln!(out, "{:>4} {:>5} {:>8} {:>8} {:>8}  coefficients", "dir", "step", "t", "gamma", "nonzero");
                }
                writeln!(out, "{index:>4} {step:>5} {t:>8.4} {gamma:>8.4} {nonzero:>8}  {}", fmt_vec(beta))
            }
            Record::PathSummary {
                index,
                t0,
                lower_limit,
                stop_reason,
                t_selected,
                gamma_selected,
                rejected_t,
                rejected_gamma,
            } => writeln!(
                out,
                "direction {index}: t0 {t0:.4}, lower limit {lower_limit:.4}, selected t {t_selected:.4} \
                 with correlation {gamma_selected:.4}; stopped: {stop_reason} (t {}, correlation {})",
                rejected_t.map_or("-".into(), |v| format!("{v:.4}")),
                rejected_gamma.map_or("-".into(), |v| format!("{v:.4}"))
            ),
            Record::SimulationConfig {
                study,
                n,
                p,
                replicates,
                seed,
                alpha_level,
                delta_t,
                order,
                internal_knots,
                k_used,
            } => writeln!(
                out,
                "study {study}, n = {n}, p = {p}, {replicates} replicate(s), seed {seed}\n\
                 alpha {alpha_level}, dt {delta_t}, spline order {order}, internal knots {internal_knots}, K {}",
                k_used.map_or("estimated".into(), |k| k.to_string())
            ),
            Record::Metric { name, mean, se } => {
                if header {
                    let _ = writeln!(out, "{:>6} {:>8} {:>8}", "metric", "mean", "(SE)");
                }
                writeln!(out, "{name:>6} {mean:>8.2} {:>8}", format!("({se:.2})"))
            }
            Record::SimulationSummary {
                scored,
                failures,
                k_mismatches,
            } => writeln!(out, "scored {scored}, failed {failures}, dimension mismatches {k_mismatches}"),
            Record::Replicate {
                replicate,
                counts,
                k_hat,
                error,
            } => {
                if header {
                    let _ = writeln!(out, "{:>9} {:>10} {:>5}  error", "replicate", "counts", "K");
                }
                let counts = counts.as_ref().map_or("-".into(), |c| format!("{c:?}"));
                writeln!(out, "{replicate:>9} {counts:>10} {:>5}  {}", opt(k_hat), error.as_deref().unwrap_or(""))
            }
            Record::Warning { message } => writeln!(out, "warning: {message}"),
        };
    }
    out
}
