use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use c3dr::c3solver::{PathConfig, StopReason};
use c3dr::cancor::fit;
use c3dr::data::{load_csv, Dataset};
use c3dr::moments::{standardize, DEFAULT_RANK_TOL};
use c3dr::pipeline::{run_pipeline, PipelineConfig, PipelineResult};
use c3dr::simharness::{run_study, StudyConfig, StudySpec, DEFAULT_REPLICATES};
use c3dr::splines::{make_basis, SplineConfig};
use c3dr::C3Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

use c3_cli::records::{self, Record};

#[derive(Parser)]
#[command(name = "c3", version, about = "Constrained canonical correlation dimension reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the full pipeline and report the final directions.
    Fit {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Estimate the number of directions over a range of knot counts.
    Dimtest {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Knot counts: a single value, a range such as 0-5, or a list such as 1,3,5.
        #[arg(long, default_value = "0-5")]
        knots: String,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
    },
    /// Run a simulation study and report zero-coefficient metrics.
    Simulate {
        #[arg(long)]
        study: u8,
        #[arg(long, default_value_t = 120)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_REPLICATES)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Estimate the number of directions instead of using the study truth.
        #[arg(long)]
        estimate_k: bool,
        /// Worker threads; 1 runs the replicates serially.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 4)]
        knots: usize,
        #[arg(long, default_value_t = 0.005)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
    },
    /// Report the L1 path of one direction.
    Path {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        model: ModelArgs,
        /// 1-based direction index.
        #[arg(long, default_value_t = 1)]
        direction: usize,
    },
}

#[derive(Args)]
struct Input {
    /// CSV file with a header row.
    input: PathBuf,
    /// Response column name (default: the first column).
    #[arg(long)]
    response: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 4)]
    knots: usize,
    /// Level of the lower confidence limit that stops the path.
    #[arg(long, default_value_t = 0.005)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// Level of the sequential dimension tests.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Number of directions (default: estimated).
    #[arg(long)]
    k: Option<usize>,
}

impl ModelArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            order: self.order,
            internal_knots: self.knots,
            path: PathConfig {
                alpha_level: self.alpha,
                delta_t: self.dt,
                ..PathConfig::default()
            },
            test_level: self.level,
            k: self.k,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<C3Error> for Failure {
    fn from(e: C3Error) -> Self {
        let msg = e.to_string();
        match e {
            C3Error::Config(_) => Failure::Usage(msg),
            C3Error::ConstantResponse(_)
            | C3Error::DegenerateResponse { .. }
            | C3Error::ZeroVariance(_)
            | C3Error::DimensionMismatch(_)
            | C3Error::Data(_) => Failure::Data(msg),
            C3Error::NotSymmetric(_) | C3Error::Singular { .. } | C3Error::Infeasible(_) | C3Error::DegenerateFit(_) => {
                Failure::Numerical(msg)
            }
        }
    }
}

fn stop_name(reason: StopReason) -> String {
    serde_json::to_value(reason)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn load(input: &Input) -> Result<Dataset, Failure> {
    Ok(load_csv(&input.input, input.response.as_deref())?)
}

fn fit_records(data: &Dataset, config: &PipelineConfig, result: &PipelineResult) -> Vec<Record> {
    let mut out = vec![Record::FitSummary {
        response: data.response_name.clone(),
        n: data.n(),
        names: data.names.clone(),
        order: config.order,
        internal_knots: config.internal_knots,
        alpha_level: config.path.alpha_level,
        delta_t: config.path.delta_t,
        test_level: config.test_level,
        gamma: result.cancor.gamma.clone(),
        k_hat: result.cancor.k_hat,
        k_used: result.k,
    }];
    out.extend(result.cancor.test_trace.iter().map(|t| Record::DimTest {
        s: t.s,
        statistic: t.statistic,
        df: t.df,
        p_value: t.p_value,
        rejected: t.rejected,
    }));
    if let Some(final_fit) = &result.final_fit {
        for (k, dir) in final_fit.directions.iter().enumerate() {
            let path = &result.paths[k];
            let constrained = &result.constrained[k];
            out.push(Record::Direction {
                index: dir.index,
                gamma: result.cancor.gamma[k],
                t0: path.t0,
                t_selected: constrained.t_selected,
                gamma_constrained: constrained.gamma,
                lower_limit: path.lower_limit,
                stop_reason: stop_name(path.stop_reason),
                chosen_d: result.filters[k].chosen_d,
                support: dir.support.iter().map(|&j| data.names[j].clone()).collect(),
                beta_standardized: dir.beta.clone(),
                beta_original: dir.original_units.clone(),
                reported: dir.reported.clone(),
                final_correlation: dir.correlation,
            });
        }
    } else {
        out.push(Record::Warning {
            message: "the dimension tests found no directions".into(),
        });
    }
    out
}

fn parse_knots(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Usage(format!("invalid knot list '{spec}'"));
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn run(cli: &Cli) -> Result<Vec<Record>, Failure> {
    match &cli.command {
        Command::Fit { input, model } => {
            let data = load(input)?;
            let config = model.config();
            let result = run_pipeline(&data, &config)?;
            Ok(fit_records(&data, &config, &result))
        }
        Command::Dimtest {
            input,
            order,
            knots,
            level,
        } => {
            let data = load(input)?;
            let x = standardize(&data.x, &data.names)?;
            let mut out = Vec::new();
            for k in parse_knots(knots)? {
                let basis = make_basis(&data.y, &SplineConfig::new(*order, k))?.design_matrix(&data.y);
                let fit = fit(&x, &basis, DEFAULT_RANK_TOL)?.with_dimension_test(*level);
                out.push(Record::DimTestRow {
                    internal_knots: k,
                    k_hat: fit.k_hat.unwrap_or(0),
                    gamma: fit.gamma,
                });
            }
            Ok(out)
        }
        Command::Simulate {
            study,
            n,
            reps,
            seed,
            estimate_k,
            threads,
            order,
            knots,
            alpha,
            dt,
        } => {
            let spec = StudySpec::new(*study, *n, *reps, *seed)?;
            let config = StudyConfig {
                pipeline: PipelineConfig {
                    order: *order,
                    internal_knots: *knots,
                    path: PathConfig {
                        alpha_level: *alpha,
                        delta_t: *dt,
                        ..PathConfig::default()
                    },
                    ..PipelineConfig::default()
                },
                estimate_k: *estimate_k,
                parallel: threads.map_or(true, |t| t > 1),
            };
            let report = match threads {
                Some(t) if *t > 1 => rayon::ThreadPoolBuilder::new()
                    .num_threads(*t)
                    .build()
                    .map_err(|e| Failure::Usage(e.to_string()))?
                    .install(|| run_study(&spec, &config))?,
                Some(0) => return Err(Failure::Usage("--threads must be positive".into())),
                _ => run_study(&spec, &config)?,
            };
            let mut out = vec![Record::SimulationConfig {
                study: spec.study,
                n: spec.n,
                p: spec.p,
                replicates: spec.replicates,
                seed: spec.seed,
                alpha_level: report.alpha_level,
                delta_t: report.delta_t,
                order: report.order,
                internal_knots: report.internal_knots,
                k_used: report.k_used,
            }];
            out.extend(report.metrics.iter().map(|m| Record::Metric {
                name: m.name.clone(),
                mean: m.mean,
                se: m.se,
            }));
            out.push(Record::SimulationSummary {
                scored: report.scored,
                failures: report.failures,
                k_mismatches: report.k_mismatches,
            });
            out.extend(report.replicates.iter().map(|r| Record::Replicate {
                replicate: r.replicate,
                counts: r.counts.clone(),
                k_hat: r.k_hat,
                error: r.error.clone(),
            }));
            out.extend(report.warnings.iter().map(|w| Record::Warning { message: w.clone() }));
            Ok(out)
        }
        Command::Path {
            input,
            model,
            direction,
        } => {
            if *direction == 0 {
                return Err(Failure::Usage("direction index starts at 1".into()));
            }
            let data = load(input)?;
            let mut config = model.config();
            config.k = Some(*direction);
            let result = run_pipeline(&data, &config)?;
            let path = &result.paths[direction - 1];
            let mut out: Vec<Record> = path
                .records
                .iter()
                .enumerate()
                .map(|(step, r)| Record::PathPoint {
                    index: *direction,
                    step,
                    t: r.t,
                    gamma: r.gamma,
                    nonzero: r.beta.iter().filter(|b| **b != 0.0).count(),
                    beta: r.beta.clone(),
                })
                .collect();
            let selected = &result.constrained[direction - 1];
            out.push(Record::PathSummary {
                index: *direction,
                t0: path.t0,
                lower_limit: path.lower_limit,
                stop_reason: stop_name(path.stop_reason),
                t_selected: selected.t_selected,
                gamma_selected: selected.gamma,
                rejected_t: path.rejected.as_ref().map(|r| r.t),
                rejected_gamma: path.rejected.as_ref().map(|r| r.gamma),
            });
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let records = match run(&cli) {
        Ok(r) => r,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Usage(m) => (2, "usage error", m),
                Failure::Data(m) => (3, "data error", m),
                Failure::Numerical(m) => (4, "numerical failure", m),
            };
            eprintln!("c3: {kind}: {msg}");
            return ExitCode::from(code);
        }
    };
    for r in &records {
        if let Record::Warning { message } = r {
            eprintln!("c3: warning: {message}");
        }
    }
    let text = match cli.format {
        Format::Table => records::to_table(&records),
        Format::Structured => records::to_structured(&records),
    };
    let written = match &cli.out {
        Some(path) => std::fs::write(path, text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("c3: data error: cannot write report: {e}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
