use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psq_core::{Error, ModelParams, ServiceDistribution};

/// Fully parsed command line.
#[derive(Parser, Debug)]
#[command(
    name = "psq",
    version,
    about = "Analytic and simulated statistics for the M/G/1 processor-sharing queue with permanent jobs"
)]
pub struct RunSpec {
    #[command(subcommand)]
    pub command: Command,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write the report to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Poisson arrival rate of standard jobs.
    #[arg(long)]
    pub lambda: f64,

    /// Service law: exp:RATE, det:SIZE, erlang:SHAPE:RATE,
    /// hyperexp:w1:r1:w2:r2..., mix:BASE:SIZE:PROB, or table:PATH.
    #[arg(long)]
    pub dist: String,

    /// Number of permanent jobs sharing the server.
    #[arg(long = "K", default_value_t = 0)]
    pub k: u32,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Grid step for the analytic kernel [default: mean service / 1000].
    #[arg(long)]
    pub grid_step: Option<f64>,

    /// Upper end of the tabulated grids [default: 50 x mean service].
    #[arg(long)]
    pub horizon: Option<f64>,

    /// Series truncation tolerance for the workload ladder.
    #[arg(long, default_value_t = 1e-10)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Measured departures per replication.
    #[arg(long, default_value_t = 100_000)]
    pub departures: u64,

    /// Departures discarded before measurement starts.
    #[arg(long, default_value_t = 10_000)]
    pub warmup: u64,

    /// Batch-means batches per replication.
    #[arg(long, default_value_t = 20)]
    pub batches: u32,

    /// Independent replications pooled into one confidence interval.
    #[arg(long, default_value_t = 1)]
    pub replications: u32,

    /// Seed for every random stream.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Conditional sojourn-time moments E[V_K(u)^n].
    Moments {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Job sizes u, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        u: Vec<f64>,
        /// Highest moment order.
        #[arg(long, default_value_t = 2)]
        order: usize,
    },

    /// Mean and variance of the conditional sojourn time.
    Variance {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Job sizes u, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        u: Vec<f64>,
    },

    /// Laplace transform E[e^{-r V_K(u)}] (u snaps to the nearest grid node).
    Lst {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Job sizes u, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        u: Vec<f64>,
        /// Transform arguments r, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
        /// Cap on series terms per transform evaluation.
        #[arg(long, default_value_t = 40)]
        terms: usize,
    },

    /// Stationary queue-length distribution of the standard jobs.
    Qlen {
        #[command(flatten)]
        model: ModelArgs,
        /// Largest queue length reported.
        #[arg(long, default_value_t = 20)]
        max_n: u64,
    },

    /// Busy-period transform pi(r) and mean.
    Busy {
        #[command(flatten)]
        model: ModelArgs,
        /// Transform arguments r, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
    },

    /// Workload kernel: the stationary FCFS waiting-time law W on the grid.
    Wdist {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Report W(x) for x up to here [default: the horizon].
        #[arg(long)]
        max_x: Option<f64>,
        /// Report every STRIDE-th grid node.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },

    /// Run the discrete-event simulator and report estimates.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Highest probe moment estimated.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Also estimate E[e^{-r V}] at these r (needs a probe mixture).
        #[arg(long, value_delimiter = ',')]
        r: Vec<f64>,
        /// Grid step an analytic companion run would use; checked against
        /// the service law's atoms.
        #[arg(long)]
        grid_step: Option<f64>,
    },

    /// Cross-check analytic moments and queue lengths against the simulator.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Probe size to compare at [default: the mixture's probe size].
        #[arg(long)]
        u: Option<f64>,
        /// Compare moments up to this order.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Also compare E[e^{-r V}] at these r.
        #[arg(long, value_delimiter = ',')]
        r: Vec<f64>,
        /// Cap on series terms per transform evaluation.
        #[arg(long, default_value_t = 40)]
        terms: usize,
    },
}

/// A rejected command line; printed to stderr and mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        UsageError(e.to_string())
    }
}

/// Grid controls with the model-dependent defaults filled in.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedGrid {
    pub step: f64,
    pub horizon: f64,
    pub eps: f64,
}

/// Everything `execute` needs, validated.
#[derive(Debug)]
pub struct Prepared {
    pub format: Format,
    pub out: Option<PathBuf>,
    pub params: ModelParams,
    pub dist_spec: String,
    pub grid: Option<ResolvedGrid>,
    pub command: Command,
}

fn model_of(model: &ModelArgs) -> Result<ModelParams, UsageError> {
    let service = ServiceDistribution::from_spec(&model.dist)
        .map_err(|e| UsageError(format!("--dist: {e}")))?;
    let params = ModelParams::new(model.lambda, service, model.k)
        .map_err(|e| UsageError(format!("--lambda: {e}")))?;
    if params.rho() >= 1.0 {
        return Err(UsageError(format!("unstable: rho={} >= 1", params.rho())));
    }
    Ok(params)
}

fn resolve_grid(grid: &GridArgs, params: &ModelParams) -> Result<ResolvedGrid, UsageError> {
    let step = grid.grid_step.unwrap_or(1e-3 * params.mean_size());
    let horizon = grid.horizon.unwrap_or(50.0 * params.mean_size());
    if !(step.is_finite() && step > 0.0) {
        return Err(UsageError(format!("--grid-step must be positive, got {step}")));
    }
    if !(horizon.is_finite() && horizon > step) {
        return Err(UsageError(format!(
            "--horizon must exceed the grid step {step}, got {horizon}"
        )));
    }
    if !(grid.eps > 0.0 && grid.eps < 0.1) {
        return Err(UsageError(format!("--eps must lie in (0, 0.1), got {}", grid.eps)));
    }
    check_atoms(params, step)?;
    Ok(ResolvedGrid { step, horizon, eps: grid.eps })
}

/// Service atoms must land on grid nodes or the analytic engine would
/// smear point mass across a cell.
fn check_atoms(params: &ModelParams, step: f64) -> Result<(), UsageError> {
    for atom in params.service().atoms() {
        let ratio = atom / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::AtomOffGrid { location: atom, step }.into());
        }
    }
    Ok(())
}

fn check_positive_list(flag: &str, values: &[f64], horizon: Option<f64>) -> Result<(), UsageError> {
    for &v in values {
        if !(v.is_finite() && v > 0.0) {
            return Err(UsageError(format!("{flag} entries must be positive, got {v}")));
        }
        if let Some(h) = horizon {
            if v > h {
                return Err(UsageError(format!(
                    "{flag}={v} lies beyond the horizon {h}; raise --horizon"
                )));
            }
        }
    }
    Ok(())
}

fn check_nonnegative_list(flag: &str, values: &[f64]) -> Result<(), UsageError> {
    for &v in values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(UsageError(format!("{flag} entries must be nonnegative, got {v}")));
        }
    }
    Ok(())
}

fn check_order(order: usize) -> Result<(), UsageError> {
    if order < 1 {
        return Err(UsageError("--order must be at least 1".into()));
    }
    if order > psq_core::moments::MAX_MOMENT_ORDER {
        return Err(UsageError(format!(
            "--order {order} exceeds the supported maximum {}",
            psq_core::moments::MAX_MOMENT_ORDER
        )));
    }
    Ok(())
}

fn check_sim(sim: &SimArgs) -> Result<(), UsageError> {
    if sim.batches < 2 {
        return Err(UsageError("--batches must be at least 2".into()));
    }
    if sim.departures < sim.batches as u64 {
        return Err(UsageError(format!(
            "--departures {} cannot fill {} batches",
            sim.departures, sim.batches
        )));
    }
    if sim.replications < 1 {
        return Err(UsageError("--replications must be at least 1".into()));
    }
    Ok(())
}

/// Semantic validation on top of the clap parse. Anything wrong here is a
/// usage error (exit code 2), not an engine failure.
pub fn prepare(spec: RunSpec) -> Result<Prepared, UsageError> {
    let RunSpec { command, format, out } = spec;
    let (params, dist_spec, grid) = match &command {
        Command::Moments { model, grid, u, order } => {
            let params = model_of(model)?;
            let g = resolve_grid(grid, &params)?;
            check_positive_list("--u", u, Some(g.horizon))?;
            check_order(*order)?;
            (params, model.dist.clone(), Some(g))
        }
        Command::Variance { model, grid, u } => {
            let params = model_of(model)?;
            let g = resolve_grid(grid, &params)?;
            check_positive_list("--u", u, Some(g.horizon))?;
            (params, model.dist.clone(), Some(g))
        }
        Command::Lst { model, grid, u, r, terms } => {
            let params = model_of(model)?;
            let g = resolve_grid(grid, &params)?;
            check_positive_list("--u", u, Some(g.horizon))?;
            check_nonnegative_list("--r", r)?;
            if *terms < 1 {
                return Err(UsageError("--terms must be at least 1".into()));
            }
            (params, model.dist.clone(), Some(g))
        }
        Command::Qlen { model, .. } => {
            let params = model_of(model)?;
            (params, model.dist.clone(), None)
        }
        Command::Busy { model, r } => {
            let params = model_of(model)?;
            check_nonnegative_list("--r", r)?;
            (params, model.dist.clone(), None)
        }
        Command::Wdist { model, grid, max_x, stride } => {
            let params = model_of(model)?;
            let g = resolve_grid(grid, &params)?;
            if let Some(x) = max_x {
                check_positive_list("--max-x", &[*x], Some(g.horizon))?;
            }
            if *stride < 1 {
                return Err(UsageError("--stride must be at least 1".into()));
            }
            (params, model.dist.clone(), Some(g))
        }
        Command::Simulate { model, sim, order, r, grid_step } => {
            let params = model_of(model)?;
            check_sim(sim)?;
            check_order(*order)?;
            check_nonnegative_list("--r", r)?;
            if let Some(step) = grid_step {
                if !(step.is_finite() && *step > 0.0) {
                    return Err(UsageError(format!(
                        "--grid-step must be positive, got {step}"
                    )));
                }
                check_atoms(&params, *step)?;
            }
            if !r.is_empty() && params.service().probe_size().is_none() {
                return Err(UsageError(
                    "--r needs a probe mixture (mix:...) so the simulator can watch \
                     a fixed job size"
                        .into(),
                ));
            }
            (params, model.dist.clone(), None)
        }
        Command::Validate { model, grid, sim, u, order, r, terms } => {
            let params = model_of(model)?;
            let g = resolve_grid(grid, &params)?;
            check_sim(sim)?;
            check_order(*order)?;
            check_nonnegative_list("--r", r)?;
            if *terms < 1 {
                return Err(UsageError("--terms must be at least 1".into()));
            }
            let probe = params.service().probe_size().ok_or_else(|| {
                UsageError(
                    "validate needs a probe mixture (mix:BASE:SIZE:PROB) so the simulator \
                     can observe a fixed job size"
                        .into(),
                )
            })?;
            if let Some(u) = u {
                if (u - probe).abs() > 1e-12 {
                    return Err(UsageError(format!(
                        "--u {u} must equal the mixture's probe size {probe}"
                    )));
                }
            }
            if probe > g.horizon {
                return Err(UsageError(format!(
                    "probe size {probe} lies beyond the horizon {}; raise --horizon",
                    g.horizon
                )));
            }
            (params, model.dist.clone(), Some(g))
        }
    };
    Ok(Prepared { format, out, params, dist_spec, grid, command })
}
