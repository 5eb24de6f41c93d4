//! Command-line front end for geostatistical analysis of functional data:
//! simulation, curve smoothing, trace-variogram estimation and fitting,
//! functional kriging, surface smoothing, and FAR(1) forecasting.

mod commands;
mod error;
mod io;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::SurfaceBasisChoice;
use error::{CliError, CliResult};
use fdfield::tracevar::VariogramFamily;

#[derive(Parser)]
#[command(
    name = "fdfield",
    about = "Geostatistics for functional data: curves over space and surfaces over time",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a JSON specification.
    Simulate(SimulateArgs),
    /// Smooth raw curve samples into basis coefficients.
    Smooth(SmoothArgs),
    /// Estimate the empirical trace-variogram and fit parametric models.
    Variogram(VariogramArgs),
    /// Predict curves at new locations by ordinary or universal kriging.
    Krige(KrigeArgs),
    /// Smooth scattered observations into surfaces, one per time slice.
    Surface(SurfaceArgs),
    /// Fit a FAR(1) operator to a surface series and forecast one step.
    Far(FarArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write curves.csv with this many samples per curve.
    #[arg(long)]
    emit_samples: Option<usize>,
    /// Also write slices.csv sampled on this grid side per surface.
    #[arg(long)]
    emit_grid: Option<usize>,
}

#[derive(Args)]
struct SmoothArgs {
    /// Raw samples CSV: site_id,s1,s2,v,value.
    #[arg(long)]
    input: PathBuf,
    /// Output dataset CSV (a .basis.json sidecar is written next to it).
    #[arg(long)]
    output: PathBuf,
    /// Number of B-spline basis functions.
    #[arg(long, default_value_t = 23)]
    basis_size: usize,
    /// Spline order (4 = cubic).
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Candidate smoothing parameters for GCV, comma separated.
    #[arg(long, default_value = "1e-8,1e-7,1e-6,1e-5,1e-4,1e-3,1e-2")]
    lambda_grid: String,
    /// Fixed smoothing parameter (skips GCV).
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct VariogramArgs {
    /// Dataset CSV written by `smooth` or `simulate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV of the empirical trace-variogram (h,gamma,count).
    #[arg(long)]
    empirical: PathBuf,
    /// Output JSON of the fitted models ranked by SSE.
    #[arg(long)]
    models: PathBuf,
    /// Number of distance classes.
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Binned fraction of the maximum pairwise distance.
    #[arg(long, default_value_t = 0.5)]
    max_fraction: f64,
    /// Families to fit, comma separated.
    #[arg(long, default_value = "exponential,spherical,gaussian,matern")]
    families: String,
    /// Weighting of the squared errors: ols, counts, or cressie.
    #[arg(long, default_value = "counts")]
    weighting: String,
}

#[derive(Args)]
struct KrigeArgs {
    /// Dataset CSV written by `smooth` or `simulate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Target locations CSV: s1,s2.
    #[arg(long)]
    targets: PathBuf,
    /// Output predictions CSV.
    #[arg(long)]
    output: PathBuf,
    /// Fitted models JSON from `variogram` (ordinary kriging).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Drift for universal kriging: none, intercept, linear, or quadratic.
    #[arg(long, default_value = "none")]
    drift: String,
    /// Residual variogram family for universal kriging.
    #[arg(long, default_value = "exponential")]
    family: String,
    /// Also write dense predicted curves to this CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Points per predicted curve.
    #[arg(long, default_value_t = 101)]
    curve_grid: usize,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Scattered observations CSV: t,s1,s2,value.
    #[arg(long)]
    input: PathBuf,
    /// Output surface-series CSV (a .basis.json sidecar is written).
    #[arg(long)]
    output: PathBuf,
    /// Smoother: tensor or fem.
    #[arg(long, default_value = "tensor")]
    basis: String,
    /// Tensor basis size along s1.
    #[arg(long, default_value_t = 8)]
    k1: usize,
    /// Tensor basis size along s2.
    #[arg(long, default_value_t = 8)]
    k2: usize,
    /// FEM mesh nodes along s1.
    #[arg(long, default_value_t = 8)]
    nx: usize,
    /// FEM mesh nodes along s2.
    #[arg(long, default_value_t = 8)]
    ny: usize,
    /// Candidate smoothing parameters for GCV, comma separated.
    #[arg(long, default_value = "1e-8,1e-6,1e-4,1e-2,1")]
    lambda_grid: String,
    /// Fixed smoothing parameter (skips GCV).
    #[arg(long)]
    lambda: Option<f64>,
    /// Also write a dense raster CSV (t,s1,s2,value).
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Raster grid side.
    #[arg(long, default_value_t = 21)]
    raster_grid: usize,
}

#[derive(Args)]
struct FarArgs {
    /// Surface-series CSV written by `surface` or `simulate`.
    #[arg(long)]
    surfaces: PathBuf,
    /// Output operator JSON.
    #[arg(long)]
    operator: PathBuf,
    /// Output one-step forecast CSV.
    #[arg(long)]
    forecast: PathBuf,
    /// Truncation level for the covariance inverse.
    #[arg(long)]
    truncation_k: Option<usize>,
    /// Ridge parameter for the covariance inverse.
    #[arg(long)]
    ridge: Option<f64>,
    /// Retained trace fraction when no regularization is given.
    #[arg(long, default_value_t = 0.95)]
    trace_fraction: f64,
    /// Also write the forecast raster CSV (t,s1,s2,value).
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Raster grid side.
    #[arg(long, default_value_t = 21)]
    raster_grid: usize,
}

fn parse_families(raw: &str) -> CliResult<Vec<VariogramFamily>> {
    let mut families = Vec::new();
    for piece in raw.split(',') {
        families.push(VariogramFamily::parse(piece.trim())?);
    }
    if families.is_empty() {
        return Err(CliError::input("no families requested"));
    }
    Ok(families)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => commands::cmd_simulate(
            &args.spec,
            &args.out_dir,
            args.emit_samples,
            args.emit_grid,
        ),
        Command::Smooth(args) => {
            let grid = commands::parse_grid(&args.lambda_grid)?;
            commands::cmd_smooth(
                &args.input,
                &args.output,
                args.basis_size,
                args.order,
                &grid,
                args.lambda,
            )
        }
        Command::Variogram(args) => {
            let families = parse_families(&args.families)?;
            let weighting = commands::parse_weighting(&args.weighting)?;
            commands::cmd_variogram(
                &args.dataset,
                args.bins,
                args.max_fraction,
                &families,
                weighting,
                &args.empirical,
                &args.models,
            )
        }
        Command::Krige(args) => {
            let drift = commands::parse_drift(&args.drift)?;
            let family = VariogramFamily::parse(&args.family)?;
            commands::cmd_krige(
                &args.dataset,
                &args.targets,
                &args.output,
                args.model.as_deref(),
                drift,
                family,
                args.curves.as_deref(),
                args.curve_grid,
            )
        }
        Command::Surface(args) => {
            let grid = commands::parse_grid(&args.lambda_grid)?;
            let choice = match args.basis.as_str() {
                "tensor" => SurfaceBasisChoice::Tensor {
                    k1: args.k1,
                    k2: args.k2,
                },
                "fem" => SurfaceBasisChoice::Fem {
                    nx: args.nx,
                    ny: args.ny,
                },
                other => {
                    return Err(CliError::input(format!(
                        "unknown surface basis `{other}` (expected tensor or fem)"
                    )))
                }
            };
            commands::cmd_surface(
                &args.input,
                &args.output,
                choice,
                &grid,
                args.lambda,
                args.raster.as_deref(),
                args.raster_grid,
            )
        }
        Command::Far(args) => commands::cmd_far(
            &args.surfaces,
            &args.operator,
            &args.forecast,
            args.truncation_k,
            args.ridge,
            args.trace_fraction,
            args.raster.as_deref(),
            args.raster_grid,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
