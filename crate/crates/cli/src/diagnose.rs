//! `diagnose <suite>`: seeded verification suites with JSON reports.

use std::path::PathBuf;

use clap::Args;
use mines::analysis::{
    fd_check, moments_check, projection_suite, unbiasedness_suite, variance_floor_check, EstimatorVariant,
};
use mines::problems::seeded_rotation;
use mines::{RngStream, SpectralBand, SuiteReport, SymMatrix};
use nalgebra::DVector;

use crate::error::{CliError, CliResult};
use crate::output;
use crate::problem_spec::ProblemSpec;

pub const SUITES: [&str; 5] = ["unbiasedness", "variance_floor", "fd_check", "moments", "projection"];

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// One of unbiasedness, variance_floor, fd_check, moments, projection.
    pub suite: String,
    /// Monte-Carlo samples (batches, draws, or matrices for `projection`).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, env = "MINES_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub d: Option<usize>,
    /// Moment order for `moments`.
    #[arg(long)]
    pub p: Option<f64>,
    /// Batch size for `unbiasedness`.
    #[arg(long)]
    pub b: Option<usize>,
    /// Curvature for `variance_floor`.
    #[arg(long)]
    pub h: Option<f64>,
    /// Scalar inverse covariance for `variance_floor`.
    #[arg(long)]
    pub sigma_inv: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Condition number of the test quadratic.
    #[arg(long, default_value_t = 10.0)]
    pub kappa: f64,
    /// Finite-difference step for `fd_check`.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    /// Feasible competitors per matrix for `projection`.
    #[arg(long, default_value_t = 100)]
    pub feasible: usize,
    /// Largest dimension for `projection`.
    #[arg(long, default_value_t = 10)]
    pub max_dim: usize,
    /// Drop the `−Σ⁻¹` term of the covariance estimator (negative control).
    #[arg(long)]
    pub drop_inverse_term: bool,
    /// Report path; defaults to `<suite>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Random inverse covariance with spectrum in `[tau, zeta]`.
fn random_in_band(d: usize, band: &SpectralBand<f64>, rng: &mut RngStream) -> CliResult<SymMatrix<f64>> {
    let q = seeded_rotation(d, rng.seed().wrapping_add(0x5EED));
    let values: Vec<f64> = (0..d)
        .map(|_| {
            let u = 0.5 + 0.5 * (rng.standard_normal() / 2.0).tanh();
            band.tau() + (band.zeta() - band.tau()) * u
        })
        .collect();
    Ok(SymMatrix::from_eigen(q, &values)?)
}

fn quadratic_setup(
    args: &DiagnoseArgs,
    default_d: usize,
    rng: &mut RngStream,
) -> CliResult<(mines::Problem<f64>, DVector<f64>, SymMatrix<f64>)> {
    let d = args.d.unwrap_or(default_d);
    let spec: ProblemSpec = format!("quadratic:d={d},kappa={},rot={}", args.kappa, args.seed).parse()?;
    let problem = spec.build()?;
    let mu: DVector<f64> = rng.standard_normal_vector(d);
    let band = SpectralBand::new(0.5, 5.0)?;
    let sigma_inv = random_in_band(d, &band, rng)?;
    Ok((problem, mu, sigma_inv))
}

pub fn run_suite(args: &DiagnoseArgs) -> CliResult<SuiteReport> {
    let mut rng = RngStream::new(args.seed, 0);
    let report = match args.suite.as_str() {
        "unbiasedness" => {
            let (problem, mu, sigma_inv) = quadratic_setup(args, 3, &mut rng)?;
            let variant = if args.drop_inverse_term {
                EstimatorVariant::DropInverseTerm
            } else {
                EstimatorVariant::Standard
            };
            unbiasedness_suite(
                &problem,
                &mu,
                &sigma_inv,
                args.alpha.unwrap_or(0.1),
                args.b.unwrap_or(4),
                args.samples.unwrap_or(100_000),
                variant,
                &mut rng,
            )?
        }
        "variance_floor" => variance_floor_check(
            args.h.unwrap_or(1.0),
            args.sigma_inv.unwrap_or(1.0),
            args.samples.unwrap_or(1_000_000),
            &mut rng,
        )?,
        "fd_check" => {
            let (problem, mu, sigma_inv) = quadratic_setup(args, 5, &mut rng)?;
            fd_check(&problem, &mu, &sigma_inv, args.alpha.unwrap_or(0.5), args.fd_step, &mut rng)?
        }
        "moments" => moments_check(
            args.d.unwrap_or(5),
            args.p.unwrap_or(3.0),
            args.samples.unwrap_or(100_000),
            &mut rng,
        )?,
        "projection" => projection_suite(args.samples.unwrap_or(1000), args.feasible, args.max_dim, &mut rng)?,
        other => {
            return Err(CliError::config(format!(
                "suite: unknown suite `{other}` (expected one of {})",
                SUITES.join(", ")
            )))
        }
    };
    Ok(report)
}

/// Runs the suite, writes and prints its report; a failed suite is an error
/// after the report is on disk.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let report = run_suite(args)?;
    let path = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.json", report.suite)));
    output::write_json(&path, &report)?;
    output::say(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Diagnostic(format!("suite `{}` failed; report in {}", report.suite, path.display())))
    }
}
