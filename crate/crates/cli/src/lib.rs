//! Command-line front end: argument definitions, commands and the exit-code
//! contract.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | could not write an output file |
//! | 2 | malformed data, flags or configuration |
//! | 3 | the solver or the bootstrap failed |
//! | 4 | the model is not identified by the data |

pub mod commands;
pub mod options;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sckls_core::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sckls_core::Error as E;
        match self {
            CliError::Output { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Solver(_) | E::BootstrapAborted { .. } | E::Consistency(_) => 3,
                E::Identification(_) | E::SingularLocalDesign { .. } | E::DegenerateGrid { .. } | E::DegenerateHull => {
                    4
                }
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sckls", version, about = "Shape-constrained kernel-weighted least squares")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a shape-constrained model to a data file.
    Fit(FitArgs),
    /// Predict from a saved model at query points.
    Predict(PredictArgs),
    /// Bootstrap tests of the fitted shape.
    #[command(subcommand)]
    Test(TestCommand),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Select a bandwidth by leave-one-out cross-validation.
    Bandwidth(BandwidthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SmoothingArgs {
    /// auto | fixed:h[,h2,...] | knn:auto | knn:K
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    /// gaussian | epanechnikov
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,
    /// Multipliers of the rule-of-thumb bandwidth tried by `auto`, comma separated.
    #[arg(long)]
    pub cv_grid: Option<String>,
    /// Neighbour counts tried by `knn:auto`, comma separated.
    #[arg(long)]
    pub knn_k: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Sckls,
    Cnls,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns x1..xd, y and optionally z1..zl.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write (JSON). Tables go next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "concave-increasing")]
    pub shape: String,
    /// Pointwise bound TARGET:LO:HI with TARGET `value` or `bK`; repeatable.
    #[arg(long = "bound")]
    pub bounds: Vec<String>,
    #[arg(long, value_enum, default_value = "sckls")]
    pub estimator: EstimatorArg,
    /// auto | data | uniform:K[xK2...] | percentile:K[xK2...]
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Drop evaluation points outside the convex hull of the inputs.
    #[arg(long)]
    pub hull_filter: bool,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Use the z columns as linear contextual variables.
    #[arg(long)]
    pub contextual: bool,
    /// Recorded in the model file for provenance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ray for the most productive scale size, comma separated.
    #[arg(long)]
    pub mpss_direction: Option<String>,
    /// Scale range LO,HI for the MPSS search (defaults to the data box).
    #[arg(long)]
    pub mpss_range: Option<String>,
    /// Write the full QP in a plain-text sparse format.
    #[arg(long)]
    pub dump_qp: Option<PathBuf>,
    /// Write tidy plot data (observations, grid fit, prediction paths).
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with columns x1..xd.
    #[arg(long)]
    pub points: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Report file (JSON); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation points per input dimension (uniform lattice).
    #[arg(long, default_value_t = 20)]
    pub grid_points: usize,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    /// rademacher | mammen
    #[arg(long, default_value = "rademacher")]
    pub weights: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum TestCommand {
    /// Is the regression function consistent with a shape?
    Shape {
        #[command(flatten)]
        common: TestArgs,
        /// Null shape.
        #[arg(long, default_value = "concave-increasing")]
        shape: String,
        /// Add the offset c n^(-2/(4+d)) log n with this c.
        #[arg(long)]
        delta_c: Option<f64>,
        /// Build replicates around the constrained fit.
        #[arg(long)]
        recentre: bool,
    },
    /// Is the regression function affine?
    Affinity {
        #[command(flatten)]
        common: TestArgs,
        /// Require non-negative slopes in every fit.
        #[arg(long)]
        monotone: bool,
        /// Resample centred residuals instead of wild weights.
        #[arg(long)]
        ordinary: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Exp1,
    Exp4,
    ShapeTest,
    AffinityTest,
    Sweep,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// TOML file with the experiment's full configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for report.json, report.csv and the timings sidecar.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Input dimensions, comma separated.
    #[arg(long)]
    pub d: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long)]
    pub n: Option<String>,
    /// Target evaluation-point counts, comma separated.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bootstrap replicates (test studies).
    #[arg(long)]
    pub b: Option<usize>,
    /// sckls, cnls, local-linear; comma separated.
    #[arg(long)]
    pub estimators: Option<String>,
    /// Contextual coefficients, comma separated.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Bandwidths for the sweep, comma separated.
    #[arg(long)]
    pub h: Option<String>,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,
    /// Select a nearest-neighbour count instead of a fixed bandwidth.
    #[arg(long)]
    pub knn: bool,
    #[arg(long)]
    pub cv_grid: Option<String>,
    #[arg(long)]
    pub knn_k: Option<String>,
    /// Report file (JSON); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => commands::fit::run(&a),
        Command::Predict(a) => commands::predict::run(&a),
        Command::Test(t) => commands::test::run(&t),
        Command::Simulate(a) => commands::simulate::run(&a),
        Command::Bandwidth(a) => commands::bandwidth::run(&a),
    }
}
