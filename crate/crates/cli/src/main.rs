//! `mreit`: synthesize data, reconstruct conductivities and inspect the results.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 numerical failure, 4 maximum iterations
//! reached without convergence.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mreit::MreitError;

#[derive(Debug, Parser)]
#[command(
    name = "mreit",
    version,
    about = "Harmonic Bz and reduced-basis Harmonic Bz reconstruction for 2D MREIT"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Mesh file (default: `mesh.mesh` next to the primary input).
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads; 2 or more solves the two drive problems concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Seed of the noise generator.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a mesh and phantom and synthesize Laplacian-of-Bz data.
    Synth(SynthArgs),
    /// Reconstruct the conductivity from a data file.
    Reconstruct(ReconstructArgs),
    /// Rasterize a nodal field to a PGM image.
    Render(RenderArgs),
    /// Relative max-norm errors between nodal fields.
    Metrics(MetricsArgs),
    /// Run the built-in property checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhantomKind {
    SheppLogan,
    Smooth,
    Constant,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Subdivisions per axis of the structured mesh (ignored with --mesh).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = PhantomKind::SheppLogan)]
    pub phantom: PhantomKind,
    /// Pixels per axis of the Shepp-Logan image.
    #[arg(long, default_value_t = 260)]
    pub pixels: usize,
    /// Value added to the Shepp-Logan intensities.
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    /// Value of the constant phantom.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    /// Uniform refinements of the synthesis mesh.
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    /// Synthesize on the reconstruction mesh itself.
    #[arg(long)]
    pub inverse_crime: bool,
    /// Relative Gaussian noise level; 0 writes only the noiseless data.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu0: f64,
    /// Electrode half-width.
    #[arg(long, default_value_t = mreit::mesh::DEFAULT_ELECTRODE_HALFWIDTH)]
    pub halfwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Bz,
    Rbz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Trust {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SingularArg {
    Error,
    Zero,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Laplacian-of-Bz data file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::Bz)]
    pub algo: Algorithm,
    /// Termination tolerance of the Harmonic Bz iteration.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Global termination tolerance of the reduced-basis iteration.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon1: f64,
    /// Error-bound threshold for re-enrichment.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon2: f64,
    #[arg(long, value_enum, default_value_t = Trust::Min)]
    pub trust: Trust,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mu0: f64,
    /// Known boundary conductivity σ_b.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_b: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub det_floor: f64,
    /// Handling of inner triangles with a singular coefficient matrix.
    #[arg(long, value_enum, default_value_t = SingularArg::Error)]
    pub singular: SingularArg,
    #[arg(long, default_value_t = mreit::mesh::DEFAULT_INNER_RADIUS)]
    pub r_inner: f64,
    /// Relative residual tolerance of the conjugate gradient solver.
    #[arg(long, default_value_t = 1e-10)]
    pub solver_tol: f64,
    /// Also store the final reduced spaces (rbz only).
    #[arg(long)]
    pub save_spaces: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Nodal field file.
    #[arg(long)]
    pub field: PathBuf,
    /// Output image (default: the field's name with `.pgm` in --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = mreit::render::DEFAULT_IMAGE_SIZE)]
    pub width: usize,
    #[arg(long, default_value_t = mreit::render::DEFAULT_IMAGE_SIZE)]
    pub height: usize,
    /// Value range mapped to black and white.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reference field, used as the denominator of the relative errors.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Fields to compare (every pair is reported).
    #[arg(required = true)]
    pub fields: Vec<PathBuf>,
    /// Restrict to nodes of triangles whose centroid lies within this radius.
    #[arg(long)]
    pub restrict: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] MreitError),
    #[error("{0}")]
    MaxIterations(String),
    #[error("{0}")]
    SelftestFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(MreitError::Io { .. } | MreitError::Parse { .. }) => 2,
            CliError::Core(MreitError::MeshMismatch(_) | MreitError::SizeMismatch { .. }) => 2,
            CliError::Core(_) => 1,
            CliError::MaxIterations(_) => 4,
            CliError::SelftestFailed(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
