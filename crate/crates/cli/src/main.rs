//! `pals`: phantoms, simulation, reconstruction, gradient checks, metrics and export.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pals::PalsError;

#[derive(Parser, Debug)]
#[command(name = "pals", version, about = "Parametric level-set shape reconstruction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a phantom to a voxel grid.
    Phantom(PhantomArgs),
    /// Simulate experiments of one modality.
    Simulate(SimulateArgs),
    /// Reconstruct from the modalities of a run configuration.
    Reconstruct,
    /// Compare analytic derivatives against finite differences.
    Gradcheck(GradcheckArgs),
    /// IoU and volume error between two voxel grids.
    Metrics(MetricsArgs),
    /// Evaluate a parameter file on a grid of any resolution.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Dtype {
    U8,
    F32,
    F64,
}

impl From<Dtype> for pals::harness::io::VoxelDtype {
    fn from(d: Dtype) -> Self {
        match d {
            Dtype::U8 => Self::U8,
            Dtype::F32 => Self::F32,
            Dtype::F64 => Self::F64,
        }
    }
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// ellipsoid, sphere or dumbbell; ignored when the config names a phantom.
    #[arg(long, default_value = "ellipsoid")]
    name: String,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, value_enum, default_value = "u8")]
    dtype: Dtype,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    modality: String,
    #[arg(long, default_value = "ellipsoid")]
    phantom: String,
    /// Number of experiments (default: 30 dips, 8 silhouettes, 1 cloud).
    #[arg(long)]
    n: Option<usize>,
    /// Trace noise std in voxel volumes.
    #[arg(long, default_value_t = 2.0)]
    data_noise: f64,
    /// Std of the recorded-angle error in degrees.
    #[arg(long, default_value_t = 0.0)]
    angle_noise: f64,
    /// Std of the recorded-translation error as a fraction of the domain edge.
    #[arg(long, default_value_t = 0.0)]
    trans_noise: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// A family name or `all`.
    #[arg(long, default_value = "all")]
    family: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Parameter JSON written by `reconstruct`.
    #[arg(long, default_value = "params.json")]
    params: PathBuf,
    /// Voxels per axis over the default 5-unit cube.
    #[arg(long, default_value_t = 64)]
    dims: usize,
    /// Binarize at this threshold instead of writing the soft field.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: Dtype,
    /// Output header name inside the output directory.
    #[arg(long, default_value = "export.json")]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration: exit 1.
    Invalid(String),
    /// The numerics failed: exit 2.
    Numerical(String),
}

impl From<PalsError> for CliError {
    fn from(e: PalsError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Invalid(m) => ("invalid", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        format!("error: {kind}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.global.threads)?;
    std::fs::create_dir_all(&cli.global.out_dir)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", cli.global.out_dir.display())))?;
    let g = &cli.global;
    match &cli.command {
        Command::Phantom(a) => commands::phantom(g, a),
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Reconstruct => commands::reconstruct(g),
        Command::Gradcheck(a) => commands::gradcheck(g, a),
        Command::Metrics(a) => commands::metrics_cmd(a),
        Command::Export(a) => commands::export(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PALS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("bad arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Invalid(first).line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
