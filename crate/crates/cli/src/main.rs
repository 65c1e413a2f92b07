mod commands;
mod render;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wandering::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "wandering", version, about = "Build, straighten, search and verify the wandering-domain model")]
struct Cli {
    /// Sectioned key = value configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Instantiate the model and write the permissibility summary.
    Build,
    /// Straighten μ_g and write φ with its diagnostics.
    Solve,
    /// Select n_k, iterate the fixpoint map, write the checkpoint and consequence table.
    Search,
    /// Run the estimate battery, branch distortion checks and inclusion checks.
    Verify,
    /// Escape-time image of f and orbit CSVs.
    Render,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure { code, message: message.into() }
    }
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_PERMISSIBILITY: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_SEARCH: u8 = 5;
pub const EXIT_VERIFY: u8 = 6;
pub const EXIT_IO: u8 = 7;

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn set_threads(n: usize) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--threads must be >= 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("--threads: {e}")))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", cfg.out.display())))?;
    match cli.command {
        Command::Build => commands::build(&cfg),
        Command::Solve => commands::solve(&cfg),
        Command::Search => commands::search(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Render => render::render(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
