use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "nmpc", version, about = "Exact-linearization NMPC by convex scenario decomposition")]
pub struct Cli {
    /// Worker threads for pruning, solving and grid sampling.
    #[arg(long, global = true, env = "NMPC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Overrides for the settings block of a system file.
#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    /// Prediction horizon N.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub b0: Option<f64>,
    /// Output vector c, comma separated.
    #[arg(long, conflicts_with = "beta_target")]
    pub c: Option<String>,
    /// Choose c so that beta equals this value.
    #[arg(long)]
    pub beta_target: Option<f64>,
    /// Companion coefficients a_0..a_{n-1}, comma separated, or "charpoly".
    #[arg(long)]
    pub a: Option<String>,
    /// State weight Q, row-major and comma separated.
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// auto | polytope | ellipsoid
    #[arg(long)]
    pub terminal: Option<String>,
    #[arg(long)]
    pub eps_g: Option<f64>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    /// Linearization JSON written by `linearize`, used instead of recomputing.
    #[arg(long)]
    pub linearization: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions on a system.
    Validate {
        system: PathBuf,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the exact linearization as JSON.
    Linearize {
        system: PathBuf,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Sample the input intervals of every stage set as CSV.
    Stagesets {
        system: PathBuf,
        #[arg(long, default_value_t = 11)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Print terminal cost, gain and set as JSON.
    Terminal {
        system: PathBuf,
        #[arg(long)]
        check_axioms: bool,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Prune the scenario tree and write the feasible catalog.
    Prune {
        system: PathBuf,
        /// Catalog file to write.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the deepest level stored in `--out`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Solve the OCP at one initial state.
    Solve {
        system: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Solve this scenario index only.
        #[arg(long, conflicts_with = "all_feasible")]
        scenario: Option<u64>,
        /// Solve every catalog scenario compatible with x0 (the default).
        #[arg(long)]
        all_feasible: bool,
        /// Catalog file; pruned and written if missing.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Closed-loop simulation on the nonlinear plant, as CSV.
    Simulate {
        system: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Optimal input and cost on a uniform state grid, as CSV.
    Grid {
        system: PathBuf,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Add one feasibility column per catalog scenario.
        #[arg(long)]
        per_scenario: bool,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Run a shipped example end to end and compare with published values.
    Repro {
        /// ex1 | ex2 | ex3
        example: String,
        #[arg(long)]
        horizon: Option<usize>,
    },
}
