mod args;
mod commands;
mod repro;

use std::process::ExitCode;

use clap::Parser;
use nmpc_core::Error;
use serde_json::json;

use args::{Cli, Command};

/// Anything that ends a run early, with its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// Assumption or acceptance check failed.
    Validation(String),
    /// The solver did not certify a result.
    Solver(String),
    /// Bad command-line input.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Usage(_) => 3,
            Failure::Core(e) => match e {
                Error::RegionEmpty { .. }
                | Error::Uncontrollable { .. }
                | Error::InvalidOutputVector(_)
                | Error::IllConditioned { .. }
                | Error::SignAmbiguous { .. }
                | Error::Precondition(_)
                | Error::NoFiniteDetermination { .. }
                | Error::NoPositiveLevel => 1,
                Error::NoConvergence { .. } | Error::SolverIterLimit { .. } | Error::InfeasibleState { .. } => 2,
                Error::OutOfRange(_)
                | Error::HorizonMismatch { .. }
                | Error::CatalogMismatch { .. }
                | Error::Schema(_)
                | Error::Io(_)
                | Error::Json(_) => 3,
            },
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.code(),
            Failure::Validation(_) => "VALIDATION",
            Failure::Solver(_) => "SOLVER",
            Failure::Usage(_) => "USAGE",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Validation(m) | Failure::Solver(m) | Failure::Usage(m) => m.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Validate { system, samples, seed } => commands::validate(&system, samples, seed),
        Command::Linearize { system, cfg } => commands::linearize(&system, &cfg),
        Command::Stagesets {
            system,
            resolution,
            out,
            cfg,
        } => commands::stagesets(&system, resolution, out.as_deref(), &cfg),
        Command::Terminal {
            system,
            check_axioms,
            samples,
            seed,
            cfg,
        } => commands::terminal(&system, check_axioms, samples, seed, &cfg),
        Command::Prune {
            system,
            out,
            resume,
            cfg,
        } => commands::prune(&system, &out, resume, &cfg),
        Command::Solve {
            system,
            x0,
            scenario,
            all_feasible: _,
            catalog,
            cfg,
        } => commands::solve(&system, &x0, scenario, catalog.as_deref(), &cfg),
        Command::Simulate {
            system,
            x0,
            steps,
            catalog,
            out,
            cfg,
        } => commands::simulate_cmd(&system, &x0, steps, catalog.as_deref(), out.as_deref(), &cfg),
        Command::Grid {
            system,
            resolution,
            per_scenario,
            catalog,
            out,
            cfg,
        } => commands::grid(&system, resolution, per_scenario, catalog.as_deref(), out.as_deref(), &cfg),
        Command::Repro { example, horizon } => repro::run(&example, horizon),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let f = Failure::Usage(e.kind().to_string());
            eprintln!("{}", json!({"code": f.code(), "error": f.message(), "exit": f.exit_code()}));
            return ExitCode::from(f.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"code": f.code(), "error": f.message(), "exit": f.exit_code()}));
            ExitCode::from(f.exit_code())
        }
    }
}
