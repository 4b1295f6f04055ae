//! Nonlinear MPC for input-affine systems `x+ = A x + g(x) b u` by exact
//! linearization and decomposition into convex subproblems.

pub mod closedloop;
pub mod config;
pub mod error;
pub mod examples;
pub mod io;
pub mod linearize;
pub mod model;
pub mod problem;
pub mod sampling;
pub mod scenario;
pub mod solver;
pub mod stagesets;
pub mod terminal;

pub use config::{CoeffChoice, OutputChoice, ProblemConfig, TerminalKind, Tolerances};
pub use error::{Error, Result};
pub use linearize::LinearizationData;
pub use model::{Polytope, Region, ScalarField, Sign, SystemSpec};
pub use problem::Problem;
pub use scenario::{FeasibleCatalog, Scenario};
pub use solver::{Costs, InitialState, SolverConfig, Solution, Status};
pub use stagesets::StageSet;
pub use terminal::{TerminalIngredients, TerminalSet};
