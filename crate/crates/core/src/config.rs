use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::EPS_G;
use crate::solver::SolverConfig;

/// Numerical tolerances shared across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `|g(x)| <= eps_g` counts as `g(x) = 0`.
    pub eps_g: f64,
    /// Slack for region and stage-set membership tests.
    pub membership: f64,
    /// Phase-I optimum above which a program is infeasible.
    pub feas_tol: f64,
    pub kkt_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_g: EPS_G,
            membership: 1e-8,
            feas_tol: 1e-7,
            kkt_tol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eps_g, self.membership, self.feas_tol, self.kkt_tol];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(Error::Precondition("all tolerances must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalKind {
    /// Polytope when the first stage set is affine, ellipsoid otherwise.
    #[default]
    Auto,
    Polytope,
    Ellipsoid,
}

impl TerminalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::Auto => "auto",
            TerminalKind::Polytope => "polytope",
            TerminalKind::Ellipsoid => "ellipsoid",
        }
    }
}

impl FromStr for TerminalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TerminalKind::Auto),
            "polytope" => Ok(TerminalKind::Polytope),
            "ellipsoid" => Ok(TerminalKind::Ellipsoid),
            other => Err(Error::Schema(format!("unknown terminal kind {other:?}"))),
        }
    }
}

/// How the linear output `c^T x` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputChoice {
    Vector(Vec<f64>),
    /// Solve for `c` with `c^T A^(n-1) b` equal to the target.
    BetaTarget(f64),
}

/// Companion-form coefficients `a_0..a_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffChoice {
    Charpoly,
    Given(Vec<f64>),
}

/// Everything needed to turn a [`crate::model::SystemSpec`] into a solvable problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub b0: f64,
    pub output: OutputChoice,
    pub coeffs: CoeffChoice,
    /// Stage state weight; `None` means `0.05 I`.
    pub q: Option<DMatrix<f64>>,
    /// Stage input weight; `None` means `0.1 b0^2 / beta^2`.
    pub rho: Option<f64>,
    pub horizon: usize,
    pub terminal: TerminalKind,
    pub tol: Tolerances,
    pub max_newton: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            b0: 0.1,
            output: OutputChoice::BetaTarget(1.0),
            coeffs: CoeffChoice::Charpoly,
            q: None,
            rho: None,
            horizon: 15,
            terminal: TerminalKind::Auto,
            tol: Tolerances::default(),
            max_newton: 500,
        }
    }
}

impl ProblemConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            feas_tol: self.tol.feas_tol,
            kkt_tol: self.tol.kkt_tol,
            max_newton: self.max_newton,
            ..SolverConfig::default()
        }
    }
}

/// Default input weight `0.1 b0^2 / beta^2`.
pub fn default_rho(b0: f64, beta: f64) -> f64 {
    0.1 * b0 * b0 / (beta * beta)
}
