//! Everything derived from a system and its settings, built once and shared
//! by pruning, solving and simulation.

use nalgebra::{DMatrix, DVector};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{default_rho, CoeffChoice, OutputChoice, ProblemConfig, TerminalKind, Tolerances};
use crate::error::{Error, Result};
use crate::io::{matrix_to_rows, SystemFile};
use crate::linearize::{build_linearization, compute_output_vector, LinearizationData};
use crate::model::SystemSpec;
use crate::scenario::{CatalogTol, Scenario};
use crate::solver::{assemble, ConvexProgram, Costs, InitialState, SolverConfig};
use crate::stagesets::{build_stage_sets_eps, StageSet};
use crate::terminal::{build_terminal, TerminalIngredients, TerminalSet};

#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: SystemSpec,
    pub lin: LinearizationData,
    pub zsets: Vec<StageSet>,
    pub costs: Costs,
    pub terminal: TerminalIngredients,
    pub tol: Tolerances,
    pub horizon: usize,
    pub solver: SolverConfig,
}

fn check_psd(q: &DMatrix<f64>, n: usize) -> Result<()> {
    if q.shape() != (n, n) {
        return Err(Error::Schema(format!("Q must be {n}x{n}")));
    }
    if (q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
        return Err(Error::Precondition("Q must be symmetric".into()));
    }
    let min = q.clone().symmetric_eigenvalues().min();
    if min < -1e-12 * (1.0 + q.amax()) {
        return Err(Error::Precondition(format!("Q is not PSD (eigenvalue {min:.3e})")));
    }
    Ok(())
}

impl Problem {
    pub fn build(spec: SystemSpec, cfg: &ProblemConfig) -> Result<Self> {
        cfg.tol.validate()?;
        if cfg.horizon == 0 {
            return Err(Error::Precondition("horizon must be at least 1".into()));
        }
        let n = spec.dim();
        let c = match &cfg.output {
            OutputChoice::Vector(c) if c.len() == n => DVector::from_vec(c.clone()),
            OutputChoice::Vector(c) => {
                return Err(Error::Schema(format!("c has length {}, expected {n}", c.len())))
            }
            OutputChoice::BetaTarget(t) => compute_output_vector(spec.a(), spec.b(), *t)?,
        };
        let coeffs = match &cfg.coeffs {
            CoeffChoice::Charpoly => None,
            CoeffChoice::Given(a) if a.len() == n => Some(DVector::from_vec(a.clone())),
            CoeffChoice::Given(a) => {
                return Err(Error::Schema(format!("a has length {}, expected {n}", a.len())))
            }
        };
        let lin = build_linearization(&spec, &c, cfg.b0, coeffs.as_ref())?;
        Self::with_linearization(spec, lin, cfg)
    }

    /// Like [`Problem::build`] but with a precomputed linearization; the
    /// config's output and coefficient choices are ignored.
    pub fn with_linearization(spec: SystemSpec, lin: LinearizationData, cfg: &ProblemConfig) -> Result<Self> {
        cfg.tol.validate()?;
        if cfg.horizon == 0 {
            return Err(Error::Precondition("horizon must be at least 1".into()));
        }
        if lin.dim() != spec.dim() {
            return Err(Error::Schema("linearization dimension differs from the system".into()));
        }
        let n = spec.dim();
        let zsets = build_stage_sets_eps(&spec, &lin, cfg.tol.eps_g)?;
        let q = cfg.q.clone().unwrap_or_else(|| DMatrix::identity(n, n) * 0.05);
        check_psd(&q, n)?;
        let rho = cfg.rho.unwrap_or_else(|| default_rho(lin.b0, lin.beta));
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Precondition("rho must be positive".into()));
        }
        let terminal = build_terminal(&lin.a_hat, &lin.b_hat, &q, rho, &zsets, cfg.terminal)?;
        Ok(Self {
            spec,
            lin,
            zsets,
            costs: Costs { q, rho },
            terminal,
            tol: cfg.tol,
            horizon: cfg.horizon,
            solver: cfg.solver_config(),
        })
    }

    pub fn from_file(file: &SystemFile) -> Result<Self> {
        Self::build(file.to_spec()?, &file.config()?)
    }

    /// Number of stage sets.
    pub fn s(&self) -> usize {
        self.zsets.len()
    }

    pub fn terminal_kind(&self) -> TerminalKind {
        self.terminal.tset.kind()
    }

    pub fn catalog_tol(&self) -> CatalogTol {
        CatalogTol {
            feas_tol: self.tol.feas_tol,
            kkt_tol: self.tol.kkt_tol,
            eps_g: self.tol.eps_g,
        }
    }

    pub fn assemble(&self, scenario: &Scenario, x0: &InitialState) -> Result<ConvexProgram> {
        assemble(
            scenario,
            x0,
            &self.lin,
            &self.zsets,
            &self.terminal,
            &self.costs,
            self.tol.eps_g,
        )
    }

    /// Stage cost `x^T Q x + rho v^2`.
    pub fn stage_cost(&self, x: &DVector<f64>, v: f64) -> f64 {
        self.costs.stage(x, v)
    }

    /// SHA-256 of the canonical description of everything a catalog depends on.
    pub fn content_hash(&self) -> String {
        let tset = match &self.terminal.tset {
            TerminalSet::Polytope(p) => json!({
                "kind": "polytope",
                "C": matrix_to_rows(p.c()),
                "d": p.d().as_slice(),
            }),
            TerminalSet::Ellipsoid(e) => json!({
                "kind": "ellipsoid",
                "shape": matrix_to_rows(&e.shape),
                "level": e.level,
            }),
        };
        let doc = json!({
            "system": SystemFile::from_spec(&self.spec),
            "linearization": self.lin.to_file(),
            "costs": {"Q": matrix_to_rows(&self.costs.q), "rho": self.costs.rho},
            "terminal": {"P": matrix_to_rows(&self.terminal.p), "kappa": self.terminal.kappa.as_slice(), "set": tset},
            "tol": {
                "eps_g": self.tol.eps_g,
                "membership": self.tol.membership,
                "feas_tol": self.tol.feas_tol,
                "kkt_tol": self.tol.kkt_tol,
            },
        });
        // `json!` builds sorted maps, so the text is canonical.
        let text = serde_json::to_string(&doc).expect("hash document serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;

    #[test]
    fn default_config_matches_reference_setup() {
        let problem = Problem::from_file(&examples::file("ex2").unwrap()).unwrap();
        assert!((problem.lin.beta - 0.024).abs() <= 1e-12);
        assert!((problem.costs.rho - 1.736111).abs() <= 1e-5);
        assert_eq!(problem.horizon, 15);
        assert_eq!(problem.s(), 3);
    }

    #[test]
    fn hash_depends_on_tolerances() {
        let file = examples::file("ex3").unwrap();
        let a = Problem::from_file(&file).unwrap();
        let mut cfg = file.config().unwrap();
        cfg.tol.feas_tol = 1e-6;
        let b = Problem::build(file.to_spec().unwrap(), &cfg).unwrap();
        assert_eq!(a.content_hash(), Problem::from_file(&file).unwrap().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn rejects_indefinite_weight() {
        let file = examples::file("ex2").unwrap();
        let mut cfg = file.config().unwrap();
        cfg.q = Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert!(Problem::build(file.to_spec().unwrap(), &cfg).is_err());
    }
}
