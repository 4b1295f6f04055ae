//! Constraint scenarios, the pruned catalog of feasible ones, and filtering
//! by the current state.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::problem::Problem;
use crate::solver::{phase_one, InitialState, PhaseOneStatus};

/// `j = 1 + sum_k (eps_k - 1) s^k`.
pub fn encode(coeffs: &[usize], s: usize) -> Result<u64> {
    if s == 0 {
        return Err(Error::OutOfRange("s must be positive".into()));
    }
    let mut j: u64 = 0;
    let mut w: u64 = 1;
    let base = s as u64;
    for (k, &e) in coeffs.iter().enumerate() {
        if e == 0 || e > s {
            return Err(Error::OutOfRange(format!("coefficient {e} at position {k} not in 1..={s}")));
        }
        j = (e as u64 - 1)
            .checked_mul(w)
            .and_then(|t| j.checked_add(t))
            .ok_or_else(|| Error::OutOfRange("scenario index overflows u64".into()))?;
        if k + 1 < coeffs.len() {
            w = w
                .checked_mul(base)
                .ok_or_else(|| Error::OutOfRange("scenario index overflows u64".into()))?;
        }
    }
    j.checked_add(1)
        .ok_or_else(|| Error::OutOfRange("scenario index overflows u64".into()))
}

pub fn decode(j: u64, s: usize, horizon: usize) -> Result<Vec<usize>> {
    if s == 0 || j == 0 {
        return Err(Error::OutOfRange(format!("index {j} with s = {s}")));
    }
    let base = s as u64;
    let mut rest = j - 1;
    let mut coeffs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        coeffs.push((rest % base) as usize + 1);
        rest /= base;
    }
    if rest != 0 {
        return Err(Error::OutOfRange(format!("index {j} exceeds {s}^{horizon}")));
    }
    Ok(coeffs)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scenario {
    coeffs: Vec<usize>,
    s: usize,
}

impl Scenario {
    pub fn new(coeffs: Vec<usize>, s: usize) -> Result<Self> {
        encode(&coeffs, s)?;
        Ok(Self { coeffs, s })
    }

    pub fn from_index(j: u64, s: usize, horizon: usize) -> Result<Self> {
        Ok(Self {
            coeffs: decode(j, s, horizon)?,
            s,
        })
    }

    pub fn coeffs(&self) -> &[usize] {
        &self.coeffs
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn index(&self) -> u64 {
        encode(&self.coeffs, self.s).expect("validated at construction")
    }

    pub fn first(&self) -> usize {
        self.coeffs[0]
    }
}

/// Tolerances a catalog was pruned with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogTol {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub eps_g: f64,
}

/// Feasible coefficient sequences for every horizon `1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleCatalog {
    pub s: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub tol: CatalogTol,
    pub terminal_kind: String,
    pub hash: String,
    pub levels: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl FeasibleCatalog {
    pub fn level(&self, n: usize) -> &[Vec<usize>] {
        self.levels.get(&n).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, n: usize) -> usize {
        self.level(n).len()
    }

    /// Feasible scenarios at the full horizon, ascending by index.
    pub fn scenarios(&self) -> Vec<Scenario> {
        self.level(self.horizon)
            .iter()
            .map(|c| Scenario {
                coeffs: c.clone(),
                s: self.s,
            })
            .collect()
    }

    /// Every stored sequence's suffix (drop the first entry) is stored one level down.
    pub fn is_suffix_closed(&self) -> bool {
        self.levels.iter().all(|(&n, seqs)| {
            n == 1
                || seqs
                    .iter()
                    .all(|seq| self.level(n - 1).contains(&seq[1..].to_vec()))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("catalog: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Fails unless the catalog was built for `problem`.
    pub fn check(&self, problem: &Problem) -> Result<()> {
        let expected = problem.content_hash();
        if self.hash != expected {
            return Err(Error::CatalogMismatch {
                stored: self.hash.clone(),
                expected,
            });
        }
        Ok(())
    }
}

fn sort_by_index(seqs: &mut [Vec<usize>], s: usize) {
    seqs.sort_by_key(|c| encode(c, s).expect("valid coefficients"));
}

/// Whether some initial state in `X_{eps_0}` admits the whole scenario.
pub fn scenario_feasible(problem: &Problem, coeffs: &[usize]) -> Result<bool> {
    let sc = Scenario::new(coeffs.to_vec(), problem.s())?;
    let prog = problem.assemble(&sc, &InitialState::Free)?;
    let p1 = phase_one(&prog, &problem.solver);
    match p1.status {
        PhaseOneStatus::Feasible => Ok(true),
        PhaseOneStatus::Infeasible => Ok(false),
        PhaseOneStatus::IterLimit => Err(Error::SolverIterLimit {
            sequence: coeffs.to_vec(),
        }),
    }
}

fn extend_level(problem: &Problem, prev: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let s = problem.s();
    let candidates: Vec<Vec<usize>> = prev
        .iter()
        .flat_map(|suffix| {
            (1..=s).map(move |i| {
                let mut c = Vec::with_capacity(suffix.len() + 1);
                c.push(i);
                c.extend_from_slice(suffix);
                c
            })
        })
        .collect();
    let flags: Vec<bool> = candidates
        .par_iter()
        .map(|c| scenario_feasible(problem, c))
        .collect::<Result<_>>()?;
    let mut kept: Vec<Vec<usize>> = candidates
        .into_iter()
        .zip(flags)
        .filter_map(|(c, ok)| ok.then_some(c))
        .collect();
    sort_by_index(&mut kept, s);
    Ok(kept)
}

/// Prunes the scenario tree level by level up to `horizon`.
pub fn prune_catalog(problem: &Problem, horizon: usize) -> Result<FeasibleCatalog> {
    let empty = FeasibleCatalog {
        s: problem.s(),
        horizon: 0,
        tol: problem.catalog_tol(),
        terminal_kind: problem.terminal.tset.kind().as_str().into(),
        hash: problem.content_hash(),
        levels: BTreeMap::new(),
    };
    resume_catalog(problem, empty, horizon)
}

/// Continues pruning from the deepest stored level.
pub fn resume_catalog(problem: &Problem, mut catalog: FeasibleCatalog, horizon: usize) -> Result<FeasibleCatalog> {
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    catalog.check(problem)?;
    if catalog.s != problem.s() {
        return Err(Error::Schema("catalog s differs from the system".into()));
    }
    let start = catalog.levels.keys().next_back().copied().unwrap_or(0);
    if start > horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            got: start,
        });
    }
    for n in start + 1..=horizon {
        let prev: Vec<Vec<usize>> = if n == 1 {
            vec![Vec::new()]
        } else {
            catalog.level(n - 1).to_vec()
        };
        let level = extend_level(problem, &prev)?;
        catalog.levels.insert(n, level);
    }
    catalog.horizon = horizon;
    Ok(catalog)
}

/// Scenarios at the full horizon whose first region contains `x`.
pub fn filter_for_state(catalog: &FeasibleCatalog, spec: &SystemSpec, x: &DVector<f64>, tol: f64) -> Vec<Scenario> {
    let regions = spec.region_membership(x, tol);
    catalog
        .scenarios()
        .into_iter()
        .filter(|sc| regions.contains(&sc.first()))
        .collect()
}
