//! Online evaluation: pick the best feasible scenario for the current state,
//! apply its first input, and step the true plant.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::problem::Problem;
use crate::scenario::{filter_for_state, FeasibleCatalog, Scenario};
use crate::solver::{solve, InitialState, Status};

/// Values within this of the minimum count as ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub j: u64,
    pub status: Status,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcStepResult {
    pub u: f64,
    pub v: f64,
    pub j_star: u64,
    pub value: f64,
    pub v_seq: Vec<f64>,
    pub n_scenarios_solved: usize,
    pub per_scenario: Vec<ScenarioOutcome>,
}

/// Smallest `j` whose value is within [`TIE_TOL`] of the minimum.
pub fn select_optimal(outcomes: &[ScenarioOutcome]) -> Option<&ScenarioOutcome> {
    let best = outcomes
        .iter()
        .filter(|o| o.status == Status::Optimal)
        .map(|o| o.value)
        .fold(f64::INFINITY, f64::min);
    outcomes
        .iter()
        .filter(|o| o.status == Status::Optimal && o.value <= best + TIE_TOL)
        .min_by_key(|o| o.j)
}

/// Solves every candidate scenario for `x` and applies the best first move.
pub fn evaluate_ocp(problem: &Problem, catalog: &FeasibleCatalog, x: &DVector<f64>) -> Result<MpcStepResult> {
    if catalog.horizon != problem.horizon {
        return Err(Error::HorizonMismatch {
            expected: problem.horizon,
            got: catalog.horizon,
        });
    }
    let candidates = filter_for_state(catalog, &problem.spec, x, problem.tol.membership);
    evaluate_candidates(problem, &candidates, x)
}

pub fn evaluate_candidates(problem: &Problem, candidates: &[Scenario], x: &DVector<f64>) -> Result<MpcStepResult> {
    let x0 = InitialState::Fixed(x.clone());
    let solved: Vec<(u64, crate::solver::Solution)> = candidates
        .par_iter()
        .map(|sc| Ok((sc.index(), solve(&problem.assemble(sc, &x0)?, &problem.solver))))
        .collect::<Result<_>>()?;
    let per_scenario: Vec<ScenarioOutcome> = solved
        .iter()
        .map(|(j, sol)| ScenarioOutcome {
            j: *j,
            status: sol.status,
            value: sol.value,
        })
        .collect();
    let best = select_optimal(&per_scenario).ok_or(Error::InfeasibleState { step: None })?;
    let (_, sol) = solved
        .iter()
        .find(|(j, _)| *j == best.j)
        .expect("selected scenario was solved");
    let v = sol.v_seq[0];
    let (u_lo, u_hi) = problem.spec.u_bounds();
    let u = problem
        .lin
        .u_of_v_eps(&problem.spec, x, v, problem.tol.eps_g)
        .clamp(u_lo, u_hi);
    Ok(MpcStepResult {
        u,
        v,
        j_star: best.j,
        value: best.value,
        v_seq: sol.v_seq.clone(),
        n_scenarios_solved: candidates.len(),
        per_scenario,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: f64,
    pub v: f64,
    pub value: f64,
    pub j_star: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// State after the last applied input.
    pub final_state: DVector<f64>,
    /// Step at which no scenario was feasible, if the run stopped early.
    pub infeasible_at: Option<usize>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let n = self.final_state.len();
        let mut out = String::from("k");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",u,v,V,j_star\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.k);
            for xi in s.x.iter() {
                let _ = write!(out, ",{}", fmt_f64(*xi));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                fmt_f64(s.u),
                fmt_f64(s.v),
                fmt_f64(s.value),
                s.j_star
            );
        }
        out
    }
}

/// Receding-horizon run on the nonlinear plant.
pub fn simulate(problem: &Problem, catalog: &FeasibleCatalog, x0: &DVector<f64>, steps: usize) -> Result<Trajectory> {
    let mut x = x0.clone();
    let mut traj = Trajectory {
        steps: Vec::with_capacity(steps),
        final_state: x.clone(),
        infeasible_at: None,
    };
    for k in 0..steps {
        let step = match evaluate_ocp(problem, catalog, &x) {
            Ok(s) => s,
            Err(Error::InfeasibleState { .. }) if k > 0 => {
                traj.infeasible_at = Some(k);
                break;
            }
            Err(Error::InfeasibleState { .. }) => return Err(Error::InfeasibleState { step: Some(0) }),
            Err(e) => return Err(e),
        };
        traj.steps.push(TrajectoryStep {
            k,
            x: x.clone(),
            u: step.u,
            v: step.v,
            value: step.value,
            j_star: step.j_star,
        });
        x = problem.spec.dynamics_step(&x, step.u);
        traj.final_state = x.clone();
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub x: DVector<f64>,
    pub feasible: bool,
    /// NaN when infeasible.
    pub u: f64,
    pub value: f64,
    /// 0 when infeasible.
    pub j_star: u64,
    /// Per-scenario feasibility, aligned with [`GridTable::scenario_ids`].
    pub scenario_feasible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub resolution: usize,
    /// Scenario indices with their own feasibility column; empty unless requested.
    pub scenario_ids: Vec<u64>,
    pub points: Vec<GridPoint>,
}

impl GridTable {
    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(0, |p| p.x.len());
        let mut out = String::new();
        for i in 1..=n {
            let _ = write!(out, "x{i},");
        }
        out.push_str("feasible,u_star,V_star,j_star");
        for j in &self.scenario_ids {
            let _ = write!(out, ",feasible_j{j}");
        }
        out.push('\n');
        for p in &self.points {
            for xi in p.x.iter() {
                let _ = write!(out, "{},", fmt_f64(*xi));
            }
            let _ = write!(
                out,
                "{},{},{},{}",
                u8::from(p.feasible),
                fmt_f64(p.u),
                fmt_f64(p.value),
                p.j_star
            );
            for f in &p.scenario_feasible {
                let _ = write!(out, ",{}", u8::from(*f));
            }
            out.push('\n');
        }
        out
    }

    pub fn feasible_count(&self) -> usize {
        self.points.iter().filter(|p| p.feasible).count()
    }
}

/// Evaluates the controller on a uniform grid over the bounding box of `X`.
/// The first coordinate varies fastest.
pub fn sample_grid(problem: &Problem, catalog: &FeasibleCatalog, resolution: usize) -> Result<GridTable> {
    sample_grid_with(problem, catalog, resolution, false)
}

/// [`sample_grid`], optionally recording every catalog scenario's feasibility
/// at each point so the sets `F_j` can be rebuilt from the table.
pub fn sample_grid_with(
    problem: &Problem,
    catalog: &FeasibleCatalog,
    resolution: usize,
    per_scenario: bool,
) -> Result<GridTable> {
    if resolution < 2 {
        return Err(Error::Precondition("grid resolution must be at least 2".into()));
    }
    let (lo, hi) = problem.spec.bounding_box()?;
    let n = lo.len();
    let total = resolution
        .checked_pow(n as u32)
        .ok_or_else(|| Error::OutOfRange("grid too large".into()))?;
    let scenario_ids: Vec<u64> = if per_scenario {
        catalog.scenarios().iter().map(Scenario::index).collect()
    } else {
        Vec::new()
    };
    let columns = |outcomes: &[ScenarioOutcome]| -> Vec<bool> {
        scenario_ids
            .iter()
            .map(|j| outcomes.iter().any(|o| o.j == *j && o.status == Status::Optimal))
            .collect()
    };
    let coord = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (resolution - 1) as f64;
    let points: Vec<GridPoint> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let x = DVector::from_iterator(
                n,
                (0..n).map(|k| {
                    let i = rest % resolution;
                    rest /= resolution;
                    coord(k, i)
                }),
            );
            match evaluate_ocp(problem, catalog, &x) {
                Ok(s) => Ok(GridPoint {
                    x,
                    feasible: true,
                    u: s.u,
                    value: s.value,
                    j_star: s.j_star,
                    scenario_feasible: columns(&s.per_scenario),
                }),
                Err(Error::InfeasibleState { .. }) => Ok(GridPoint {
                    x,
                    feasible: false,
                    u: f64::NAN,
                    value: f64::NAN,
                    j_star: 0,
                    scenario_feasible: vec![false; scenario_ids.len()],
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(GridTable {
        resolution,
        scenario_ids,
        points,
    })
}
