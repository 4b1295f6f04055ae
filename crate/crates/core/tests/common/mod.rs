//! Helpers shared by the integration suites: seeded sampling, random small
//! instances and a brute-force grid oracle for short horizons.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nmpc_core::model::{Polytope, Region, ScalarField, Sign, SystemSpec};
use nmpc_core::{CoeffChoice, InitialState, OutputChoice, Problem, ProblemConfig, Scenario, Solution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn in_box(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(lo.len(), lo.iter().zip(hi.iter()).map(|(l, h)| rng.gen_range(*l..=*h)))
}

/// Rejection sample inside a bounded polytope.
pub fn in_polytope(rng: &mut ChaCha8Rng, p: &Polytope) -> DVector<f64> {
    let (lo, hi) = p.bounding_box().expect("bounded polytope");
    loop {
        let x = in_box(rng, &lo, &hi);
        if p.contains(&x, 0.0) {
            return x;
        }
    }
}

pub fn state_box(spec: &SystemSpec) -> (DVector<f64>, DVector<f64>) {
    spec.bounding_box().expect("bounded state set")
}

/// Constraint class of a random instance's gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainClass {
    Affine,
    Quadratic,
    Smooth,
}

pub struct Instance {
    pub problem: Problem,
    pub x0: DVector<f64>,
    pub scenario: Scenario,
    pub class: GainClass,
}

fn random_gain(rng: &mut ChaCha8Rng, n: usize, class: GainClass) -> ScalarField {
    let w = DVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2));
    match class {
        GainClass::Affine => ScalarField::Affine { w, d: 1.0 },
        GainClass::Quadratic => {
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
            // Concave and positive on the unit box.
            let h = -(m.transpose() * &m);
            ScalarField::quadratic(h, w, 1.5).expect("symmetric Hessian")
        }
        GainClass::Smooth => {
            let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let dir = &dir / dir.norm();
            ScalarField::Sinusoid {
                amp: rng.gen_range(1.0..3.0),
                freq: 0.8,
                dir,
                phase: rng.gen_range(-0.2..0.2),
            }
        }
    }
}

/// A random plant with one region (the unit box), `n <= 3`, `N <= 2`.
pub fn random_instance(seed: u64, class: GainClass) -> Instance {
    let mut r = rng(seed);
    loop {
        let n = r.gen_range(2..=3usize);
        let horizon = r.gen_range(1..=2usize);
        let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| r.gen_range(-0.3..0.3));
        let b = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        let g = random_gain(&mut r, n, class);
        let bx = Polytope::from_box(&vec![-1.0; n], &vec![1.0; n]).unwrap();
        let Ok(spec) = SystemSpec::new(
            a,
            b,
            g,
            vec![Region {
                set: bx.clone(),
                sign: Sign::Pos,
            }],
            -2.0,
            2.0,
        )
        .and_then(|s| s.with_domain(bx)) else {
            continue;
        };
        let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.gen_range(0.05..1.0)));
        let cfg = ProblemConfig {
            b0: 1.0,
            output: OutputChoice::BetaTarget(1.0),
            coeffs: CoeffChoice::Charpoly,
            q: Some(q),
            rho: Some(r.gen_range(0.1..1.0)),
            horizon,
            ..ProblemConfig::default()
        };
        let Ok(problem) = Problem::build(spec, &cfg) else {
            continue;
        };
        let x0 = DVector::from_fn(n, |_, _| r.gen_range(-0.6..0.6));
        let scenario = Scenario::new(vec![1; horizon], 1).unwrap();
        return Instance {
            problem,
            x0,
            scenario,
            class,
        };
    }
}

/// Admissible interval for `v` at `x` in stage set `i` (1-based), or `None`
/// when `x` lies outside the region.
pub fn v_interval(problem: &Problem, i: usize, x: &DVector<f64>) -> Option<(f64, f64)> {
    let z = &problem.zsets[i - 1];
    if !z.region.contains(x, 0.0) {
        return None;
    }
    let (lo, hi) = z.input_interval(x);
    let shift = problem.lin.alpha.dot(x);
    Some(((lo + shift) / problem.lin.b0, (hi + shift) / problem.lin.b0))
}

/// Cost of an input sequence along the linear prediction, or `None` if any
/// stage or the terminal constraint is violated by more than `tol`.
pub fn sequence_cost(problem: &Problem, scenario: &[usize], x0: &DVector<f64>, v: &[f64], tol: f64) -> Option<f64> {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for (k, &vk) in v.iter().enumerate() {
        let z = &problem.zsets[scenario[k] - 1];
        if !z.contains(&x, vk, tol) {
            return None;
        }
        cost += problem.stage_cost(&x, vk);
        x = problem.lin.predict(&x, vk);
    }
    if !problem.terminal.tset.contains(&x, tol) {
        return None;
    }
    Some(cost + problem.terminal.phi(&x))
}

pub struct GridResult {
    pub value: f64,
    pub point: Vec<f64>,
    /// Largest grid spacing used.
    pub step: f64,
}

/// Exhaustive search over `v_0` (and `v_1` per `v_0`) on `points` samples of
/// each stage's admissible interval, keeping only exactly feasible points.
pub fn grid_oracle(problem: &Problem, scenario: &[usize], x0: &DVector<f64>, points: usize) -> Option<GridResult> {
    assert!(scenario.len() <= 2 && points >= 2);
    let lattice = |lo: f64, hi: f64| (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64);
    let mut best: Option<GridResult> = None;
    let mut keep = |v: Vec<f64>, value: f64, step: f64| {
        if !matches!(&best, Some(b) if value >= b.value) {
            best = Some(GridResult {
                value,
                point: v,
                step,
            });
        }
    };
    let (lo0, hi0) = v_interval(problem, scenario[0], x0)?;
    let step0 = (hi0 - lo0) / (points - 1) as f64;
    for v0 in lattice(lo0, hi0) {
        if scenario.len() == 1 {
            if let Some(c) = sequence_cost(problem, scenario, x0, &[v0], 0.0) {
                keep(vec![v0], c, step0);
            }
            continue;
        }
        let x1 = problem.lin.predict(x0, v0);
        let Some((lo1, hi1)) = v_interval(problem, scenario[1], &x1) else {
            continue;
        };
        let step1 = (hi1 - lo1) / (points - 1) as f64;
        for v1 in lattice(lo1, hi1) {
            if let Some(c) = sequence_cost(problem, scenario, x0, &[v0, v1], 0.0) {
                keep(vec![v0, v1], c, step0.max(step1));
            }
        }
    }
    best
}

/// Central-difference gradient of the sequence cost at `v`.
pub fn cost_gradient_norm(problem: &Problem, scenario: &[usize], x0: &DVector<f64>, v: &[f64]) -> f64 {
    let f = |w: &[f64]| sequence_cost(problem, scenario, x0, w, f64::INFINITY).unwrap();
    let h = 1e-6;
    let mut g2 = 0.0;
    for k in 0..v.len() {
        let mut p = v.to_vec();
        let mut m = v.to_vec();
        p[k] += h;
        m[k] -= h;
        let d = (f(&p) - f(&m)) / (2.0 * h);
        g2 += d * d;
    }
    g2.sqrt()
}

pub fn solve_fixed(problem: &Problem, scenario: &Scenario, x0: &DVector<f64>) -> Solution {
    let prog = problem
        .assemble(scenario, &InitialState::Fixed(x0.clone()))
        .expect("program assembles");
    nmpc_core::solver::solve(&prog, &problem.solver)
}

/// Largest stage/terminal violation along a solution's predicted trajectory.
pub fn solution_violation(problem: &Problem, scenario: &Scenario, sol: &Solution) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (k, &e) in scenario.coeffs().iter().enumerate() {
        worst = worst.max(problem.zsets[e - 1].max_violation(&sol.x_traj[k], sol.v_seq[k]));
    }
    let xn = sol.x_traj.last().unwrap();
    let term = match &problem.terminal.tset {
        nmpc_core::TerminalSet::Polytope(p) => p.max_violation(xn),
        nmpc_core::TerminalSet::Ellipsoid(e) => e.value(xn) / e.level - 1.0,
    };
    worst.max(term)
}
