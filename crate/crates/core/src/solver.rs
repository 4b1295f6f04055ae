//! Condensed per-scenario programs and a dense log-barrier interior-point
//! method for them.
//!
//! The decision vector is `y = (v_0, ..., v_{N-1})`, extended by `x_0` when
//! the initial state is free. Every predicted state is an affine map of `y`,
//! so the only constraints left are inequalities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linearize::LinearizationData;
use crate::model::{lp_maximize, FieldKind, LpOutcome, ScalarField};
use crate::scenario::Scenario;
use crate::stagesets::StageSet;
use crate::terminal::{TerminalIngredients, TerminalSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Phase-I optimum above which a program counts as infeasible.
    pub feas_tol: f64,
    pub kkt_tol: f64,
    /// Total Newton steps over both phases.
    pub max_newton: usize,
    pub mu0: f64,
    pub mu_factor: f64,
    /// Centering stops once `m * mu` is below this gap.
    pub gap_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            kkt_tol: 1e-8,
            max_newton: 500,
            mu0: 10.0,
            mu_factor: 10.0,
            gap_tol: 1e-9,
            armijo: 0.01,
            backtrack: 0.5,
        }
    }
}

/// Stage cost weights for `x^T Q x + rho v^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Costs {
    pub q: DMatrix<f64>,
    pub rho: f64,
}

impl Costs {
    pub fn stage(&self, x: &DVector<f64>, v: f64) -> f64 {
        x.dot(&(&self.q * x)) + self.rho * v * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(DVector<f64>),
    Free,
}

/// `x_hat(k) = phi[k] x0 + gamma[k] (v_0, ..., v_{N-1})` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOperators {
    pub phi: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    /// Affine maps `x_hat(k) = maps[k].0 y + maps[k].1` in the decision vector.
    pub maps: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub n_vars: usize,
}

impl PredictionOperators {
    pub fn horizon(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn state(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        &self.maps[k].0 * y + &self.maps[k].1
    }
}

pub fn condense(lin: &LinearizationData, horizon: usize, x0: &InitialState) -> PredictionOperators {
    let n = lin.dim();
    let free = matches!(x0, InitialState::Free);
    let n_vars = horizon + if free { n } else { 0 };
    let mut phi = vec![DMatrix::identity(n, n)];
    let mut gamma = vec![DMatrix::zeros(n, horizon)];
    for k in 1..=horizon {
        phi.push(&lin.a_hat * &phi[k - 1]);
        let mut g = &lin.a_hat * &gamma[k - 1];
        g.set_column(k - 1, &lin.b_hat);
        gamma.push(g);
    }
    let maps = (0..=horizon)
        .map(|k| {
            let mut s = DMatrix::zeros(n, n_vars);
            s.view_mut((0, 0), (n, horizon)).copy_from(&gamma[k]);
            match x0 {
                InitialState::Free => {
                    s.view_mut((0, horizon), (n, n)).copy_from(&phi[k]);
                    (s, DVector::zeros(n))
                }
                InitialState::Fixed(x) => (s, &phi[k] * x),
            }
        })
        .collect();
    PredictionOperators {
        phi,
        gamma,
        maps,
        n_vars,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProgramClass {
    Qp,
    Qcqp,
    Nlp,
}

impl ProgramClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ProgramClass::Qp => "QP",
            ProgramClass::Qcqp => "QCQP",
            ProgramClass::Nlp => "NLP",
        }
    }
}

/// `g_coef g(X y + x_off) + a^T y + b <= 0`
#[derive(Debug, Clone)]
pub struct CurvedConstraint {
    pub g_coef: f64,
    pub xmap: DMatrix<f64>,
    pub xoff: DVector<f64>,
    pub a: DVector<f64>,
    pub b: f64,
    pub field: Arc<ScalarField>,
}

/// `y^T H y + a^T y + b <= 0` with `H` PSD.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub h: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: f64,
}

/// Condensed convex program `min 1/2 y^T H y + g^T y + c` subject to
/// `G y + h <= 0`, curved stage constraints and quadratic terminal constraints.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub n_vars: usize,
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub constant: f64,
    pub lin_a: DMatrix<f64>,
    pub lin_b: DVector<f64>,
    pub curved: Vec<CurvedConstraint>,
    pub quadratic: Vec<QuadraticConstraint>,
    /// Largest value among constraints that did not depend on `y`.
    pub const_violation: f64,
    pub class: ProgramClass,
    pub scenario: Scenario,
    pub x0: InitialState,
    /// `v_0` fixed by the degenerate input branch, if any.
    pub fixed_v0: Option<f64>,
    /// Maps the decision vector back to `(v_0..v_{N-1}, x_0)`.
    pub expand: (DMatrix<f64>, DVector<f64>),
    pub prediction: PredictionOperators,
}

impl ConvexProgram {
    pub fn n_constraints(&self) -> usize {
        self.lin_a.nrows() + self.curved.len() + self.quadratic.len()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hess * y)) + self.grad.dot(y) + self.constant
    }

    /// Full `(v_0..v_{N-1}[, x_0])` from the decision vector.
    pub fn expand(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.expand.0 * y + &self.expand.1
    }

    /// Value of every constraint at `y`.
    pub fn constraint_values(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.n_constraints());
        out.extend((&self.lin_a * y + &self.lin_b).iter());
        for c in &self.curved {
            let x = &c.xmap * y + &c.xoff;
            out.push(c.g_coef * c.field.value(&x) + c.a.dot(y) + c.b);
        }
        for q in &self.quadratic {
            out.push(y.dot(&(&q.h * y)) + q.a.dot(y) + q.b);
        }
        DVector::from_vec(out)
    }

    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        self.constraint_values(y)
            .iter()
            .copied()
            .fold(self.const_violation, f64::max)
    }
}

const ZERO_ROW: f64 = 1e-14;

struct Builder {
    n_vars: usize,
    lin_rows: Vec<(DVector<f64>, f64)>,
    curved: Vec<CurvedConstraint>,
    quadratic: Vec<QuadraticConstraint>,
    const_violation: f64,
    worst: FieldKind,
}

impl Builder {
    fn push_affine(&mut self, a: DVector<f64>, b: f64) {
        if a.amax() <= ZERO_ROW {
            self.const_violation = self.const_violation.max(b);
        } else {
            self.lin_rows.push((a, b));
        }
    }
}

fn field_rank(kind: FieldKind) -> u8 {
    match kind {
        FieldKind::Affine | FieldKind::Pwa => 0,
        FieldKind::Quadratic => 1,
        FieldKind::Sinusoid => 2,
    }
}

/// Builds the condensed program of one scenario.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    scenario: &Scenario,
    x0: &InitialState,
    lin: &LinearizationData,
    zsets: &[StageSet],
    terminal: &TerminalIngredients,
    costs: &Costs,
    eps_g: f64,
) -> Result<ConvexProgram> {
    let horizon = scenario.len();
    if horizon == 0 {
        return Err(Error::Precondition("empty scenario".into()));
    }
    if scenario.s() != zsets.len() {
        return Err(Error::Precondition(format!(
            "scenario over {} sets, problem has {}",
            scenario.s(),
            zsets.len()
        )));
    }
    let n = lin.dim();
    let pred = condense(lin, horizon, x0);
    let full = pred.n_vars;

    // Degenerate branch: g(x0) = 0 pins v_0 = alpha^T x0 / b0.
    let fixed_v0 = match x0 {
        InitialState::Fixed(x) => {
            if x.len() != n {
                return Err(Error::Precondition("x0 has the wrong dimension".into()));
            }
            (zsets[0].field().value(x).abs() <= eps_g).then(|| lin.alpha.dot(x) / lin.b0)
        }
        InitialState::Free => None,
    };
    let (e_mat, e_off) = match fixed_v0 {
        Some(v0) => {
            let mut e = DMatrix::zeros(full, full - 1);
            e.view_mut((1, 0), (full - 1, full - 1)).fill_with_identity();
            let mut off = DVector::zeros(full);
            off[0] = v0;
            (e, off)
        }
        None => (DMatrix::identity(full, full), DVector::zeros(full)),
    };
    let n_vars = e_mat.ncols();

    // z_k = (x_hat(k), v_k) = W_k y + w_k
    let stage_map = |k: usize| -> (DMatrix<f64>, DVector<f64>) {
        let mut w = DMatrix::zeros(n + 1, full);
        let mut off = DVector::zeros(n + 1);
        w.view_mut((0, 0), (n, full)).copy_from(&pred.maps[k].0);
        off.rows_mut(0, n).copy_from(&pred.maps[k].1);
        if k < horizon {
            w[(n, k)] = 1.0;
        }
        (&w * &e_mat, &w * &e_off + off)
    };

    let mut hess = DMatrix::zeros(n_vars, n_vars);
    let mut grad = DVector::zeros(n_vars);
    let mut constant = 0.0;
    let mut b = Builder {
        n_vars,
        lin_rows: Vec::new(),
        curved: Vec::new(),
        quadratic: Vec::new(),
        const_violation: f64::NEG_INFINITY,
        worst: FieldKind::Affine,
    };
    let mut has_quadratic = false;

    for k in 0..=horizon {
        let (w, off) = stage_map(k);
        let mut m = DMatrix::zeros(n + 1, n + 1);
        if k < horizon {
            m.view_mut((0, 0), (n, n)).copy_from(&costs.q);
            m[(n, n)] = costs.rho;
        } else {
            m.view_mut((0, 0), (n, n)).copy_from(&terminal.p);
        }
        let mw = &m * &w;
        hess += w.transpose() * &mw * 2.0;
        grad += w.transpose() * (&m * &off) * 2.0;
        constant += off.dot(&(&m * &off));

        let xw = w.rows(0, n).into_owned();
        let xo = off.rows(0, n).into_owned();
        if k == horizon {
            match &terminal.tset {
                TerminalSet::Polytope(p) => {
                    for i in 0..p.n_rows() {
                        let row = p.c().row(i).transpose();
                        b.push_affine(xw.transpose() * &row, row.dot(&xo) - p.d()[i]);
                    }
                }
                TerminalSet::Ellipsoid(e) => {
                    let s = &e.shape / e.level;
                    let sx = &s * &xw;
                    let h = xw.transpose() * &sx;
                    let a = sx.transpose() * &xo * 2.0;
                    let c0 = xo.dot(&(&s * &xo)) - 1.0;
                    if h.amax() <= ZERO_ROW {
                        b.push_affine(a, c0);
                    } else {
                        has_quadratic = true;
                        b.quadratic.push(QuadraticConstraint { h, a, b: c0 });
                    }
                }
            }
            break;
        }

        let z = &zsets[scenario.coeffs()[k] - 1];
        let x_fixed = xw.amax() <= ZERO_ROW;
        for c in &z.constraints {
            let a = w.transpose() * &c.lin;
            let b0 = c.lin.dot(&off) + c.offset;
            if c.is_affine() {
                b.push_affine(a, b0);
            } else if x_fixed {
                b.push_affine(a, b0 + c.g_coef * z.field().value(&xo));
            } else {
                let kind = z.field().kind();
                if field_rank(kind) > field_rank(b.worst) {
                    b.worst = kind;
                }
                b.curved.push(CurvedConstraint {
                    g_coef: c.g_coef,
                    xmap: xw.clone(),
                    xoff: xo.clone(),
                    a,
                    b: b0,
                    field: z.shared_field(),
                });
            }
        }
    }

    let class = match field_rank(b.worst) {
        2 => ProgramClass::Nlp,
        1 => ProgramClass::Qcqp,
        _ if has_quadratic => ProgramClass::Qcqp,
        _ => ProgramClass::Qp,
    };
    let m = b.lin_rows.len();
    let mut lin_a = DMatrix::zeros(m, b.n_vars);
    let mut lin_b = DVector::zeros(m);
    for (i, (a, c)) in b.lin_rows.into_iter().enumerate() {
        lin_a.set_row(i, &a.transpose());
        lin_b[i] = c;
    }
    Ok(ConvexProgram {
        n_vars,
        hess: (&hess + hess.transpose()) * 0.5,
        grad,
        constant,
        lin_a,
        lin_b,
        curved: b.curved,
        quadratic: b.quadratic,
        const_violation: b.const_violation,
        class,
        scenario: scenario.clone(),
        x0: x0.clone(),
        fixed_v0,
        expand: (e_mat, e_off),
        prediction: pred,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    IterLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::IterLimit => "iter_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    /// Optimal value; infinite unless the status is optimal.
    pub value: f64,
    pub v_seq: Vec<f64>,
    /// Predicted states `x_hat(0..=N)`.
    pub x_traj: Vec<DVector<f64>>,
    pub kkt_residual: f64,
    /// Phase-I optimum (largest constraint value at the best point found).
    pub phase1_violation: f64,
    pub newton_steps: usize,
    /// A curved constraint had a negative-curvature direction at some iterate.
    pub nonconvex: bool,
    /// Objective after each phase-II centering stage.
    pub barrier_path: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseOneStatus {
    Feasible,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOne {
    pub status: PhaseOneStatus,
    /// Lowest max-violation found (an upper bound on the phase-I optimum).
    pub violation: f64,
    /// Certified lower bound on the phase-I optimum.
    pub lower_bound: f64,
    pub point: DVector<f64>,
    pub newton_steps: usize,
    pub nonconvex: bool,
}

/// Constraint oracles, optionally lifted by the phase-I slack `t`.
struct Oracle<'a> {
    prog: &'a ConvexProgram,
    phase1: bool,
    /// Phase I keeps the affine rows as hard constraints instead of relaxing
    /// them by the slack, so iterates stay inside the stage regions.
    hard_affine: bool,
    nonconvex: bool,
}

struct Eval {
    vals: Vec<f64>,
    grads: Vec<DVector<f64>>,
    hess: Vec<Option<DMatrix<f64>>>,
}

impl Oracle<'_> {
    fn dim(&self) -> usize {
        self.prog.n_vars + usize::from(self.phase1)
    }

    fn split<'y>(&self, z: &'y DVector<f64>) -> (nalgebra::DVectorView<'y, f64>, f64) {
        let n = self.prog.n_vars;
        let t = if self.phase1 { z[n] } else { 0.0 };
        (z.rows(0, n), t)
    }

    fn values(&self, z: &DVector<f64>) -> Vec<f64> {
        let (y, t) = self.split(z);
        let y = y.into_owned();
        let n_aff = if self.hard_affine { self.prog.lin_a.nrows() } else { 0 };
        let mut v: Vec<f64> = self
            .prog
            .constraint_values(&y)
            .iter()
            .enumerate()
            .map(|(i, f)| if i < n_aff { *f } else { f - t })
            .collect();
        if self.phase1 {
            v.push(-1.0 - t);
        }
        v
    }

    fn eval(&mut self, z: &DVector<f64>) -> Eval {
        let p = self.prog;
        let nd = self.dim();
        let (yv, t) = self.split(z);
        let y = yv.into_owned();
        let lift = |g: DVector<f64>| -> DVector<f64> {
            if self.phase1 {
                let mut out = DVector::zeros(nd);
                out.rows_mut(0, p.n_vars).copy_from(&g);
                out[p.n_vars] = -1.0;
                out
            } else {
                g
            }
        };
        let lift_h = |h: DMatrix<f64>| -> DMatrix<f64> {
            if self.phase1 {
                let mut out = DMatrix::zeros(nd, nd);
                out.view_mut((0, 0), (p.n_vars, p.n_vars)).copy_from(&h);
                out
            } else {
                h
            }
        };
        let mut e = Eval {
            vals: Vec::with_capacity(p.n_constraints() + 1),
            grads: Vec::with_capacity(p.n_constraints() + 1),
            hess: Vec::with_capacity(p.n_constraints() + 1),
        };
        let lv = &p.lin_a * &y + &p.lin_b;
        for i in 0..p.lin_a.nrows() {
            let g = p.lin_a.row(i).transpose();
            if self.hard_affine {
                e.vals.push(lv[i]);
                let mut out = DVector::zeros(nd);
                out.rows_mut(0, p.n_vars).copy_from(&g);
                e.grads.push(out);
            } else {
                e.vals.push(lv[i] - t);
                e.grads.push(lift(g));
            }
            e.hess.push(None);
        }
        for c in &p.curved {
            let x = &c.xmap * &y + &c.xoff;
            e.vals.push(c.g_coef * c.field.value(&x) + c.a.dot(&y) + c.b - t);
            e.grads.push(lift(c.xmap.transpose() * c.field.gradient(&x) * c.g_coef + &c.a));
            let hx = c.field.hessian(&x) * c.g_coef;
            if hx.amax() > 0.0 {
                if !self.nonconvex {
                    let min_eig = hx.clone().symmetric_eigenvalues().min();
                    if min_eig < -1e-8 {
                        self.nonconvex = true;
                    }
                }
                e.hess.push(Some(lift_h(c.xmap.transpose() * hx * &c.xmap)));
            } else {
                e.hess.push(None);
            }
        }
        for q in &p.quadratic {
            e.vals.push(y.dot(&(&q.h * &y)) + q.a.dot(&y) + q.b - t);
            e.grads.push(lift(&q.h * &y * 2.0 + &q.a));
            e.hess.push(Some(lift_h(&q.h * 2.0)));
        }
        if self.phase1 {
            e.vals.push(-1.0 - t);
            let mut g = DVector::zeros(nd);
            g[p.n_vars] = -1.0;
            e.grads.push(g);
            e.hess.push(None);
        }
        e
    }
}

/// Objective in the barrier problem: phase II uses the program's quadratic,
/// phase I minimizes the slack.
struct Objective {
    hess: DMatrix<f64>,
    grad: DVector<f64>,
}

impl Objective {
    fn value_diff(&self, z: &DVector<f64>, dz: &DVector<f64>, s: f64) -> f64 {
        // f0(z + s dz) - f0(z), computed without cancellation.
        let g0 = &self.hess * z + &self.grad;
        s * g0.dot(dz) + 0.5 * s * s * dz.dot(&(&self.hess * dz))
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hess * z + &self.grad
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hess * z)) + self.grad.dot(z)
    }
}

/// Noise-level Newton steps tolerated in the final centering stage.
const NOISE_STEPS: usize = 25;

enum CenterOutcome {
    Converged,
    Stalled,
    Budget,
}

struct Engine<'a> {
    oracle: Oracle<'a>,
    obj: Objective,
    cfg: SolverConfig,
    steps: usize,
}

impl Engine<'_> {
    /// Newton centering of `f0 / mu - sum log(-f_i)` from a strictly feasible `z`.
    fn center(
        &mut self,
        z: &mut DVector<f64>,
        mu: f64,
        final_stage: bool,
        mut early_exit: impl FnMut(&DVector<f64>, &[f64]) -> bool,
    ) -> CenterOutcome {
        let nd = z.len();
        let mut noise_steps = 0;
        loop {
            if self.steps >= self.cfg.max_newton {
                return CenterOutcome::Budget;
            }
            let e = self.oracle.eval(z);
            if early_exit(z, &e.vals) {
                return CenterOutcome::Converged;
            }
            let mut grad = self.obj.gradient(z) / mu;
            let mut hess = &self.obj.hess / mu;
            for i in 0..e.vals.len() {
                let inv = -1.0 / e.vals[i];
                grad.axpy(inv, &e.grads[i], 1.0);
                hess.ger(inv * inv, &e.grads[i], &e.grads[i], 1.0);
                if let Some(h) = &e.hess[i] {
                    hess += h * inv;
                }
            }
            if final_stage && mu * grad.amax() <= 0.1 * self.cfg.kkt_tol {
                return CenterOutcome::Converged;
            }
            let Some(dz) = newton_direction(&hess, &grad) else {
                return CenterOutcome::Stalled;
            };
            let slope = grad.dot(&dz);
            let decrement = -slope;
            if decrement <= 0.0 {
                return CenterOutcome::Stalled;
            }
            if decrement * 0.5 <= if final_stage { 1e-16 } else { 1e-10 } {
                return CenterOutcome::Converged;
            }
            // Once the predicted decrease is at the rounding level of the
            // objective, accept as soon as the residual is met and give up
            // after a run of steps that only move along noise.
            if final_stage && decrement * mu <= f64::EPSILON * (1.0 + self.obj.value(z).abs()) {
                if kkt_residual(&self.obj.gradient(z), &e.vals, &e.grads, mu) <= 0.5 * self.cfg.kkt_tol {
                    return CenterOutcome::Converged;
                }
                noise_steps += 1;
                if noise_steps > NOISE_STEPS {
                    return CenterOutcome::Stalled;
                }
            } else {
                noise_steps = 0;
            }
            self.steps += 1;

            // Backtrack into the strict interior, then to sufficient decrease.
            let mut s = 1.0;
            let mut accepted = false;
            while s > 1e-20 {
                let trial = &*z + &dz * s;
                if trial == *z {
                    break;
                }
                let vals = self.oracle.values(&trial);
                if vals.iter().all(|v| *v < 0.0) {
                    let barrier: f64 = vals
                        .iter()
                        .zip(&e.vals)
                        .map(|(new, old)| -(new / old).ln())
                        .sum();
                    let diff = self.obj.value_diff(z, &dz, s) / mu + barrier;
                    if diff <= self.cfg.armijo * s * slope {
                        *z = trial;
                        accepted = true;
                        break;
                    }
                }
                s *= self.cfg.backtrack;
            }
            if !accepted {
                return CenterOutcome::Stalled;
            }
            debug_assert_eq!(z.len(), nd);
        }
    }
}

/// Constraints closer than this to active get least-squares multipliers.
const NEAR_ACTIVE: f64 = 1e-6;

/// KKT residual at a barrier point.
///
/// Barrier multipliers `mu / -f_i` lose accuracy on nearly active
/// constraints, where `f_i` is tiny and computed with cancellation, so those
/// multipliers are refitted by non-negative least squares instead. The
/// smaller of the two residuals is reported.
fn kkt_residual(grad0: &DVector<f64>, vals: &[f64], grads: &[DVector<f64>], mu: f64) -> f64 {
    let barrier = {
        let mut r = grad0.clone();
        for (f, g) in vals.iter().zip(grads) {
            r.axpy(mu / -f, g, 1.0);
        }
        r.amax().max(mu)
    };
    let active: Vec<usize> = (0..vals.len()).filter(|&i| -vals[i] <= NEAR_ACTIVE).collect();
    if active.is_empty() {
        return barrier;
    }
    let mut rhs = -grad0;
    for (f, g) in vals.iter().zip(grads) {
        if -f > NEAR_ACTIVE {
            rhs.axpy(-mu / -f, g, 1.0);
        }
    }
    let mut gmat = DMatrix::zeros(grad0.len(), active.len());
    for (c, &i) in active.iter().enumerate() {
        gmat.set_column(c, &grads[i]);
    }
    let lam = nnls(&gmat, &rhs);
    let stat = (&gmat * &lam - &rhs).amax();
    let comp = active
        .iter()
        .zip(lam.iter())
        .map(|(&i, l)| l * vals[i].abs())
        .fold(mu, f64::max);
    barrier.min(stat.max(comp))
}

/// Lawson-Hanson non-negative least squares `min ||A x - b||, x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());
    let lstsq = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut sub = DMatrix::zeros(a.nrows(), idx.len());
        for (c, &j) in idx.iter().enumerate() {
            sub.set_column(c, &a.column(j));
        }
        let z = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = z[c];
        }
        full
    };
    for _ in 0..3 * n + 3 {
        let w = a.transpose() * (b - a * &x);
        let Some(j) = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &k| w[i].total_cmp(&w[k]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let z = lstsq(&passive);
            if (0..n).all(|i| !passive[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if reg > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
        }
        if let Some(ch) = h.cholesky() {
            let dz = -ch.solve(grad);
            if dz.iter().all(|v| v.is_finite()) {
                return Some(dz);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

/// Minimizes the largest constraint value. Stops early once a point with
/// every constraint below `-1e-6` is found.
pub fn phase_one(prog: &ConvexProgram, cfg: &SolverConfig) -> PhaseOne {
    phase_one_from(prog, cfg, DVector::zeros(prog.n_vars), 0)
}

fn phase_one_from(prog: &ConvexProgram, cfg: &SolverConfig, y0: DVector<f64>, used: usize) -> PhaseOne {
    let nv = prog.n_vars;
    let m = prog.n_constraints();
    let worst_at = |y: &DVector<f64>| prog.max_violation(y);
    if prog.const_violation > cfg.feas_tol {
        return PhaseOne {
            status: PhaseOneStatus::Infeasible,
            violation: prog.const_violation,
            lower_bound: prog.const_violation,
            point: y0,
            newton_steps: used,
            nonconvex: false,
        };
    }
    if m == 0 {
        return PhaseOne {
            status: PhaseOneStatus::Feasible,
            violation: prog.const_violation,
            lower_bound: prog.const_violation,
            point: y0,
            newton_steps: used,
            nonconvex: false,
        };
    }
    let start_max = prog.constraint_values(&y0).max();
    if start_max < -1e-6 {
        return PhaseOne {
            status: PhaseOneStatus::Feasible,
            violation: worst_at(&y0),
            lower_bound: f64::NEG_INFINITY,
            point: y0,
            newton_steps: used,
            nonconvex: false,
        };
    }

    // The curved constraints are only convex inside their stage regions, so
    // look for a strictly interior point of the affine rows first and keep
    // those rows hard while the slack is driven down.
    let n_aff = prog.lin_a.nrows();
    let mut y_start = y0;
    let mut hard_affine = false;
    if n_aff > 0 {
        match affine_center(prog) {
            Some((t_aff, y)) if t_aff > cfg.feas_tol => {
                return PhaseOne {
                    status: PhaseOneStatus::Infeasible,
                    violation: worst_at(&y).max(t_aff),
                    lower_bound: t_aff,
                    point: y,
                    newton_steps: used,
                    nonconvex: false,
                };
            }
            Some((t_aff, y)) if t_aff < -1e-9 => {
                y_start = y;
                hard_affine = true;
            }
            _ => {}
        }
    }
    let vals0 = prog.constraint_values(&y_start);
    let skip = if hard_affine { n_aff } else { 0 };
    let start_max = vals0.iter().skip(skip).copied().fold(f64::NEG_INFINITY, f64::max);
    if vals0.max() < -1e-6 || (hard_affine && m == n_aff) {
        return PhaseOne {
            status: PhaseOneStatus::Feasible,
            violation: worst_at(&y_start),
            lower_bound: f64::NEG_INFINITY,
            point: y_start,
            newton_steps: used,
            nonconvex: false,
        };
    }

    let mut z = DVector::zeros(nv + 1);
    z.rows_mut(0, nv).copy_from(&y_start);
    z[nv] = start_max.max(0.0) + 1.0;
    let mut obj_grad = DVector::zeros(nv + 1);
    obj_grad[nv] = 1.0;
    let mut engine = Engine {
        oracle: Oracle {
            prog,
            phase1: true,
            hard_affine,
            nonconvex: false,
        },
        obj: Objective {
            hess: DMatrix::zeros(nv + 1, nv + 1),
            grad: obj_grad,
        },
        cfg: *cfg,
        steps: used,
    };
    let m_aug = (m + 1) as f64;
    // Start near the central path: slacks of order t balance t / mu.
    let mut mu = cfg.mu0.min(z[nv] / m_aug);
    let mut lower = f64::NEG_INFINITY;
    let mut found = false;
    let mut budget_hit = false;
    loop {
        let final_stage = m_aug * mu <= cfg.gap_tol;
        let outcome = engine.center(&mut z, mu, final_stage, |_, vals| {
            // Relaxed rows hold f_i - t; the last entry is -1 - t.
            let t = -1.0 - vals[m];
            vals[..m]
                .iter()
                .enumerate()
                .all(|(i, v)| if i < skip { *v < -1e-6 } else { v + t < -1e-6 })
        });
        let y = z.rows(0, nv).into_owned();
        let fmax = prog.constraint_values(&y).max();
        if fmax < -1e-6 {
            found = true;
            break;
        }
        if let CenterOutcome::Budget = outcome {
            budget_hit = true;
            break;
        }
        // Duality bound for the centered point: t* >= t - m mu.
        if !matches!(outcome, CenterOutcome::Stalled) {
            lower = lower.max(z[nv] - m_aug * mu);
            if lower > cfg.feas_tol {
                break;
            }
        }
        if final_stage {
            break;
        }
        mu /= cfg.mu_factor;
    }
    let y = z.rows(0, nv).into_owned();
    let violation = worst_at(&y);
    let status = if found || violation <= cfg.feas_tol && !budget_hit {
        PhaseOneStatus::Feasible
    } else if budget_hit && lower <= cfg.feas_tol {
        PhaseOneStatus::IterLimit
    } else {
        PhaseOneStatus::Infeasible
    };
    PhaseOne {
        status,
        violation,
        lower_bound: lower,
        point: y,
        newton_steps: engine.steps,
        nonconvex: engine.oracle.nonconvex,
    }
}

/// `min t` over `(y, t)` with every normalized affine row at most `t` and
/// `t >= -1`. Returns the optimal `t` and its `y`.
fn affine_center(prog: &ConvexProgram) -> Option<(f64, DVector<f64>)> {
    let nv = prog.n_vars;
    let rows = prog.lin_a.nrows();
    let mut c = DMatrix::zeros(rows + 1, nv + 1);
    let mut d = DVector::zeros(rows + 1);
    for i in 0..rows {
        let a = prog.lin_a.row(i);
        let norm = a.norm();
        if norm == 0.0 {
            // Constant rows are folded into const_violation at assembly.
            c[(i, nv)] = -1.0;
            d[i] = -prog.lin_b[i];
            continue;
        }
        c.view_mut((i, 0), (1, nv)).copy_from(&(a / norm));
        c[(i, nv)] = -1.0;
        d[i] = -prog.lin_b[i] / norm;
    }
    c[(rows, nv)] = -1.0;
    d[rows] = 1.0;
    let mut obj = DVector::zeros(nv + 1);
    obj[nv] = -1.0;
    match lp_maximize(&c, &d, &obj) {
        LpOutcome::Optimal { value, point } => Some((-value, point.rows(0, nv).into_owned())),
        _ => None,
    }
}

fn infeasible(p1: &PhaseOne, status: Status) -> Solution {
    Solution {
        status,
        value: f64::INFINITY,
        v_seq: Vec::new(),
        x_traj: Vec::new(),
        kkt_residual: f64::INFINITY,
        phase1_violation: p1.violation,
        newton_steps: p1.newton_steps,
        nonconvex: p1.nonconvex,
        barrier_path: Vec::new(),
    }
}

/// Phase I, then the barrier path down to `m mu <= gap_tol`.
pub fn solve(prog: &ConvexProgram, cfg: &SolverConfig) -> Solution {
    let p1 = phase_one(prog, cfg);
    match p1.status {
        PhaseOneStatus::IterLimit => return infeasible(&p1, Status::IterLimit),
        PhaseOneStatus::Infeasible => return infeasible(&p1, Status::Infeasible),
        PhaseOneStatus::Feasible => {}
    }
    let m = prog.n_constraints();
    let mut y = p1.point.clone();
    let strictly = m == 0 || prog.constraint_values(&y).max() < 0.0;
    if !strictly || prog.const_violation > cfg.kkt_tol {
        // Feasible only up to the tolerance: no interior to run a barrier in.
        return infeasible(&p1, Status::Infeasible);
    }

    let mut engine = Engine {
        oracle: Oracle {
            prog,
            phase1: false,
            hard_affine: false,
            nonconvex: p1.nonconvex,
        },
        obj: Objective {
            hess: prog.hess.clone(),
            grad: prog.grad.clone(),
        },
        cfg: *cfg,
        steps: p1.newton_steps,
    };

    let mut mu = cfg.mu0;
    let mut budget = false;
    let mut barrier_path = Vec::new();
    if m == 0 {
        if let Some(dy) = newton_direction(&prog.hess, &(&prog.hess * &y + &prog.grad)) {
            y += dy;
        }
        mu = 0.0;
    } else {
        loop {
            let final_stage = m as f64 * mu <= cfg.gap_tol;
            let outcome = engine.center(&mut y, mu, final_stage, |_, _| false);
            barrier_path.push(prog.objective(&y));
            if let CenterOutcome::Budget = outcome {
                budget = true;
                break;
            }
            if final_stage {
                break;
            }
            mu /= cfg.mu_factor;
        }
    }

    let vals = prog.constraint_values(&y);
    let violation = vals.iter().copied().fold(prog.const_violation, f64::max).max(0.0);
    let e = engine.oracle.eval(&y);
    let kkt = kkt_residual(&(&prog.hess * &y + &prog.grad), &e.vals, &e.grads, mu);
    let status = if budget {
        Status::IterLimit
    } else if kkt <= cfg.kkt_tol && violation <= cfg.kkt_tol {
        Status::Optimal
    } else {
        Status::IterLimit
    };
    let full = prog.expand(&y);
    let horizon = prog.scenario.len();
    let v_seq = full.rows(0, horizon).iter().copied().collect();
    let x_traj = (0..=horizon)
        .map(|k| {
            let (s, o) = &prog.prediction.maps[k];
            s * &full + o
        })
        .collect();
    Solution {
        status,
        value: if status == Status::Optimal {
            prog.objective(&y)
        } else {
            f64::INFINITY
        },
        v_seq,
        x_traj,
        kkt_residual: kkt,
        phase1_violation: p1.violation,
        newton_steps: engine.steps,
        nonconvex: engine.oracle.nonconvex,
        barrier_path,
    }
}
