//! Terminal cost and terminal set for the reformulated problem.
//!
//! The terminal cost is `x^T P x` with `P` from the discrete Riccati
//! equation of `(A_hat, b_hat, Q, rho)`. The terminal set is either the
//! maximal admissible set of the LQR loop (affine `Z_1`) or an invariant
//! sublevel set of `P` otherwise.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::config::TerminalKind;
use crate::error::{Error, Result};
use crate::model::{lp_maximize, LpOutcome, Polytope};
use crate::sampling::{unit_directions, Halton};
use crate::stagesets::{ConstraintClass, StageSet};

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 100_000;
const MAS_TOL: f64 = 1e-9;
const MAS_MAX_STEPS: usize = 500;
const DEDUP_COS: f64 = 1.0 - 1e-12;
const LEVEL_SAMPLES: usize = 10_000;
const LEVEL_RTOL: f64 = 1e-6;
const LEVEL_SHRINK: f64 = 1.0 - 1e-5;
const LEVEL_MIN: f64 = 1e-12;
const LEVEL_MAX: f64 = 1e12;
const AXIOM_TOL: f64 = 1e-8;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn riccati_map(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, rho: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pb = p * b;
    let s = rho + b.dot(&pb);
    let inner = p - &pb * pb.transpose() / s;
    symmetrize(&(q + a.transpose() * inner * a))
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration from `P = Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || q.shape() != (n, n) {
        return Err(Error::Precondition("DARE data dimensions differ".into()));
    }
    if rho.is_nan() || rho <= 0.0 {
        return Err(Error::Precondition("rho must be positive".into()));
    }
    let mut p = symmetrize(q);
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_map(a, b, q, rho, &p);
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let diff = (&next - &p).amax();
        p = next;
        if diff < DARE_TOL {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence {
        iterations: DARE_MAX_ITER,
    })
}

/// `||A^T (P - P b (rho + b^T P b)^-1 b^T P) A - P + Q||_inf`
pub fn dare_residual(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, rho: f64, p: &DMatrix<f64>) -> f64 {
    inf_norm(&(riccati_map(a, b, q, rho, p) - p))
}

/// `kappa = -(rho + b^T P b)^-1 b^T P A`, so that `v = kappa^T x`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DVector<f64>, rho: f64, p: &DMatrix<f64>) -> DVector<f64> {
    let pb = p * b;
    -(a.transpose() * &pb) / (rho + b.dot(&pb))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl Ellipsoid {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.shape * x))
    }

    pub fn contains(&self, x: &DVector<f64>, rtol: f64) -> bool {
        self.value(x) <= self.level * (1.0 + rtol)
    }

    /// Point on the boundary along `dir`, given `shape = L L^T`.
    fn boundary_point(l: &DMatrix<f64>, level: f64, u: &DVector<f64>) -> DVector<f64> {
        let y = l
            .transpose()
            .solve_upper_triangular(u)
            .expect("Cholesky factor is nonsingular");
        y * level.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminalSet {
    Polytope(Polytope),
    Ellipsoid(Ellipsoid),
}

impl TerminalSet {
    pub fn kind(&self) -> TerminalKind {
        match self {
            TerminalSet::Polytope(_) => TerminalKind::Polytope,
            TerminalSet::Ellipsoid(_) => TerminalKind::Ellipsoid,
        }
    }

    /// Polytope rows use an absolute slack, the ellipsoid a relative one.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            TerminalSet::Polytope(p) => p.contains(x, tol),
            TerminalSet::Ellipsoid(e) => e.contains(x, tol),
        }
    }

    /// Deterministic boundary points, one per direction.
    pub fn boundary_samples(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let dim = match self {
            TerminalSet::Polytope(p) => p.dim(),
            TerminalSet::Ellipsoid(e) => e.shape.nrows(),
        };
        let dirs = unit_directions(dim, count, seed);
        match self {
            TerminalSet::Polytope(p) => dirs
                .into_iter()
                .filter_map(|u| p.ray_exit(&u).map(|t| u * t))
                .collect(),
            TerminalSet::Ellipsoid(e) => {
                let l = Cholesky::new(e.shape.clone())
                    .expect("terminal shape is positive definite")
                    .l();
                dirs.iter()
                    .map(|u| Ellipsoid::boundary_point(&l, e.level, u))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    pub p: DMatrix<f64>,
    pub kappa: DVector<f64>,
    pub a_cl: DMatrix<f64>,
    pub tset: TerminalSet,
    /// Determination index of the maximal admissible set.
    pub k_star: Option<usize>,
}

impl TerminalIngredients {
    /// Terminal cost `x^T P x`.
    pub fn phi(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }
}

/// `Z_1` restricted to `v = kappa^T x`, as rows `H x <= h`.
fn closed_loop_rows(z1: &StageSet, kappa: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (hz, h) = z1.affine_rows().ok_or_else(|| {
        Error::Precondition("maximal admissible set needs affine stage constraints".into())
    })?;
    let n = kappa.len();
    let mut lift = DMatrix::zeros(n + 1, n);
    lift.view_mut((0, 0), (n, n)).fill_with_identity();
    lift.set_row(n, &kappa.transpose());
    Ok((hz * lift, h))
}

/// Maximal positively invariant set of `x+ = A_cl x` inside the affine
/// stage set `Z_1` under `v = kappa^T x`. Returns the set and `k*`.
pub fn maximal_admissible_set(
    a_cl: &DMatrix<f64>,
    kappa: &DVector<f64>,
    z1: &StageSet,
) -> Result<(Polytope, usize)> {
    let (hx, h) = closed_loop_rows(z1, kappa)?;
    let n = kappa.len();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut offs: Vec<f64> = Vec::new();

    // Normalized rows; zero rows are either redundant or make the set empty.
    let normalize = |r: DVector<f64>, d: f64| -> Result<Option<(DVector<f64>, f64)>> {
        let norm = r.norm();
        if norm < 1e-14 {
            if d < -MAS_TOL {
                return Err(Error::Precondition("closed-loop constraint slice is empty".into()));
            }
            return Ok(None);
        }
        Ok(Some((r / norm, d / norm)))
    };

    let mut power = DMatrix::<f64>::identity(n, n);
    for i in 0..hx.nrows() {
        if let Some((r, d)) = normalize(hx.row(i).transpose(), h[i])? {
            push_dedup(&mut rows, &mut offs, r, d);
        }
    }
    for k in 1..=MAS_MAX_STEPS {
        power = a_cl * power;
        let hk = &hx * &power;
        let mut fresh = Vec::new();
        let c = stack(&rows, n);
        let d = DVector::from_vec(offs.clone());
        for i in 0..hk.nrows() {
            let Some((r, off)) = normalize(hk.row(i).transpose(), h[i])? else {
                continue;
            };
            let redundant = match lp_maximize(&c, &d, &r) {
                LpOutcome::Optimal { value, .. } => value <= off + MAS_TOL,
                LpOutcome::Infeasible => {
                    return Err(Error::Precondition("closed-loop constraint slice is empty".into()))
                }
                LpOutcome::Unbounded => false,
            };
            if !redundant {
                fresh.push((r, off));
            }
        }
        if fresh.is_empty() {
            let poly = Polytope::new(c, d)?;
            return Ok((poly, k));
        }
        for (r, off) in fresh {
            push_dedup(&mut rows, &mut offs, r, off);
        }
    }
    Err(Error::NoFiniteDetermination {
        max_steps: MAS_MAX_STEPS,
    })
}

fn push_dedup(rows: &mut Vec<DVector<f64>>, offs: &mut Vec<f64>, r: DVector<f64>, d: f64) {
    for (existing, off) in rows.iter().zip(offs.iter_mut()) {
        if existing.dot(&r) > DEDUP_COS {
            *off = off.min(d);
            return;
        }
    }
    rows.push(r);
    offs.push(d);
}

fn stack(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    m
}

/// Largest sublevel set `{x^T P x <= c}` whose sampled boundary satisfies
/// `Z_1` under `v = kappa^T x` and is mapped into itself by `A_cl`.
pub fn ellipsoidal_terminal(
    p: &DMatrix<f64>,
    kappa: &DVector<f64>,
    a_cl: &DMatrix<f64>,
    z1: &StageSet,
) -> Result<Ellipsoid> {
    let l = Cholesky::new(symmetrize(p))
        .ok_or_else(|| Error::Precondition("terminal weight must be positive definite".into()))?
        .l();
    let n = kappa.len();
    // Unit-level boundary points; scaling by sqrt(c) gives level c.
    let unit: Vec<DVector<f64>> = unit_directions(n, LEVEL_SAMPLES, 0x7e57)
        .iter()
        .map(|u| Ellipsoid::boundary_point(&l, 1.0, u))
        .collect();

    let ok = |c: f64| {
        let s = c.sqrt();
        unit.iter().all(|x1| {
            let x = x1 * s;
            let v = kappa.dot(&x);
            if z1.max_violation(&x, v) > 0.0 {
                return false;
            }
            let next = a_cl * &x;
            next.dot(&(p * &next)) <= c * (1.0 + 1e-12)
        })
    };

    let (mut lo, mut hi);
    if ok(1.0) {
        lo = 1.0;
        hi = 2.0;
        while ok(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > LEVEL_MAX {
                return Ok(Ellipsoid {
                    shape: symmetrize(p),
                    level: lo * LEVEL_SHRINK,
                });
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        while !ok(lo) {
            hi = lo;
            lo *= 0.5;
            if lo < LEVEL_MIN {
                return Err(Error::NoPositiveLevel);
            }
        }
    }
    while (hi - lo) > LEVEL_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Ellipsoid {
        shape: symmetrize(p),
        level: lo * LEVEL_SHRINK,
    })
}

/// DARE, LQR gain and terminal set for the given stage sets.
pub fn build_terminal(
    a_hat: &DMatrix<f64>,
    b_hat: &DVector<f64>,
    q: &DMatrix<f64>,
    rho: f64,
    zsets: &[StageSet],
    kind: TerminalKind,
) -> Result<TerminalIngredients> {
    let z1 = zsets
        .first()
        .ok_or_else(|| Error::Precondition("no stage sets".into()))?;
    let p = solve_dare(a_hat, b_hat, q, rho)?;
    let kappa = lqr_gain(a_hat, b_hat, rho, &p);
    let a_cl = a_hat + b_hat * kappa.transpose();
    if spectral_radius(&a_cl) >= 1.0 {
        return Err(Error::Precondition("LQR closed loop is not Schur stable".into()));
    }
    let polytopic = match kind {
        TerminalKind::Auto => z1.class == ConstraintClass::Affine,
        TerminalKind::Polytope => true,
        TerminalKind::Ellipsoid => false,
    };
    let (tset, k_star) = if polytopic {
        let (poly, k) = maximal_admissible_set(&a_cl, &kappa, z1)?;
        (TerminalSet::Polytope(poly), Some(k))
    } else {
        (TerminalSet::Ellipsoid(ellipsoidal_terminal(&p, &kappa, &a_cl, z1)?), None)
    };
    Ok(TerminalIngredients {
        p,
        kappa,
        a_cl,
        tset,
        k_star,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomViolation {
    pub axiom: &'static str,
    pub x: Vec<f64>,
    pub slack: f64,
}

/// Worst slack per stability axiom over the sampled terminal set.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub samples: usize,
    /// Largest `Z_1` constraint value at `(x, kappa^T x)`.
    pub stage: f64,
    /// Largest terminal-set violation at `A_cl x`.
    pub invariance: f64,
    /// Largest `phi(A_cl x) - phi(x) + l(x, kappa^T x)`.
    pub decrease: f64,
    pub violations: Vec<AxiomViolation>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn terminal_violation(tset: &TerminalSet, x: &DVector<f64>) -> f64 {
    match tset {
        TerminalSet::Polytope(p) => p.max_violation(x),
        TerminalSet::Ellipsoid(e) => (e.value(x) - e.level) / e.level,
    }
}

/// Samples boundary and interior points of the terminal set and checks the
/// three stability axioms at each.
pub fn verify_terminal_axioms(
    ti: &TerminalIngredients,
    zsets: &[StageSet],
    q: &DMatrix<f64>,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> AxiomReport {
    let n = ti.kappa.len();
    let boundary = ti.tset.boundary_samples(n_samples.div_ceil(2).max(1), seed);
    let mut h = Halton::new(1, seed ^ 0x5eed);
    let mut points = boundary.clone();
    for x in boundary.iter().take(n_samples.saturating_sub(boundary.len())) {
        points.push(x * h.next_unit()[0]);
    }
    points.push(DVector::zeros(n));

    let mut report = AxiomReport {
        samples: points.len(),
        stage: f64::NEG_INFINITY,
        invariance: f64::NEG_INFINITY,
        decrease: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    let z1 = &zsets[0];
    for x in &points {
        let v = ti.kappa.dot(x);
        let stage = z1.max_violation(x, v);
        let next = &ti.a_cl * x;
        let inv = terminal_violation(&ti.tset, &next);
        let dec = ti.phi(&next) - ti.phi(x) + x.dot(&(q * x)) + rho * v * v;
        report.stage = report.stage.max(stage);
        report.invariance = report.invariance.max(inv);
        report.decrease = report.decrease.max(dec);
        for (axiom, slack, tol) in [
            ("stage", stage, AXIOM_TOL),
            ("invariance", inv, MAS_TOL),
            ("decrease", dec, AXIOM_TOL),
        ] {
            if slack > tol {
                report.violations.push(AxiomViolation {
                    axiom,
                    x: x.as_slice().to_vec(),
                    slack,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::linearize::build_linearization;
    use crate::model::{Region, ScalarField, Sign, SystemSpec};
    use crate::stagesets::build_stage_sets;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn scalar_dare_matches_quadratic_formula() {
        let p = solve_dare(&m(1, &[0.5]), &DVector::from_vec(vec![1.0]), &m(1, &[1.0]), 1.0).unwrap();
        // p^2 - 0.25 p - 1 = 0
        let expected = (0.25 + 4.0625_f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(p[(0, 0)], expected, epsilon = 1e-11);
        assert_abs_diff_eq!(expected, 1.132782, epsilon = 1e-6);
    }

    #[test]
    fn zero_weight_on_stable_system() {
        let a = m(2, &[0.5, 0.1, 0.0, 0.3]);
        let p = solve_dare(&a, &DVector::from_vec(vec![0.0, 1.0]), &DMatrix::zeros(2, 2), 1.0).unwrap();
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn example_two_riccati_residual() {
        let spec = examples::ex2();
        let lin = examples::reference_linearization(&spec);
        let q = DMatrix::identity(2, 2) * 0.05;
        let rho = crate::config::default_rho(lin.b0, lin.beta);
        let p = solve_dare(&lin.a_hat, &lin.b_hat, &q, rho).unwrap();
        assert!(dare_residual(&lin.a_hat, &lin.b_hat, &q, rho, &p) <= 1e-10);
        assert!((&p - p.transpose()).amax() <= 1e-12);
        let kappa = lqr_gain(&lin.a_hat, &lin.b_hat, rho, &p);
        let a_cl = &lin.a_hat + &lin.b_hat * kappa.transpose();
        assert!(spectral_radius(&a_cl) < 1.0 - 1e-9);
    }

    #[test]
    fn unstable_uncontrollable_pair_does_not_converge() {
        let a = m(2, &[2.0, 0.0, 0.0, 0.5]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            solve_dare(&a, &b, &DMatrix::identity(2, 2), 1.0),
            Err(Error::NoConvergence { .. })
        ));
    }

    fn box_system(g: f64) -> (SystemSpec, Vec<StageSet>) {
        let spec = SystemSpec::new(
            m(2, &[0.0, 1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            ScalarField::constant(2, g),
            vec![Region {
                set: Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
                sign: Sign::Pos,
            }],
            -1.0,
            1.0,
        )
        .unwrap();
        let lin = build_linearization(&spec, &DVector::from_vec(vec![1.0, 0.0]), 1.0, None).unwrap();
        let zsets = build_stage_sets(&spec, &lin).unwrap();
        (spec, zsets)
    }

    #[test]
    fn deadbeat_loop_stops_after_one_step() {
        let (_, zsets) = box_system(1.0);
        let kappa = DVector::zeros(2);
        let (poly, k) = maximal_admissible_set(&DMatrix::zeros(2, 2), &kappa, &zsets[0]).unwrap();
        assert_eq!(k, 1);
        assert!(poly.contains(&DVector::from_vec(vec![1.0, -1.0]), 1e-12));
        assert!(!poly.contains(&DVector::from_vec(vec![1.01, 0.0]), 1e-12));
    }

    #[test]
    fn ellipsoid_level_for_unit_box() {
        // kappa = 0 makes the v bounds |v| <= 1 inactive; x must stay in the box.
        let (_, zsets) = box_system(1.0);
        let e = ellipsoidal_terminal(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &(DMatrix::identity(2, 2) * 0.5),
            &zsets[0],
        )
        .unwrap();
        assert_abs_diff_eq!(e.level, 1.0, epsilon = 1e-4);
        assert!(e.level <= 1.0);
    }

    #[test]
    fn shrunk_weight_violates_decrease() {
        let spec = examples::ex2();
        let lin = examples::reference_linearization(&spec);
        let zsets = build_stage_sets(&spec, &lin).unwrap();
        let q = DMatrix::identity(2, 2) * 0.05;
        let rho = crate::config::default_rho(lin.b0, lin.beta);
        let ti = build_terminal(&lin.a_hat, &lin.b_hat, &q, rho, &zsets, TerminalKind::Auto).unwrap();
        assert_eq!(ti.tset.kind(), TerminalKind::Ellipsoid);
        let report = verify_terminal_axioms(&ti, &zsets, &q, rho, 2000, 3);
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.decrease.abs() <= 1e-8);

        let mut half = ti.clone();
        half.p *= 0.5;
        let report = verify_terminal_axioms(&half, &zsets, &q, rho, 2000, 3);
        assert!(report.violations.iter().any(|v| v.axiom == "decrease"));
    }

    #[test]
    fn pwa_terminal_is_polytope_inside_first_region() {
        let spec = examples::ex3();
        let lin = examples::reference_linearization(&spec);
        let zsets = build_stage_sets(&spec, &lin).unwrap();
        let q = DMatrix::identity(2, 2) * 0.05;
        let rho = crate::config::default_rho(lin.b0, lin.beta);
        let ti = build_terminal(&lin.a_hat, &lin.b_hat, &q, rho, &zsets, TerminalKind::Auto).unwrap();
        let TerminalSet::Polytope(poly) = &ti.tset else {
            panic!("expected a polytope");
        };
        let (_, r) = poly.chebyshev_ball().unwrap();
        assert!(r > 0.0);
        assert!(poly.contains(&DVector::zeros(2), -1e-9));
        for x in ti.tset.boundary_samples(200, 1) {
            assert!(spec.region(1).set.contains(&x, 1e-9));
        }
        assert!(verify_terminal_axioms(&ti, &zsets, &q, rho, 1000, 5).passed());
    }
}
