//! Convex stage sets `Z_i` in the joint `(x, v)` space.
//!
//! On region `X_i` the admissible artificial inputs are
//! `b0 v - alpha^T x in U_i(x)` with `U_i(x)` the interval spanned by
//! `beta g(x) u_lo` and `beta g(x) u_hi`. Because `beta g` has a fixed sign
//! and matching curvature on `X_i`, both bounds are convex constraints.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linearize::LinearizationData;
use crate::model::{FieldKind, Polytope, ScalarField, Sign, SystemSpec, EPS_G};
use crate::sampling::Halton;

/// Default slack for stage-set membership.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

const SIGN_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintClass {
    Affine,
    Quadratic,
    Smooth,
}

impl ConstraintClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintClass::Affine => "affine",
            ConstraintClass::Quadratic => "quadratic",
            ConstraintClass::Smooth => "smooth",
        }
    }
}

/// `g_coef * g(x) + lin^T (x, v) + offset <= 0`
#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraint {
    pub g_coef: f64,
    pub lin: DVector<f64>,
    pub offset: f64,
}

impl StageConstraint {
    fn affine(lin: DVector<f64>, offset: f64) -> Self {
        Self {
            g_coef: 0.0,
            lin,
            offset,
        }
    }

    pub fn is_affine(&self) -> bool {
        self.g_coef == 0.0
    }

    pub fn value(&self, g: &ScalarField, x: &DVector<f64>, v: f64) -> f64 {
        let n = x.len();
        let mut s = self.lin.rows(0, n).dot(x) + self.lin[n] * v + self.offset;
        if !self.is_affine() {
            s += self.g_coef * g.value(x);
        }
        s
    }

    /// Gradient in `(x, v)`.
    pub fn gradient(&self, g: &ScalarField, x: &DVector<f64>) -> DVector<f64> {
        let mut grad = self.lin.clone();
        if !self.is_affine() {
            let n = x.len();
            let gg = g.gradient(x) * self.g_coef;
            grad.rows_mut(0, n).add_assign(&gg);
        }
        grad
    }

    /// Hessian of the `x` block; the `v` row and column are always zero.
    pub fn hessian_x(&self, g: &ScalarField, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (!self.is_affine()).then(|| g.hessian(x) * self.g_coef)
    }
}

trait AddAssignExt {
    fn add_assign(&mut self, other: &DVector<f64>);
}

impl AddAssignExt for nalgebra::DVectorViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DVector<f64>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageSet {
    /// 1-based region index.
    pub index: usize,
    pub region: Polytope,
    pub sign_beta_g: Sign,
    pub class: ConstraintClass,
    /// Region rows first, then the input-bound constraints.
    pub constraints: Vec<StageConstraint>,
    pub n_region_rows: usize,
    field: Arc<ScalarField>,
    beta: f64,
    u_lo: f64,
    u_hi: f64,
}

impl StageSet {
    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn shared_field(&self) -> Arc<ScalarField> {
        Arc::clone(&self.field)
    }

    /// `U_i(x)`: the admissible interval for `b0 v - alpha^T x`.
    pub fn input_interval(&self, x: &DVector<f64>) -> (f64, f64) {
        let bg = self.beta * self.field.value(x);
        match self.sign_beta_g {
            Sign::Pos => (bg * self.u_lo, bg * self.u_hi),
            Sign::Neg => (bg * self.u_hi, bg * self.u_lo),
        }
    }

    /// Largest constraint value at `(x, v)`.
    pub fn max_violation(&self, x: &DVector<f64>, v: f64) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(&self.field, x, v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, v: f64, tol: f64) -> bool {
        self.max_violation(x, v) <= tol
    }

    /// Stacked rows `H z <= h` when every constraint is affine.
    pub fn affine_rows(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        if self.class != ConstraintClass::Affine {
            return None;
        }
        let m = self.constraints.len();
        let n1 = self.dim() + 1;
        let mut h = DMatrix::zeros(m, n1);
        let mut rhs = DVector::zeros(m);
        for (i, c) in self.constraints.iter().enumerate() {
            h.set_row(i, &c.lin.transpose());
            rhs[i] = -c.offset;
        }
        Some((h, rhs))
    }

    /// Input-bound constraints only (without the region rows).
    pub fn input_constraints(&self) -> &[StageConstraint] {
        &self.constraints[self.n_region_rows..]
    }
}

fn sign_check(
    spec: &SystemSpec,
    index: usize,
    beta: f64,
    eps_g: f64,
) -> Result<()> {
    let region = &spec.region(index).set;
    let Some((lo, hi)) = region.bounding_box() else {
        return Err(Error::Precondition(format!("region {index} is unbounded")));
    };
    let mut h = Halton::new(spec.dim(), 0xb7e1 + index as u64);
    let mut pos: Option<DVector<f64>> = None;
    let mut neg: Option<DVector<f64>> = None;
    let mut accepted = 0;
    let mut tries = 0;
    while accepted < SIGN_SAMPLES && tries < 64 * SIGN_SAMPLES {
        tries += 1;
        let x = h.next_in_box(&lo, &hi);
        if region.max_violation(&x) >= -1e-9 {
            continue;
        }
        accepted += 1;
        let bg = beta * spec.g().value(&x);
        if bg > eps_g && pos.is_none() {
            pos = Some(x);
        } else if bg < -eps_g && neg.is_none() {
            neg = Some(x);
        }
        if let (Some(p), Some(n)) = (&pos, &neg) {
            return Err(Error::SignAmbiguous {
                index,
                positive: p.as_slice().to_vec(),
                negative: n.as_slice().to_vec(),
            });
        }
    }
    Ok(())
}

/// Builds one stage set per region.
pub fn build_stage_sets(spec: &SystemSpec, lin: &LinearizationData) -> Result<Vec<StageSet>> {
    build_stage_sets_eps(spec, lin, EPS_G)
}

pub fn build_stage_sets_eps(
    spec: &SystemSpec,
    lin: &LinearizationData,
    eps_g: f64,
) -> Result<Vec<StageSet>> {
    let n = spec.dim();
    if lin.dim() != n {
        return Err(Error::Precondition("linearization dimension differs from system".into()));
    }
    let field = Arc::new(spec.g().clone());
    let (u_lo, u_hi) = spec.u_bounds();
    let beta = lin.beta;

    let mut lin_lo = DVector::zeros(n + 1);
    lin_lo.rows_mut(0, n).copy_from(&lin.alpha);
    lin_lo[n] = -lin.b0;
    let lin_hi = -&lin_lo;

    let mut sets = Vec::with_capacity(spec.n_regions());
    for (idx, region) in spec.regions().iter().enumerate() {
        let index = idx + 1;
        sign_check(spec, index, beta, eps_g)?;
        let sign_beta_g = if beta > 0.0 { region.sign } else { region.sign.flip() };
        // Lower bound:  coef_lo g - b0 v + alpha^T x <= 0
        // Upper bound:  coef_hi g + b0 v - alpha^T x <= 0
        let (coef_lo, coef_hi) = match sign_beta_g {
            Sign::Pos => (beta * u_lo, -beta * u_hi),
            Sign::Neg => (beta * u_hi, -beta * u_lo),
        };
        let curved = [
            StageConstraint {
                g_coef: coef_lo,
                lin: lin_lo.clone(),
                offset: 0.0,
            },
            StageConstraint {
                g_coef: coef_hi,
                lin: lin_hi.clone(),
                offset: 0.0,
            },
        ];

        let mut constraints: Vec<StageConstraint> = region
            .set
            .c()
            .row_iter()
            .zip(region.set.d().iter())
            .map(|(row, &d)| {
                let mut l = DVector::zeros(n + 1);
                l.rows_mut(0, n).copy_from(&row.transpose());
                StageConstraint::affine(l, -d)
            })
            .collect();
        let n_region_rows = constraints.len();

        match spec.g() {
            ScalarField::Affine { w, d } => {
                for c in curved {
                    let mut l = c.lin.clone();
                    for k in 0..n {
                        l[k] += c.g_coef * w[k];
                    }
                    constraints.push(StageConstraint::affine(l, c.offset + c.g_coef * d));
                }
            }
            ScalarField::Pwa { pieces } => {
                // With the right curvature on X_i, c * g equals the max of
                // c * (w_p^T x + d_p) over the pieces meeting X_i.
                let active: Vec<_> = pieces
                    .iter()
                    .filter(|p| {
                        region
                            .set
                            .intersect(&p.domain)
                            .chebyshev_ball()
                            .is_some_and(|(_, r)| r > 1e-9)
                    })
                    .collect();
                if active.is_empty() {
                    return Err(Error::Precondition(format!(
                        "no piece of g covers region {index}"
                    )));
                }
                for c in curved {
                    for p in &active {
                        let mut l = c.lin.clone();
                        for k in 0..n {
                            l[k] += c.g_coef * p.w[k];
                        }
                        constraints.push(StageConstraint::affine(l, c.offset + c.g_coef * p.d));
                    }
                }
            }
            ScalarField::Quadratic { .. } | ScalarField::Sinusoid { .. } => {
                constraints.extend(curved);
            }
        }

        let class = if constraints.iter().all(StageConstraint::is_affine) {
            ConstraintClass::Affine
        } else if spec.g().kind() == FieldKind::Quadratic {
            ConstraintClass::Quadratic
        } else {
            ConstraintClass::Smooth
        };

        sets.push(StageSet {
            index,
            region: region.set.clone(),
            sign_beta_g,
            class,
            constraints,
            n_region_rows,
            field: Arc::clone(&field),
            beta,
            u_lo,
            u_hi,
        });
    }
    Ok(sets)
}

/// Every 1-based index `i` with `(x, v)` in `Z_i` within `tol`.
pub fn stage_membership(zsets: &[StageSet], x: &DVector<f64>, v: f64, tol: f64) -> Vec<usize> {
    zsets
        .iter()
        .filter(|z| z.contains(x, v, tol))
        .map(|z| z.index)
        .collect()
}

/// Maps an admissible `(x, u)` to `(x, v)`; the image always lies in some `Z_i`.
pub fn forward_input_map(
    spec: &SystemSpec,
    lin: &LinearizationData,
    x: &DVector<f64>,
    u: f64,
) -> Result<(DVector<f64>, f64)> {
    let (u_lo, u_hi) = spec.u_bounds();
    if !spec.in_state_set(x, 1e-12) {
        return Err(Error::Precondition("x is outside the state set".into()));
    }
    if !(u_lo..=u_hi).contains(&u) {
        return Err(Error::Precondition(format!("u = {u} is outside [{u_lo}, {u_hi}]")));
    }
    Ok((x.clone(), lin.v_of_u(spec, x, u)))
}
