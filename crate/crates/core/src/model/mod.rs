//! The plant class `f(x, u) = A x + g(x) b u`, its region decomposition and
//! the sampling validator for the structural assumptions.

mod field;
mod polytope;
mod validate;

use nalgebra::{DMatrix, DVector};

pub use field::{FieldKind, PwaPiece, ScalarField};
pub use polytope::{lp_maximize, LpOutcome, Polytope};
pub use validate::{validate_assumption1, RegionStats, ValidationReport, Violation, ViolationKind};

use crate::error::{Error, Result};

/// Absolute tolerance below which `g(x)` counts as zero.
pub const EPS_G: f64 = 1e-9;

/// Curvature/sign class of `g` on a region: `Pos` is non-negative and
/// concave, `Neg` is non-positive and convex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn from_i32(s: i32) -> Result<Self> {
        match s {
            1 => Ok(Sign::Pos),
            -1 => Ok(Sign::Neg),
            other => Err(Error::Schema(format!("region sign must be 1 or -1, got {other}"))),
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v >= 0.0 {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn as_i32(self) -> i32 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub set: Polytope,
    pub sign: Sign,
}

/// Plant description. Region indices are 1-based in every public API.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: ScalarField,
    regions: Vec<Region>,
    u_lo: f64,
    u_hi: f64,
    domain: Option<Polytope>,
}

impl SystemSpec {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: ScalarField,
        regions: Vec<Region>,
        u_lo: f64,
        u_hi: f64,
    ) -> Result<Self> {
        let n = b.len();
        if n == 0 || a.nrows() != n || a.ncols() != n {
            return Err(Error::Schema(format!(
                "A must be {n}x{n}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if g.dim() != n {
            return Err(Error::Schema(format!("g has dimension {}, expected {n}", g.dim())));
        }
        if regions.is_empty() {
            return Err(Error::Schema("at least one region is required".into()));
        }
        for (i, r) in regions.iter().enumerate() {
            if r.set.dim() != n {
                return Err(Error::Schema(format!("region {} has wrong dimension", i + 1)));
            }
            if r.set.is_empty() {
                return Err(Error::RegionEmpty { index: i + 1 });
            }
        }
        if !(u_lo < 0.0 && 0.0 < u_hi) {
            return Err(Error::Schema(format!(
                "input bounds must satisfy u_lo < 0 < u_hi, got [{u_lo}, {u_hi}]"
            )));
        }
        Ok(Self {
            a,
            b,
            g,
            regions,
            u_lo,
            u_hi,
            domain: None,
        })
    }

    /// Attaches an explicit state constraint set used for coverage checks and
    /// grid bounds.
    pub fn with_domain(mut self, domain: Polytope) -> Result<Self> {
        if domain.dim() != self.dim() {
            return Err(Error::Schema("domain has wrong dimension".into()));
        }
        self.domain = Some(domain);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn g(&self) -> &ScalarField {
        &self.g
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Region `i` (1-based).
    pub fn region(&self, i: usize) -> &Region {
        &self.regions[i - 1]
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn u_bounds(&self) -> (f64, f64) {
        (self.u_lo, self.u_hi)
    }

    pub fn domain(&self) -> Option<&Polytope> {
        self.domain.as_ref()
    }

    /// `A x + g(x) b u`
    pub fn dynamics_step(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a * x + &self.b * (self.g.value(x) * u)
    }

    /// Every 1-based region index whose polytope contains `x` within `tol`.
    pub fn region_membership(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.set.contains(x, tol))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn in_state_set(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.regions.iter().any(|r| r.set.contains(x, tol))
    }

    /// Smallest constraint violation over the regions; non-positive inside `X`.
    pub fn state_violation(&self, x: &DVector<f64>) -> f64 {
        self.regions
            .iter()
            .map(|r| r.set.max_violation(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Bounding box of the state set (the domain if given, else the union of
    /// the regions).
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some(dom) = &self.domain {
            return dom
                .bounding_box()
                .ok_or_else(|| Error::Precondition("state domain is unbounded".into()));
        }
        let n = self.dim();
        let mut lo = DVector::from_element(n, f64::INFINITY);
        let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
        for (i, r) in self.regions.iter().enumerate() {
            let (l, h) = r.set.bounding_box().ok_or_else(|| {
                Error::Precondition(format!("region {} is unbounded", i + 1))
            })?;
            lo = lo.inf(&l);
            hi = hi.sup(&h);
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dynamics_step_example_two_origin() {
        let spec = examples::ex2();
        let x = spec.dynamics_step(&DVector::zeros(2), 1.0);
        assert_abs_diff_eq!(x[0], 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.20, epsilon = 1e-15);
    }

    #[test]
    fn dynamics_step_zero_input_is_drift() {
        let spec = examples::ex2();
        let x = spec.dynamics_step(&DVector::from_vec(vec![1.0, 0.0]), 0.0);
        assert_eq!(x, spec.a().column(0).into_owned());
    }

    #[test]
    fn dynamics_step_constant_gain() {
        let spec = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DVector::from_vec(vec![0.3, 0.7]),
            ScalarField::constant(2, 1.0),
            vec![Region {
                set: Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
                sign: Sign::Pos,
            }],
            -2.0,
            1.5,
        )
        .unwrap();
        let x = spec.dynamics_step(&DVector::zeros(2), 1.5);
        assert_eq!(x, spec.b() * 1.5);
    }

    #[test]
    fn membership_on_example_two() {
        let spec = examples::ex2();
        assert_eq!(spec.region_membership(&DVector::zeros(2), 1e-9), vec![1]);
        assert_eq!(spec.region_membership(&DVector::from_vec(vec![2.0, -2.0]), 1e-9), vec![3]);
        let facet = DVector::from_vec(vec![2.0 / 3.0, -2.0 / 3.0]);
        assert_eq!(spec.region_membership(&facet, 1e-9), vec![1, 3]);
        assert!(spec.region_membership(&DVector::from_vec(vec![2.5, 0.0]), 1e-9).is_empty());
    }

    #[test]
    fn bad_input_bounds_rejected() {
        let r = SystemSpec::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            ScalarField::constant(1, 1.0),
            vec![Region {
                set: Polytope::from_box(&[-1.0], &[1.0]).unwrap(),
                sign: Sign::Pos,
            }],
            0.5,
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn empty_region_rejected() {
        let empty = Polytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        let r = SystemSpec::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            ScalarField::constant(1, 1.0),
            vec![
                Region {
                    set: Polytope::from_box(&[-1.0], &[1.0]).unwrap(),
                    sign: Sign::Pos,
                },
                Region {
                    set: empty,
                    sign: Sign::Pos,
                },
            ],
            -1.0,
            1.0,
        );
        assert!(matches!(r, Err(Error::RegionEmpty { index: 2 })));
    }
}
