use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of a linear program over a polytope.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: DVector<f64> },
    Infeasible,
    Unbounded,
}

/// Half-space representation `{x | C x <= d}` with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    c: DMatrix<f64>,
    d: DVector<f64>,
}

impl Polytope {
    /// Builds the polytope and normalizes every row to unit Euclidean norm.
    ///
    /// Zero rows are dropped when they are trivially satisfied and rejected
    /// otherwise.
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if c.nrows() != d.len() {
            return Err(Error::Schema(format!(
                "polytope has {} rows but {} offsets",
                c.nrows(),
                d.len()
            )));
        }
        if c.ncols() == 0 {
            return Err(Error::Schema("polytope has zero dimension".into()));
        }
        let n = c.ncols();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (i, row) in c.row_iter().enumerate() {
            let norm = row.norm();
            if !norm.is_finite() || !d[i].is_finite() {
                return Err(Error::Schema("polytope entries must be finite".into()));
            }
            if norm < 1e-300 {
                if d[i] < 0.0 {
                    return Err(Error::Schema(format!("row {i} is 0 <= {} (empty)", d[i])));
                }
                continue;
            }
            rows.extend(row.iter().map(|v| v / norm));
            rhs.push(d[i] / norm);
        }
        let m = rhs.len();
        Ok(Self {
            c: DMatrix::from_row_slice(m, n, &rows),
            d: DVector::from_vec(rhs),
        })
    }

    /// Axis-aligned box `lo <= x <= hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let n = lo.len();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut d = DVector::zeros(2 * n);
        for i in 0..n {
            c[(2 * i, i)] = 1.0;
            d[2 * i] = hi[i];
            c[(2 * i + 1, i)] = -1.0;
            d[2 * i + 1] = -lo[i];
        }
        Self::new(c, d)
    }

    /// The whole space, represented with no rows.
    pub fn universe(dim: usize) -> Self {
        Self {
            c: DMatrix::zeros(0, dim),
            d: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// `max_i (C x - d)_i`, or `-inf` for the universe.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let r = &self.c * x - &self.d;
        r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    pub fn intersect(&self, other: &Polytope) -> Polytope {
        assert_eq!(self.dim(), other.dim());
        let n = self.dim();
        let m = self.n_rows() + other.n_rows();
        let mut c = DMatrix::zeros(m, n);
        let mut d = DVector::zeros(m);
        c.rows_mut(0, self.n_rows()).copy_from(&self.c);
        c.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.c);
        d.rows_mut(0, self.n_rows()).copy_from(&self.d);
        d.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.d);
        Polytope { c, d }
    }

    /// Appends rows that are already unit-normalized.
    /// Maximizes `dir^T x` over the polytope.
    pub fn maximize(&self, dir: &DVector<f64>) -> LpOutcome {
        lp_maximize(&self.c, &self.d, dir)
    }

    /// Center and radius of the largest inscribed ball (radius capped at 1e6).
    /// Returns `None` when the polytope is empty.
    pub fn chebyshev_ball(&self) -> Option<(DVector<f64>, f64)> {
        let n = self.dim();
        let m = self.n_rows();
        // Rows are unit-norm, so the ball constraint is C x + r <= d.
        let mut c = DMatrix::zeros(m + 1, n + 1);
        let mut d = DVector::zeros(m + 1);
        c.view_mut((0, 0), (m, n)).copy_from(&self.c);
        for i in 0..m {
            c[(i, n)] = 1.0;
            d[i] = self.d[i];
        }
        c[(m, n)] = 1.0;
        d[m] = 1e6;
        let mut obj = DVector::zeros(n + 1);
        obj[n] = 1.0;
        match lp_maximize(&c, &d, &obj) {
            LpOutcome::Optimal { value, point } if value >= 0.0 => {
                Some((point.rows(0, n).into_owned(), value))
            }
            LpOutcome::Optimal { value, point } => {
                // Feasible only with negative radius: empty unless the radius
                // is within LP round-off of zero.
                (value > -1e-12).then(|| (point.rows(0, n).into_owned(), 0.0))
            }
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chebyshev_ball().is_none()
    }

    /// Tight axis-aligned bounds, or `None` if empty or unbounded.
    pub fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            match self.maximize(&e) {
                LpOutcome::Optimal { value, .. } => hi[i] = value,
                _ => return None,
            }
            e[i] = -1.0;
            match self.maximize(&e) {
                LpOutcome::Optimal { value, .. } => lo[i] = -value,
                _ => return None,
            }
        }
        Some((lo, hi))
    }

    /// Largest `t >= 0` with `t * dir` inside, assuming the origin is inside.
    /// `None` if the ray is unbounded.
    pub fn ray_exit(&self, dir: &DVector<f64>) -> Option<f64> {
        let cd = &self.c * dir;
        let mut t = f64::INFINITY;
        for i in 0..self.n_rows() {
            if cd[i] > 1e-15 {
                t = t.min(self.d[i] / cd[i]);
            }
        }
        t.is_finite().then_some(t.max(0.0))
    }
}

/// `max obj^T x  s.t.  C x <= d`, `x` free.
pub fn lp_maximize(c: &DMatrix<f64>, d: &DVector<f64>, obj: &DVector<f64>) -> LpOutcome {
    let n = c.ncols();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    // minilp reports free variables that appear nowhere as unbounded.
    let vars: Vec<_> = (0..n)
        .map(|j| {
            let unused = obj[j] == 0.0 && c.column(j).iter().all(|v| *v == 0.0);
            let bounds = if unused { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
            problem.add_var(obj[j], bounds)
        })
        .collect();
    for i in 0..c.nrows() {
        let expr: Vec<_> = (0..n)
            .filter(|&j| c[(i, j)] != 0.0)
            .map(|j| (vars[j], c[(i, j)]))
            .collect();
        if expr.is_empty() {
            if d[i] < 0.0 {
                return LpOutcome::Infeasible;
            }
            continue;
        }
        problem.add_constraint(expr.as_slice(), ComparisonOp::Le, d[i]);
    }
    match problem.solve() {
        Ok(sol) => LpOutcome::Optimal {
            value: sol.objective(),
            point: DVector::from_iterator(n, vars.iter().map(|v| *sol.var_value(*v))),
        },
        Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
        Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rows_are_normalized() {
        let p = Polytope::new(
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            DVector::from_vec(vec![10.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(p.c()[(0, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn box_chebyshev_and_bounds() {
        let p = Polytope::from_box(&[-1.0, -2.0], &[1.0, 2.0]).unwrap();
        let (center, r) = p.chebyshev_ball().unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(center[0], 0.0, epsilon = 1e-9);
        let (lo, hi) = p.bounding_box().unwrap();
        assert_abs_diff_eq!(lo[1], -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hi[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_polytope_detected() {
        let p = Polytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn lp_unbounded() {
        let p = Polytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert_eq!(p.maximize(&DVector::from_vec(vec![0.0, 1.0])), LpOutcome::Unbounded);
    }

    #[test]
    fn ray_exit_of_box() {
        let p = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let t = p.ray_exit(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-15);
    }
}
