//! Exact input-state linearization with a linear output `y = c^T x`.
//!
//! With `c^T A^i b = 0` for `i < n-1` and `beta = c^T A^(n-1) b != 0` the
//! output has relative degree `n` wherever `g(x) != 0`. The coordinates
//! `xi = T x` with rows `c^T A^i` then evolve in companion form, and mapping
//! them back gives `x+ = A_hat x + b_hat v` in the original coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{matrix_from_rows, matrix_to_rows};
use crate::model::{SystemSpec, EPS_G};

const COND_LIMIT: f64 = 1e12;
const RANK_RTOL: f64 = 1e-10;
const OUTPUT_RTOL: f64 = 1e-9;

/// `[b, A b, ..., A^(n-1) b]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = b.len();
    let mut m = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        m.set_column(k, &col);
        col = a * col;
    }
    m
}

fn singular_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if smax == 0.0 {
        0.0
    } else {
        smin / smax
    }
}

/// Solves `c^T [b, A b, ..., A^(n-1) b] = (0, ..., 0, beta_target)`.
pub fn compute_output_vector(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    beta_target: f64,
) -> Result<DVector<f64>> {
    if beta_target == 0.0 || !beta_target.is_finite() {
        return Err(Error::Precondition("beta_target must be nonzero".into()));
    }
    let ctrb = controllability_matrix(a, b);
    let ratio = singular_ratio(&ctrb);
    if ratio < RANK_RTOL {
        return Err(Error::Uncontrollable { ratio });
    }
    let n = b.len();
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = beta_target;
    ctrb.transpose()
        .lu()
        .solve(&rhs)
        .ok_or(Error::Uncontrollable { ratio })
}

/// Characteristic polynomial coefficients `a_0..a_{n-1}` of
/// `det(lambda I - A) = lambda^n + a_{n-1} lambda^(n-1) + ... + a_0`,
/// by the Faddeev-LeVerrier recurrence.
pub fn charpoly(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut coeffs = DVector::zeros(n);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut prev = 1.0;
    for k in 1..=n {
        m = a * &m + &eye * prev;
        let ck = -(a * &m).trace() / k as f64;
        coeffs[n - k] = ck;
        prev = ck;
    }
    coeffs
}

/// Companion matrix with ones on the superdiagonal and last row `-a`.
pub fn companion(a: &DVector<f64>) -> DMatrix<f64> {
    let n = a.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        m[(n - 1, j)] = -a[j];
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationData {
    pub c: DVector<f64>,
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b0: f64,
    pub alpha: DVector<f64>,
    pub beta: f64,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    /// Relative degree; equals the state dimension by construction.
    pub r: usize,
}

/// Builds the linearization for `spec` with output vector `c`.
///
/// `coeffs = None` uses the characteristic polynomial of `A`, which makes
/// `alpha` vanish.
pub fn build_linearization(
    spec: &SystemSpec,
    c: &DVector<f64>,
    b0: f64,
    coeffs: Option<&DVector<f64>>,
) -> Result<LinearizationData> {
    linearize_pair(spec.a(), spec.b(), c, b0, coeffs)
}

pub fn linearize_pair(
    a_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    b0: f64,
    coeffs: Option<&DVector<f64>>,
) -> Result<LinearizationData> {
    let n = b.len();
    if c.len() != n {
        return Err(Error::InvalidOutputVector(format!(
            "c has length {}, expected {n}",
            c.len()
        )));
    }
    if b0 == 0.0 || !b0.is_finite() {
        return Err(Error::Precondition("b0 must be nonzero".into()));
    }
    let a = match coeffs {
        Some(a) if a.len() != n => {
            return Err(Error::Precondition(format!(
                "expected {n} companion coefficients, got {}",
                a.len()
            )))
        }
        Some(a) => a.clone(),
        None => charpoly(a_mat),
    };

    // Markov-type parameters c^T A^i b and the transform rows c^T A^i.
    let mut t = DMatrix::zeros(n, n);
    let mut row = c.transpose();
    let mut apow_b = b.clone();
    let mut beta = 0.0;
    for i in 0..n {
        t.set_row(i, &row);
        let markov = c.dot(&apow_b);
        let scale = c.norm() * apow_b.norm();
        if i + 1 < n {
            if markov.abs() > OUTPUT_RTOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidOutputVector(format!(
                    "c^T A^{i} b = {markov:e} must vanish"
                )));
            }
        } else {
            if markov.abs() <= OUTPUT_RTOL * scale || markov == 0.0 {
                return Err(Error::InvalidOutputVector(format!(
                    "beta = c^T A^{i} b = {markov:e} must be nonzero"
                )));
            }
            beta = markov;
        }
        row = &row * a_mat;
        apow_b = a_mat * apow_b;
    }
    // After the loop `row` is c^T A^n.

    let sv = t.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::IllConditioned { cond });
    }
    let t_inv = t
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::IllConditioned { cond })?;

    let mut alpha = row.transpose();
    for i in 0..n {
        alpha += t.row(i).transpose() * a[i];
    }

    let a_tilde = companion(&a);
    let mut b_tilde = DVector::zeros(n);
    b_tilde[n - 1] = b0;
    let a_hat = &t_inv * a_tilde * &t;
    let b_hat = &t_inv * b_tilde;

    Ok(LinearizationData {
        c: c.clone(),
        t,
        t_inv,
        a,
        b0,
        alpha,
        beta,
        a_hat,
        b_hat,
        r: n,
    })
}

impl LinearizationData {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `v = (beta g(x) u + alpha^T x) / b0`, defined for every `x`.
    pub fn v_of_u(&self, spec: &SystemSpec, x: &DVector<f64>, u: f64) -> f64 {
        (self.beta * spec.g().value(x) * u + self.alpha.dot(x)) / self.b0
    }

    /// Linearizing feedback `(b0 v - alpha^T x) / (beta g(x))`, or 0 where
    /// `|g(x)| <= EPS_G`.
    pub fn u_of_v(&self, spec: &SystemSpec, x: &DVector<f64>, v: f64) -> f64 {
        self.u_of_v_eps(spec, x, v, EPS_G)
    }

    pub fn u_of_v_eps(&self, spec: &SystemSpec, x: &DVector<f64>, v: f64, eps_g: f64) -> f64 {
        let gx = spec.g().value(x);
        if gx.abs() <= eps_g {
            0.0
        } else {
            (self.b0 * v - self.alpha.dot(x)) / (self.beta * gx)
        }
    }

    /// `A_hat x + b_hat v`
    pub fn predict(&self, x: &DVector<f64>, v: f64) -> DVector<f64> {
        &self.a_hat * x + &self.b_hat * v
    }

    pub fn to_file(&self) -> LinearizationFile {
        LinearizationFile {
            c: self.c.as_slice().to_vec(),
            t: matrix_to_rows(&self.t),
            a: self.a.as_slice().to_vec(),
            b0: self.b0,
            alpha: self.alpha.as_slice().to_vec(),
            beta: self.beta,
            a_hat: matrix_to_rows(&self.a_hat),
            b_hat: self.b_hat.as_slice().to_vec(),
        }
    }
}

/// JSON form printed by the `linearize` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinearizationFile {
    pub c: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub b0: f64,
    pub alpha: Vec<f64>,
    pub beta: f64,
    #[serde(rename = "A_hat")]
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<f64>,
}

impl LinearizationFile {
    /// Rebuilds the linearization for `spec` from the stored `c`, `b0` and
    /// `a`, and checks the derived fields against the stored ones.
    pub fn to_linearization(&self, spec: &SystemSpec) -> Result<LinearizationData> {
        let c = DVector::from_vec(self.c.clone());
        let a = DVector::from_vec(self.a.clone());
        let lin = build_linearization(spec, &c, self.b0, Some(&a))?;
        let stored_a_hat = matrix_from_rows(&self.a_hat, "A_hat")?;
        let stored_b_hat = DVector::from_vec(self.b_hat.clone());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
        let consistent = close(lin.beta, self.beta)
            && stored_a_hat.shape() == lin.a_hat.shape()
            && stored_a_hat.iter().zip(lin.a_hat.iter()).all(|(x, y)| close(*x, *y))
            && stored_b_hat.len() == lin.b_hat.len()
            && stored_b_hat.iter().zip(lin.b_hat.iter()).all(|(x, y)| close(*x, *y));
        if !consistent {
            return Err(Error::Schema(
                "linearization file does not match the system it is used with".into(),
            ));
        }
        Ok(lin)
    }
}
