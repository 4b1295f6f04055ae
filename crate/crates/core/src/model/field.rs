use nalgebra::{DMatrix, DVector};

use super::Polytope;
use crate::error::{Error, Result};

/// One affine piece `w^T x + d` of a piecewise-affine field, valid on `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwaPiece {
    pub domain: Polytope,
    pub w: DVector<f64>,
    pub d: f64,
}

impl PwaPiece {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.w.dot(x) + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldKind {
    Affine,
    Quadratic,
    Sinusoid,
    Pwa,
}

/// The scalar input gain `g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Affine {
        w: DVector<f64>,
        d: f64,
    },
    /// `0.5 x^T H x + w^T x + d`
    Quadratic {
        h: DMatrix<f64>,
        w: DVector<f64>,
        d: f64,
    },
    /// `amp * cos(freq * dir^T x + phase)`
    Sinusoid {
        amp: f64,
        freq: f64,
        dir: DVector<f64>,
        phase: f64,
    },
    Pwa {
        pieces: Vec<PwaPiece>,
    },
}

impl ScalarField {
    pub fn constant(dim: usize, value: f64) -> Self {
        ScalarField::Affine {
            w: DVector::zeros(dim),
            d: value,
        }
    }

    pub fn quadratic(h: DMatrix<f64>, w: DVector<f64>, d: f64) -> Result<Self> {
        if !h.is_square() || h.nrows() != w.len() {
            return Err(Error::Schema("quadratic field dimensions disagree".into()));
        }
        if (&h - h.transpose()).amax() != 0.0 {
            return Err(Error::Schema("quadratic field H must be symmetric".into()));
        }
        Ok(ScalarField::Quadratic { h, w, d })
    }

    pub fn pwa(pieces: Vec<PwaPiece>) -> Result<Self> {
        let Some(first) = pieces.first() else {
            return Err(Error::Schema("piecewise-affine field needs at least one piece".into()));
        };
        let n = first.w.len();
        if pieces.iter().any(|p| p.w.len() != n || p.domain.dim() != n) {
            return Err(Error::Schema("piecewise-affine pieces disagree in dimension".into()));
        }
        Ok(ScalarField::Pwa { pieces })
    }

    pub fn kind(&self) -> FieldKind {
        match self {
            ScalarField::Affine { .. } => FieldKind::Affine,
            ScalarField::Quadratic { .. } => FieldKind::Quadratic,
            ScalarField::Sinusoid { .. } => FieldKind::Sinusoid,
            ScalarField::Pwa { .. } => FieldKind::Pwa,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Affine { w, .. } | ScalarField::Quadratic { w, .. } => w.len(),
            ScalarField::Sinusoid { dir, .. } => dir.len(),
            ScalarField::Pwa { pieces } => pieces[0].w.len(),
        }
    }

    /// Index of the piece that defines `g` at `x`: the first piece containing
    /// `x`, otherwise the one with the smallest containment violation.
    pub fn active_piece(&self, x: &DVector<f64>) -> Option<usize> {
        let ScalarField::Pwa { pieces } = self else {
            return None;
        };
        let mut best = (0, f64::INFINITY);
        for (k, p) in pieces.iter().enumerate() {
            let viol = p.domain.max_violation(x);
            if viol <= 1e-12 {
                return Some(k);
            }
            if viol < best.1 {
                best = (k, viol);
            }
        }
        Some(best.0)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            ScalarField::Affine { w, d } => w.dot(x) + d,
            ScalarField::Quadratic { h, w, d } => 0.5 * x.dot(&(h * x)) + w.dot(x) + d,
            ScalarField::Sinusoid {
                amp,
                freq,
                dir,
                phase,
            } => amp * (freq * dir.dot(x) + phase).cos(),
            ScalarField::Pwa { pieces } => {
                let k = self.active_piece(x).unwrap_or(0);
                pieces[k].value(x)
            }
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ScalarField::Affine { w, .. } => w.clone(),
            ScalarField::Quadratic { h, w, .. } => h * x + w,
            ScalarField::Sinusoid {
                amp,
                freq,
                dir,
                phase,
            } => dir * (-amp * freq * (freq * dir.dot(x) + phase).sin()),
            ScalarField::Pwa { pieces } => {
                let k = self.active_piece(x).unwrap_or(0);
                pieces[k].w.clone()
            }
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            ScalarField::Affine { .. } | ScalarField::Pwa { .. } => DMatrix::zeros(n, n),
            ScalarField::Quadratic { h, .. } => h.clone(),
            ScalarField::Sinusoid {
                amp,
                freq,
                dir,
                phase,
            } => dir * dir.transpose() * (-amp * freq * freq * (freq * dir.dot(x) + phase).cos()),
        }
    }
}
