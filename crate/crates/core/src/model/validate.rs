use nalgebra::{DVector, SymmetricEigen};

use super::{ScalarField, Sign, SystemSpec};
use crate::error::{Error, Result};
use crate::linearize::controllability_matrix;
use crate::sampling::Halton;

const SLACK: f64 = 1e-9;
const ETAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    Uncontrollable,
    GZeroAtOrigin,
    OriginNotInterior,
    Sign,
    Curvature,
    /// Exact eigenvalue test of a quadratic field's Hessian.
    QuadraticCurvature,
    Coverage,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Uncontrollable => "uncontrollable",
            ViolationKind::GZeroAtOrigin => "g_zero_at_origin",
            ViolationKind::OriginNotInterior => "origin_not_interior",
            ViolationKind::Sign => "sign",
            ViolationKind::Curvature => "curvature",
            ViolationKind::QuadraticCurvature => "quadratic_curvature",
            ViolationKind::Coverage => "coverage",
        }
    }
}

/// One violated condition, with the worst witness found and the number of
/// sampled failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub region: Option<usize>,
    pub witness: Vec<Vec<f64>>,
    pub magnitude: f64,
    pub count: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub index: usize,
    pub samples: usize,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub controllability_rank: usize,
    pub g_origin: f64,
    pub regions: Vec<RegionStats>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

fn numerical_rank(m: &nalgebra::DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}

/// Samples up to `count` points of a polytope (rejection inside its bounding box).
pub(crate) fn sample_polytope(
    set: &super::Polytope,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let Some((lo, hi)) = set.bounding_box() else {
        return Vec::new();
    };
    let mut h = Halton::new(set.dim(), seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 64 * count {
        tries += 1;
        let x = h.next_in_box(&lo, &hi);
        if set.contains(&x, 0.0) {
            out.push(x);
        }
    }
    out
}

struct Worst {
    magnitude: f64,
    witness: Vec<Vec<f64>>,
    count: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            magnitude: 0.0,
            witness: Vec::new(),
            count: 0,
        }
    }

    fn record(&mut self, magnitude: f64, witness: Vec<Vec<f64>>) {
        self.count += 1;
        if magnitude > self.magnitude {
            self.magnitude = magnitude;
            self.witness = witness;
        }
    }
}

/// Checks the structural assumptions on `spec` by deterministic sampling.
///
/// `n_samples` points are drawn per region (and per domain for the coverage
/// check). Quadratic fields additionally get an exact eigenvalue test.
pub fn validate_assumption1(
    spec: &SystemSpec,
    n_samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be at least 1".into()));
    }
    let n = spec.dim();
    let g = spec.g();
    let mut violations = Vec::new();

    let rank = numerical_rank(&controllability_matrix(spec.a(), spec.b()));
    if rank < n {
        violations.push(Violation {
            kind: ViolationKind::Uncontrollable,
            region: None,
            witness: Vec::new(),
            magnitude: (n - rank) as f64,
            count: 1,
            detail: format!("controllability matrix has rank {rank} < {n}"),
        });
    }

    let origin = DVector::zeros(n);
    let g_origin = g.value(&origin);
    if g_origin.abs() <= super::EPS_G {
        violations.push(Violation {
            kind: ViolationKind::GZeroAtOrigin,
            region: None,
            witness: vec![origin.as_slice().to_vec()],
            magnitude: g_origin.abs(),
            count: 1,
            detail: format!("g(0) = {g_origin:e}"),
        });
    }

    let x1 = &spec.region(1).set;
    let margin = x1.max_violation(&origin);
    if margin >= -SLACK {
        violations.push(Violation {
            kind: ViolationKind::OriginNotInterior,
            region: Some(1),
            witness: vec![origin.as_slice().to_vec()],
            magnitude: margin + SLACK,
            count: 1,
            detail: format!("max(C_1 0 - d_1) = {margin:e}"),
        });
    }

    let mut stats = Vec::new();
    for (idx, region) in spec.regions().iter().enumerate() {
        let index = idx + 1;
        if region.set.is_empty() {
            return Err(Error::RegionEmpty { index });
        }
        let sigma = region.sign.as_f64();
        let pts = sample_polytope(&region.set, n_samples, seed.wrapping_add(index as u64));
        let vals: Vec<f64> = pts.iter().map(|x| g.value(x)).collect();
        let g_min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let g_max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        stats.push(RegionStats {
            index,
            samples: pts.len(),
            g_min,
            g_max,
        });

        let mut sign_worst = Worst::new();
        for (x, v) in pts.iter().zip(&vals) {
            let bad = -sigma * v;
            if bad > SLACK {
                sign_worst.record(bad, vec![x.as_slice().to_vec()]);
            }
        }
        if sign_worst.count > 0 {
            violations.push(Violation {
                kind: ViolationKind::Sign,
                region: Some(index),
                witness: sign_worst.witness,
                magnitude: sign_worst.magnitude,
                count: sign_worst.count,
                detail: format!(
                    "g must be {} on X_{index}",
                    if region.sign == Sign::Pos { "non-negative" } else { "non-positive" }
                ),
            });
        }

        // Pair each sample with its neighbour and with the sample half a
        // cycle away, so both short and long chords are tested.
        let m = pts.len();
        let mut curv_worst = Worst::new();
        if m >= 2 {
            for k in 0..m {
                for partner in [(k + 1) % m, (k + m / 2) % m] {
                    if partner == k {
                        continue;
                    }
                    let (x, y) = (&pts[k], &pts[partner]);
                    for eta in ETAS {
                        let mid = x * eta + y * (1.0 - eta);
                        let chord = eta * vals[k] + (1.0 - eta) * vals[partner];
                        // Pos: concave, g(mid) >= chord. Neg: convex, g(mid) <= chord.
                        let bad = -sigma * (g.value(&mid) - chord);
                        if bad > SLACK {
                            curv_worst.record(
                                bad,
                                vec![x.as_slice().to_vec(), y.as_slice().to_vec()],
                            );
                        }
                    }
                }
            }
        }
        if curv_worst.count > 0 {
            violations.push(Violation {
                kind: ViolationKind::Curvature,
                region: Some(index),
                witness: curv_worst.witness,
                magnitude: curv_worst.magnitude,
                count: curv_worst.count,
                detail: format!(
                    "midpoint inequality fails: g is not {} on X_{index}",
                    if region.sign == Sign::Pos { "concave" } else { "convex" }
                ),
            });
        }

        if let ScalarField::Quadratic { h, .. } = g {
            let eig = SymmetricEigen::new(h.clone());
            // Pos needs H <= 0, Neg needs H >= 0.
            let (k, worst) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(k, &l)| (k, sigma * l))
                .fold((0, f64::NEG_INFINITY), |acc, e| if e.1 > acc.1 { e } else { acc });
            if worst > SLACK {
                violations.push(Violation {
                    kind: ViolationKind::QuadraticCurvature,
                    region: Some(index),
                    witness: vec![eig.eigenvectors.column(k).iter().copied().collect()],
                    magnitude: worst,
                    count: 1,
                    detail: format!(
                        "Hessian eigenvalue {:e} has the wrong sign for X_{index}",
                        eig.eigenvalues[k]
                    ),
                });
            }
        }
    }

    if let Some(domain) = spec.domain() {
        let pts = sample_polytope(domain, n_samples, seed.wrapping_add(0x5eed));
        let mut cov = Worst::new();
        for x in &pts {
            if !spec.in_state_set(x, SLACK) {
                let gap = spec
                    .regions()
                    .iter()
                    .map(|r| r.set.max_violation(x))
                    .fold(f64::INFINITY, f64::min);
                cov.record(gap, vec![x.as_slice().to_vec()]);
            }
        }
        if cov.count > 0 {
            violations.push(Violation {
                kind: ViolationKind::Coverage,
                region: None,
                witness: cov.witness,
                magnitude: cov.magnitude,
                count: cov.count,
                detail: "state set points outside every region".into(),
            });
        }
    }

    violations.sort_by_key(|v| (v.kind, v.region));

    Ok(ValidationReport {
        controllability_rank: rank,
        g_origin,
        regions: stats,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::model::{Polytope, Region};
    use nalgebra::DMatrix;

    #[test]
    fn example_two_passes() {
        let report = validate_assumption1(&examples::ex2(), 400, 1).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert_eq!(report.controllability_rank, 2);
    }

    #[test]
    fn example_one_convexity_flagged() {
        let report = validate_assumption1(&examples::ex1(), 400, 1).unwrap();
        assert!(report.has(ViolationKind::Curvature));
        assert!(report.has(ViolationKind::QuadraticCurvature));
        assert!(!report.has(ViolationKind::Sign));
        let q = report
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::QuadraticCurvature)
            .unwrap();
        // Eigenvalue 3/32 - 1/8 = -1/32 along (1, 1)/sqrt(2).
        assert!((q.magnitude - 1.0 / 32.0).abs() < 1e-12);
        let w = &q.witness[0];
        assert!((w[0].abs() - w[1].abs()).abs() < 1e-12 && w[0] * w[1] > 0.0);
    }

    #[test]
    fn constant_positive_field_passes() {
        let spec = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]),
            DVector::from_vec(vec![0.01, 0.05]),
            ScalarField::constant(2, 1.0),
            vec![Region {
                set: Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
                sign: Sign::Pos,
            }],
            -1.0,
            1.0,
        )
        .unwrap();
        for seed in 0..4 {
            assert!(validate_assumption1(&spec, 200, seed).unwrap().passed());
        }
    }

    #[test]
    fn coverage_gap_reported() {
        let spec = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]),
            DVector::from_vec(vec![0.01, 0.05]),
            ScalarField::constant(2, 1.0),
            vec![Region {
                set: Polytope::from_box(&[-1.0, -1.0], &[1.0, 0.0]).unwrap(),
                sign: Sign::Pos,
            }],
            -1.0,
            1.0,
        )
        .unwrap()
        .with_domain(Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap())
        .unwrap();
        let report = validate_assumption1(&spec, 200, 0).unwrap();
        assert!(report.has(ViolationKind::Coverage));
        // Origin sits on the boundary of X_1 here.
        assert!(report.has(ViolationKind::OriginNotInterior));
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(validate_assumption1(&examples::ex2(), 0, 0).is_err());
    }
}
