//! Deterministic low-discrepancy sampling.
//!
//! Points come from a Halton sequence shifted by a seeded Cranley-Patterson
//! rotation, so every report built on them is reproducible from the seed.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Rotated Halton sequence in the unit cube `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sequence supports up to {} dims", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        // Index 0 maps to the shift itself; start at 1 like most Halton uses.
        Self { dim, shift, index: 1 }
    }

    pub fn next_unit(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        (0..self.dim)
            .map(|k| {
                let v = radical_inverse(i, PRIMES[k]) + self.shift[k];
                v - v.floor()
            })
            .collect()
    }

    /// Next point scaled into the box `[lo, hi]`.
    pub fn next_in_box(&mut self, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
        let u = self.next_unit();
        DVector::from_iterator(
            self.dim,
            u.iter().enumerate().map(|(k, t)| lo[k] + t * (hi[k] - lo[k])),
        )
    }
}

/// `count` deterministic unit directions in `R^dim`.
///
/// In two dimensions these are equally spaced angles; otherwise Halton points
/// are pushed through Box-Muller and normalized.
pub fn unit_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match dim {
        0 => Vec::new(),
        1 => (0..count)
            .map(|k| DVector::from_element(1, if k % 2 == 0 { 1.0 } else { -1.0 }))
            .collect(),
        2 => (0..count)
            .map(|k| {
                let th = std::f64::consts::TAU * (k as f64 + 0.5) / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            let pairs = dim.div_ceil(2);
            let mut h = Halton::new(2 * pairs, seed);
            (0..count)
                .map(|_| {
                    let u = h.next_unit();
                    let mut z = Vec::with_capacity(2 * pairs);
                    for p in 0..pairs {
                        let r = (-2.0 * (1.0 - u[2 * p]).max(1e-300).ln()).sqrt();
                        let th = std::f64::consts::TAU * u[2 * p + 1];
                        z.push(r * th.cos());
                        z.push(r * th.sin());
                    }
                    z.truncate(dim);
                    let v = DVector::from_vec(z);
                    let n = v.norm();
                    if n > 0.0 {
                        v / n
                    } else {
                        let mut e = DVector::zeros(dim);
                        e[0] = 1.0;
                        e
                    }
                })
                .collect()
        }
    }
}
