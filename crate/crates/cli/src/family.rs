//! Seeded random functions in the unit ball of `BC(Y, R^d)`:
//! `f_c(y) = sum_{j=1}^{8} a_{cj} cos(j s(y)) e^{-||y|| / 2}` per component
//! `c`, with `sum_j |a_{cj}| = 1 / sqrt(d)` and `s(y) = (y_1 + ... + y_n) / sqrt(n)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intops::domain::norm;
use intops::sampled::FnField;
use intops::Field;

pub const TERMS: usize = 8;
pub const GENERATOR: &str = "ChaCha8Rng::seed_from_u64";

/// Coefficients `a_{cj}` of one member, row-major in `(c, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBallMember {
    pub n: usize,
    pub d: usize,
    pub coeffs: Vec<f64>,
}

impl UnitBallMember {
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        let s = y.iter().sum::<f64>() / (self.n as f64).sqrt();
        let decay = (-norm(y) / 2.0).exp();
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.coeffs[c * TERMS..(c + 1) * TERMS];
            *o = decay
                * row
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * ((j + 1) as f64 * s).cos())
                    .sum::<f64>();
        }
    }

    pub fn field(&self) -> impl Field + '_ {
        FnField::new(self.n, self.d, move |y: &[f64], out: &mut [f64]| {
            self.eval_into(y, out)
        })
    }
}

/// `count` members drawn in order from one generator seeded with `seed`.
pub fn unit_ball_family(seed: u64, count: usize, n: usize, d: usize) -> Vec<UnitBallMember> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    (0..count)
        .map(|_| {
            let mut coeffs: Vec<f64> = (0..d * TERMS)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            for row in coeffs.chunks_mut(TERMS) {
                let l1: f64 = row.iter().map(|a| a.abs()).sum();
                let l1 = if l1 > 0.0 { l1 } else { 1.0 };
                for a in row.iter_mut() {
                    *a *= scale / l1;
                }
            }
            UnitBallMember { n, d, coeffs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn members_are_in_the_unit_ball_and_reproducible() {
        let a = unit_ball_family(42, 20, 2, 3);
        assert_eq!(a, unit_ball_family(42, 20, 2, 3));
        assert_ne!(a, unit_ball_family(43, 20, 2, 3));
        let mut out = [0.0; 3];
        for m in &a {
            for i in -20..=20 {
                for k in -5..=5 {
                    m.eval_into(&[i as f64 * 0.1, k as f64 * 0.7], &mut out);
                    assert!(norm(&out) <= 1.0 + 1e-12);
                }
            }
        }
    }
}
