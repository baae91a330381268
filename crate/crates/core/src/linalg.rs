//! Small dense helpers for d x d kernel values stored row-major.

use nalgebra::DMatrix;

/// Spectral norm (operator norm induced by the Euclidean norm).
pub fn opnorm(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0].abs(),
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            mat.singular_values().max()
        }
    }
}

/// `out = m * v`.
pub fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * d..(i + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// Spectral norm of `a - b`.
pub fn opnorm_diff(a: &[f64], b: &[f64], d: usize, scratch: &mut [f64]) -> f64 {
    for ((s, x), y) in scratch.iter_mut().zip(a).zip(b) {
        *s = x - y;
    }
    opnorm(scratch, d)
}
