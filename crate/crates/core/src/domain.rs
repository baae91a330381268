//! Unbounded domains in R^n together with their exhaustion by closed balls.
//!
//! A domain is an axis-aligned box whose bounds may be infinite. The
//! exhaustion `D_k = {x in domain : ||x|| <= T_k}` is a nested sequence of
//! compact sets with `D_k` contained in the interior of `D_{k+1}`; every
//! bounded subset of the domain lies in some `D_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension of the base space.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    HalfLine,
    RealLine,
    BoxRn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    lower: Vec<f64>,
    upper: Vec<f64>,
    exhaustion: Vec<f64>,
}

fn default_exhaustion() -> Vec<f64> {
    (0..=16).map(|k| f64::powi(2.0, k)).collect()
}

impl Domain {
    /// `[0, inf)`.
    pub fn half_line() -> Self {
        Domain {
            kind: DomainKind::HalfLine,
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
            exhaustion: default_exhaustion(),
        }
    }

    /// `(-inf, inf)`.
    pub fn real_line() -> Self {
        Domain {
            kind: DomainKind::RealLine,
            lower: vec![f64::NEG_INFINITY],
            upper: vec![f64::INFINITY],
            exhaustion: default_exhaustion(),
        }
    }

    /// All of R^n.
    pub fn rn(n: usize) -> Result<Self> {
        Self::boxed(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    /// A box `prod [lower_k, upper_k]`, bounds may be infinite.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::invalid(format!(
                "dimension must be in 1..={MAX_DIM}, got {n}"
            )));
        }
        if upper.len() != n {
            return Err(Error::invalid("lower and upper bounds differ in length"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::invalid(format!(
                    "empty or invalid box side [{lo}, {hi}]"
                )));
            }
        }
        Ok(Domain {
            kind: DomainKind::BoxRn,
            lower,
            upper,
            exhaustion: default_exhaustion(),
        })
    }

    /// Replace the exhaustion radii. They must be positive and strictly increasing.
    pub fn with_exhaustion(mut self, radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::invalid("exhaustion needs at least one radius"));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid(
                "exhaustion radii must be positive and finite",
            ));
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "exhaustion radii must be strictly increasing",
            ));
        }
        self.exhaustion = radii;
        Ok(self)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn exhaustion_radii(&self) -> &[f64] {
        &self.exhaustion
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: x.to_vec(),
                domain: self.describe(),
            })
        }
    }

    /// Membership in the k-th exhaustion set `D_k` (zero based).
    pub fn in_exhaustion_set(&self, k: usize, x: &[f64]) -> bool {
        match self.exhaustion.get(k) {
            Some(r) => self.contains(x) && norm(x) <= *r,
            None => false,
        }
    }

    /// Index of the first exhaustion set containing the ball of the given radius.
    pub fn exhaustion_index_covering(&self, radius: f64) -> Option<usize> {
        self.exhaustion.iter().position(|r| *r >= radius)
    }

    /// Per-axis interval of the domain clipped to `[-t, t]`.
    pub fn truncated_box(&self, t: f64) -> Vec<(f64, f64)> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (lo.max(-t), hi.min(t)))
            .collect()
    }

    pub fn describe(&self) -> String {
        match self.kind {
            DomainKind::HalfLine => "half_line [0, inf)".to_string(),
            DomainKind::RealLine => "real_line (-inf, inf)".to_string(),
            DomainKind::BoxRn => {
                let sides: Vec<String> = self
                    .lower
                    .iter()
                    .zip(&self.upper)
                    .map(|(lo, hi)| format!("[{lo}, {hi}]"))
                    .collect();
                format!("box_rn {}", sides.join(" x "))
            }
        }
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    if v.len() == 1 {
        return v[0].abs();
    }
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// An element of the target space E = R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorValue(pub Vec<f64>);

impl VectorValue {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("vector values need at least one component"));
        }
        Ok(VectorValue(components))
    }

    pub fn zeros(d: usize) -> Self {
        VectorValue(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Tensor-product grid; points are enumerated in lexicographic order
/// (first axis slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "grid dimension must be in 1..={MAX_DIM}"
            )));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::invalid(format!("grid axis {k} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "grid axis {k} has non-finite entries"
                )));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "grid axis {k} must be strictly increasing"
                )));
            }
        }
        Ok(Grid { axes })
    }

    /// One-dimensional grid from a list of points.
    pub fn line(points: Vec<f64>) -> Result<Self> {
        Self::new(vec![points])
    }

    /// `count` equally spaced points on `[a, b]` along each of `dim` axes.
    pub fn uniform(dim: usize, a: f64, b: f64, count: usize) -> Result<Self> {
        if count < 1 || !(a <= b) {
            return Err(Error::invalid("uniform grid needs count >= 1 and a <= b"));
        }
        let axis: Vec<f64> = if count == 1 {
            vec![a]
        } else {
            let h = (b - a) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { b } else { a + h * i as f64 })
                .collect()
        };
        Self::new(vec![axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Write the coordinates of point `index` into `out`.
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for k in (0..self.axes.len()).rev() {
            let len = self.axes[k].len();
            out[k] = self.axes[k][rem % len];
            rem /= len;
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(index, &mut p);
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (i, axis)| acc * axis.len() + i)
    }

    /// Largest Euclidean norm over all grid points.
    pub fn max_norm(&self) -> f64 {
        let corner: Vec<f64> = self
            .axes
            .iter()
            .map(|a| a[0].abs().max(a[a.len() - 1].abs()))
            .collect();
        norm(&corner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustion_must_increase() {
        assert!(Domain::half_line().with_exhaustion(vec![1.0, 1.0]).is_err());
        assert!(Domain::half_line().with_exhaustion(vec![0.0, 1.0]).is_err());
        let d = Domain::half_line().with_exhaustion(vec![1.0, 3.0]).unwrap();
        assert!(d.in_exhaustion_set(1, &[2.5]));
        assert!(!d.in_exhaustion_set(0, &[2.5]));
        assert!(!d.in_exhaustion_set(1, &[-0.5]));
        assert_eq!(d.exhaustion_index_covering(2.0), Some(1));
        assert_eq!(d.exhaustion_index_covering(4.0), None);
    }

    #[test]
    fn half_line_rejects_negative_points() {
        let d = Domain::half_line();
        assert!(d.check(&[0.0]).is_ok());
        assert!(matches!(d.check(&[-1e-12]), Err(Error::Domain { .. })));
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let g = Grid::new(vec![vec![0.0, 1.0], vec![-1.0, 0.0, 1.0]]).unwrap();
        let pts: Vec<_> = g.points().collect();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.0, -1.0]);
        assert_eq!(pts[1], vec![0.0, 0.0]);
        assert_eq!(pts[3], vec![1.0, -1.0]);
        for w in pts.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(g.flat_index(&[1, 2]), 5);
    }

    #[test]
    fn grid_rejects_unsorted_axes() {
        assert!(Grid::line(vec![0.0, 0.0]).is_err());
        assert!(Grid::line(vec![1.0, 0.0]).is_err());
        assert!(Grid::line(vec![]).is_err());
    }
}
