//! Functions X -> R^d sampled on tensor grids.
//!
//! Between grid points values are interpolated multilinearly; outside the
//! bounding box of the grid the value of the nearest face is used (constant
//! extension). All sup-norms computed here are *grid sups*: lower estimates
//! of the true supremum over X.

use std::io::{Read, Write};

use crate::domain::{norm, Domain, Grid, VectorValue};
use crate::error::{Error, Result};

/// Anything that can be evaluated pointwise as a map R^n -> R^d.
pub trait Field: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Known bound on the sup norm, if any.
    fn sup_norm_hint(&self) -> Option<f64> {
        None
    }

    fn eval_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

/// Adapter turning a closure into a [`Field`].
pub struct FnField<F> {
    n: usize,
    d: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(n: usize, d: usize, f: F) -> Self {
        FnField { n, d, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.d
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out);
        Ok(())
    }
}

/// Scalar field `x -> f(x)`.
pub fn scalar_field<F>(n: usize, f: F) -> FnField<impl Fn(&[f64], &mut [f64]) + Sync>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    FnField::new(n, 1, move |x: &[f64], out: &mut [f64]| out[0] = f(x))
}

/// Grid sup restricted to a ball, together with the number of grid points
/// that fell inside it. `qualifying == 0` flags an empty restriction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedSup {
    pub value: f64,
    pub qualifying: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    domain: Domain,
    grid: Grid,
    value_dim: usize,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(domain: Domain, grid: Grid, value_dim: usize, values: Vec<f64>) -> Result<Self> {
        if value_dim == 0 {
            return Err(Error::invalid("value dimension must be at least 1"));
        }
        if grid.dim() != domain.dim() {
            return Err(Error::invalid(format!(
                "grid dimension {} does not match domain dimension {}",
                grid.dim(),
                domain.dim()
            )));
        }
        if values.len() != grid.len() * value_dim {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                grid.len() * value_dim,
                values.len()
            )));
        }
        for p in grid.points() {
            domain.check(&p)?;
        }
        Ok(SampledFunction {
            domain,
            grid,
            value_dim,
            values,
        })
    }

    /// Sample a field on every grid point.
    pub fn from_field(domain: Domain, grid: Grid, field: &dyn Field) -> Result<Self> {
        let d = field.output_dim();
        let mut values = vec![0.0; grid.len() * d];
        let mut p = vec![0.0; grid.dim()];
        for (i, chunk) in values.chunks_mut(d).enumerate() {
            grid.point_into(i, &mut p);
            field.eval_into(&p, chunk)?;
        }
        Self::new(domain, grid, d, values)
    }

    pub fn from_fn<F>(domain: Domain, grid: Grid, d: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let n = grid.dim();
        Self::from_field(domain, grid, &FnField::new(n, d, f))
    }

    pub fn constant(domain: Domain, grid: Grid, value: &[f64]) -> Result<Self> {
        let values = value.repeat(grid.len());
        Self::new(domain, grid, value.len(), values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, index: usize) -> &[f64] {
        &self.values[index * self.value_dim..(index + 1) * self.value_dim]
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::invalid("value count changed"));
        }
        Ok(SampledFunction {
            values,
            ..self.clone()
        })
    }

    pub fn same_grid(&self, other: &SampledFunction) -> bool {
        self.grid == other.grid && self.value_dim == other.value_dim
    }

    /// Multilinear interpolation with constant extension outside the grid.
    pub fn eval(&self, x: &[f64]) -> Result<VectorValue> {
        let mut out = vec![0.0; self.value_dim];
        self.eval_into(x, &mut out)?;
        Ok(VectorValue(out))
    }

    fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grid.dim();
        // per axis: (lower index, weight of upper neighbour)
        let mut cells = [(0usize, 0.0f64); crate::domain::MAX_DIM];
        for k in 0..n {
            let axis = &self.grid.axes()[k];
            let v = x[k];
            let len = axis.len();
            cells[k] = if len == 1 || v <= axis[0] {
                (0, 0.0)
            } else if v >= axis[len - 1] {
                (len - 2, 1.0)
            } else {
                let j = axis.partition_point(|a| *a <= v) - 1;
                let t = (v - axis[j]) / (axis[j + 1] - axis[j]);
                (j, t)
            };
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut multi = [0usize; crate::domain::MAX_DIM];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for k in 0..n {
                let upper = (corner >> k) & 1 == 1;
                let (j, t) = cells[k];
                if self.grid.axes()[k].len() == 1 {
                    if upper {
                        w = 0.0;
                    }
                    multi[k] = 0;
                    continue;
                }
                if upper {
                    w *= t;
                    multi[k] = j + 1;
                } else {
                    w *= 1.0 - t;
                    multi[k] = j;
                }
            }
            if w == 0.0 {
                continue;
            }
            let idx = self.grid.flat_index(&multi[..n]);
            for (o, v) in out.iter_mut().zip(self.value_at(idx)) {
                *o += w * v;
            }
        }
    }

    /// Grid sup of the Euclidean norm of the values.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.value_dim)
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// Grid sup of `||f(x) - g(x)||` over grid points with `||x|| <= radius`
    /// (`None` means all grid points).
    pub fn sup_distance(
        &self,
        other: &SampledFunction,
        radius: Option<f64>,
    ) -> Result<RestrictedSup> {
        if !self.same_grid(other) {
            return Err(Error::invalid(
                "sup_distance needs functions on the same grid",
            ));
        }
        let mut p = vec![0.0; self.grid.dim()];
        let mut best = 0.0f64;
        let mut qualifying = 0;
        let mut diff = vec![0.0; self.value_dim];
        for i in 0..self.grid.len() {
            if let Some(r) = radius {
                self.grid.point_into(i, &mut p);
                if norm(&p) > r {
                    continue;
                }
            }
            qualifying += 1;
            for ((d, a), b) in diff.iter_mut().zip(self.value_at(i)).zip(other.value_at(i)) {
                *d = a - b;
            }
            best = best.max(norm(&diff));
        }
        if qualifying == 0 {
            log::warn!("sup_distance: no grid point within radius {radius:?}; returning 0");
        }
        Ok(RestrictedSup {
            value: best,
            qualifying,
        })
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &SampledFunction, b: f64) -> Result<SampledFunction> {
        if !self.same_grid(other) {
            return Err(Error::invalid("combine needs functions on the same grid"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        self.with_values(values)
    }

    /// Write as CSV with header `x1,..,xn,v1,..,vd` in lexicographic grid order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.grid.dim();
        let header: Vec<String> = (1..=n)
            .map(|k| format!("x{k}"))
            .chain((1..=self.value_dim).map(|k| format!("v{k}")))
            .collect();
        wr.write_record(&header).map_err(csv_err)?;
        let mut p = vec![0.0; n];
        for i in 0..self.grid.len() {
            self.grid.point_into(i, &mut p);
            let row: Vec<String> = p
                .iter()
                .chain(self.value_at(i))
                .map(|v| format!("{v}"))
                .collect();
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read the CSV layout produced by [`write_csv`](Self::write_csv). The
    /// grid is rebuilt from the distinct coordinates and must be a full
    /// tensor product listed in lexicographic order.
    pub fn read_csv<R: Read>(domain: Domain, r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let d = header.iter().filter(|h| h.starts_with('v')).count();
        if n != domain.dim() || d == 0 || n + d != header.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be x1..x{},v1..vd", domain.dim()),
            });
        }
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != n + d {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", n + d, rec.len()),
                });
            }
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            points.push(nums[..n].to_vec());
            values.extend_from_slice(&nums[n..]);
        }
        if points.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "no data rows".into(),
            });
        }
        let mut axes = Vec::with_capacity(n);
        for k in 0..n {
            let mut a: Vec<f64> = points.iter().map(|p| p[k]).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            axes.push(a);
        }
        let grid = Grid::new(axes)?;
        if grid.len() != points.len() {
            return Err(Error::Parse {
                line: points.len() + 1,
                message: "rows do not form a full tensor grid".into(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if grid.point(i) != *p {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "rows are not in lexicographic grid order".into(),
                });
            }
        }
        Self::new(domain, grid, d, values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl Field for SampledFunction {
    fn input_dim(&self) -> usize {
        self.grid.dim()
    }

    fn output_dim(&self) -> usize {
        self.value_dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.grid.dim() {
            return Err(Error::invalid("point dimension mismatch"));
        }
        self.domain.check(x)?;
        self.interpolate(x, out);
        Ok(())
    }

    fn sup_norm_hint(&self) -> Option<f64> {
        Some(self.sup_norm())
    }
}
