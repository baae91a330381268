//! Kernels read from a table `x,y,k11,...,kdd`.
//!
//! The table must cover a full tensor grid of `(x, y)` pairs in one
//! dimension. Between nodes the kernel is bilinear; in `x` it is extended
//! by constants, in `y` by zero, so the kernel has compact support in `y`
//! and its domination tail vanishes beyond the table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{Domination, LinearKernel};
use crate::error::{Error, Result};
use crate::linalg::opnorm;

/// Largest `y` axis for which every table node becomes a panel break.
const MAX_BREAK_NODES: usize = 512;

struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
    d: usize,
    values: Vec<f64>,
}

impl Table {
    fn cell(axis: &[f64], v: f64) -> (usize, f64) {
        if axis.len() == 1 || v <= axis[0] {
            return (0, 0.0);
        }
        let last = axis.len() - 1;
        if v >= axis[last] {
            return (last - 1, 1.0);
        }
        let i = axis.partition_point(|a| *a <= v) - 1;
        (i, (v - axis[i]) / (axis[i + 1] - axis[i]))
    }

    fn eval(&self, x: f64, y: f64, out: &mut [f64]) {
        let dd = self.d * self.d;
        out.fill(0.0);
        let (ylo, yhi) = (self.ys[0], self.ys[self.ys.len() - 1]);
        if y < ylo || y > yhi {
            return;
        }
        let (i, tx) = Self::cell(&self.xs, x);
        let (j, ty) = Self::cell(&self.ys, y);
        let ny = self.ys.len();
        let corners = [
            (i, j, (1.0 - tx) * (1.0 - ty)),
            (i + 1, j, tx * (1.0 - ty)),
            (i, j + 1, (1.0 - tx) * ty),
            (i + 1, j + 1, tx * ty),
        ];
        for (ci, cj, w) in corners {
            if w == 0.0 || ci >= self.xs.len() || cj >= ny {
                continue;
            }
            let base = (ci * ny + cj) * dd;
            for (o, v) in out.iter_mut().zip(&self.values[base..base + dd]) {
                *o += w * v;
            }
        }
    }
}

fn parse_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = headers.len();
    if cols < 3 || headers.get(0) != Some("x") || headers.get(1) != Some("y") {
        return Err(Error::Parse {
            line: 1,
            message: "header must read x,y,k11,...,kdd".into(),
        });
    }
    let d = ((cols - 2) as f64).sqrt().round() as usize;
    if d * d != cols - 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("{} kernel columns is not a square number", cols - 2),
        });
    }
    let mut entries: BTreeMap<(u64, u64), (f64, f64, Vec<f64>, usize)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut nums = Vec::with_capacity(cols);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} is not a number: {field:?}", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {} is not finite", c + 1),
                });
            }
            nums.push(v);
        }
        let (x, y) = (nums[0], nums[1]);
        let key = (order_key(x), order_key(y));
        if entries
            .insert(key, (x, y, nums[2..].to_vec(), line))
            .is_some()
        {
            return Err(Error::Parse {
                line,
                message: format!("duplicate entry for x = {x}, y = {y}"),
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "table has no rows".into(),
        });
    }
    let mut xs: Vec<f64> = entries.values().map(|e| e.0).collect();
    let mut ys: Vec<f64> = entries.values().map(|e| e.1).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    if ys.len() < 2 {
        return Err(Error::Parse {
            line: 2,
            message: "table needs at least two distinct y values".into(),
        });
    }
    if xs.len() * ys.len() != entries.len() {
        let last = entries.values().map(|e| e.3).max().unwrap_or(1);
        return Err(Error::Parse {
            line: last,
            message: format!(
                "rows do not form a full grid: {} x values, {} y values, {} rows",
                xs.len(),
                ys.len(),
                entries.len()
            ),
        });
    }
    // BTreeMap order is x-major, y-minor, matching the value layout
    let values = entries.into_values().flat_map(|e| e.2).collect();
    Ok(Table { xs, ys, d, values })
}

/// Total order on finite floats, used as a map key.
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if v.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Kernel from CSV text `x,y,k11,...,kdd` (1-d `x` and `y`).
pub fn user_tabulated<R: Read>(name: &str, reader: R) -> Result<LinearKernel> {
    let table = parse_table(reader)?;
    let d = table.d;
    let dd = d * d;
    let ny = table.ys.len();
    // max opnorm per y node over all x bounds the bilinear interpolant on
    // each y cell by the larger of its two end values
    let mut col_max = vec![0.0f64; ny];
    for i in 0..table.xs.len() {
        for (j, c) in col_max.iter_mut().enumerate() {
            let base = (i * ny + j) * dd;
            *c = c.max(opnorm(&table.values[base..base + dd], d));
        }
    }
    let ys = table.ys.clone();
    let cell_bound: Vec<f64> = col_max.windows(2).map(|w| w[0].max(w[1])).collect();
    let car4: f64 = ys
        .windows(2)
        .zip(&cell_bound)
        .map(|(w, b)| (w[1] - w[0]) * b)
        .sum();
    let (ys_b, cb_b) = (ys.clone(), cell_bound.clone());
    let (ys_t, cb_t) = (ys.clone(), cell_bound);
    let dom = Domination::new(
        move |y, _| {
            let y = y[0];
            if y < ys_b[0] || y > ys_b[ys_b.len() - 1] {
                return 0.0;
            }
            let j = (ys_b.partition_point(|a| *a <= y).max(1) - 1).min(cb_b.len() - 1);
            let mut b = cb_b[j];
            // a node shared by two cells is bounded by both
            if j > 0 && y == ys_b[j] {
                b = b.max(cb_b[j - 1]);
            }
            b
        },
        move |t, _| {
            ys_t.windows(2)
                .zip(&cb_t)
                .map(|(w, b)| {
                    let below = (w[1].min(-t) - w[0]).max(0.0);
                    let above = (w[1] - w[0].max(t)).max(0.0);
                    b * (below + above).min(w[1] - w[0])
                })
                .sum()
        },
    );
    let breaks = if ny <= MAX_BREAK_NODES {
        ys.clone()
    } else {
        Vec::new()
    };
    Ok(LinearKernel::new(
        format!("user_tabulated[{name}]"),
        1,
        1,
        d,
        move |x, y, out| table.eval(x[0], y[0], out),
    )
    .with_domination(dom)
    .with_car4_bound(car4)
    .with_breakpoints(move |_| vec![breaks.clone()]))
}

/// [`user_tabulated`] reading from a file.
pub fn user_tabulated_file(path: &Path) -> Result<LinearKernel> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    user_tabulated(&path.display().to_string(), f)
}
