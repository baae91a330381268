//! Nyström discretization of `f = g + lambda T f`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{norm, Domain, Grid};
use crate::error::{Error, Result};
use crate::kernels::LinearKernel;
use crate::linalg::{matvec, opnorm};
use crate::quadrature::QuadraturePlan;
use crate::sampled::{Field, SampledFunction};

/// Systems whose one-norm condition estimate exceeds this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `A[i][j] = w_j K(x_i, y_j)` in `d x d` blocks, with the right-hand side.
#[derive(Debug, Clone)]
pub struct NystromSystem {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: Vec<f64>,
    pub lambda: f64,
}

impl NystromSystem {
    pub fn assemble(
        k: &LinearKernel,
        g: &dyn Field,
        lambda: f64,
        plan: &QuadraturePlan,
    ) -> Result<Self> {
        if k.x_dim() != k.y_dim() || k.y_dim() != plan.domain().dim() {
            return Err(Error::invalid(
                "second-kind equations need a kernel on Y x Y",
            ));
        }
        let d = k.value_dim();
        if g.output_dim() != d || g.input_dim() != k.y_dim() {
            return Err(Error::invalid(
                "right-hand side does not match the kernel dimensions",
            ));
        }
        if !lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite"));
        }
        let (nodes, weights) = plan.nodes_and_weights();
        let n = k.y_dim();
        let count = weights.len();
        let size = count * d;
        let mut rhs = vec![0.0; size];
        for (i, chunk) in rhs.chunks_mut(d).enumerate() {
            g.eval_into(&nodes[i * n..(i + 1) * n], chunk)?;
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(
                    "right-hand side",
                    &nodes[i * n..(i + 1) * n],
                ));
            }
        }
        // row-major scratch, one block row per node, filled in parallel
        let mut rows = vec![0.0; size * size];
        rows.par_chunks_mut(d * size)
            .enumerate()
            .try_for_each(|(i, block_row)| {
                let x = &nodes[i * n..(i + 1) * n];
                let mut kv = vec![0.0; d * d];
                for j in 0..count {
                    let y = &nodes[j * n..(j + 1) * n];
                    k.eval_into(x, y, &mut kv);
                    if kv.iter().any(|v| !v.is_finite()) {
                        return Err(Error::non_finite(
                            format!("kernel {} at x = {x:?}", k.name()),
                            y,
                        ));
                    }
                    for r in 0..d {
                        for c in 0..d {
                            block_row[r * size + j * d + c] = weights[j] * kv[r * d + c];
                        }
                    }
                }
                Ok(())
            })?;
        Ok(NystromSystem {
            nodes,
            weights,
            n,
            d,
            matrix: DMatrix::from_row_slice(size, size, &rows),
            rhs,
            lambda,
        })
    }
}

/// Hager's estimate of `||M^{-1}||_1` from solves with `M` and `M^T`.
fn inverse_one_norm_estimate<S, T>(size: usize, solve: S, solve_t: T) -> Option<f64>
where
    S: Fn(&mut nalgebra::DVector<f64>) -> bool,
    T: Fn(&mut nalgebra::DVector<f64>) -> bool,
{
    let mut x = nalgebra::DVector::from_element(size, 1.0 / size as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let mut y = x.clone();
        if !solve(&mut y) {
            return None;
        }
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let mut z = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        if !solve_t(&mut z) {
            return None;
        }
        let (j, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    Some(est)
}

/// Solution of a second-kind equation.
#[derive(Debug, Clone)]
pub struct NystromSolution {
    /// Values at the quadrature nodes, as a function on the node grid.
    pub at_nodes: SampledFunction,
    pub interpolant: NystromInterpolant,
    pub report: NystromReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromReport {
    pub lambda: f64,
    pub nodes: usize,
    pub condition_estimate: f64,
    /// Grid sup of the defect `f - g - lambda T f` on the probe grid, with
    /// `T` integrated on a plan with twice the panels.
    pub residual: f64,
    pub probe_points: usize,
    /// `|lambda| * grid sup int ||K(x, y)|| dy`; at least 1 means the
    /// Neumann series need not converge.
    pub contraction_estimate: f64,
    pub warnings: Vec<String>,
}

/// `f(x) = g(x) + lambda sum_j w_j K(x, y_j) f_j`.
#[derive(Debug, Clone)]
pub struct NystromInterpolant {
    kernel: LinearKernel,
    lambda: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl NystromInterpolant {
    /// Evaluate with the right-hand side the system was solved for.
    pub fn eval_with(&self, g: &dyn Field, x: &[f64], out: &mut [f64]) -> Result<()> {
        g.eval_into(x, out)?;
        let d = self.d;
        let mut kv = vec![0.0; d * d];
        let mut prod = vec![0.0; d];
        for (j, w) in self.weights.iter().enumerate() {
            self.kernel
                .eval_into(x, &self.nodes[j * self.n..(j + 1) * self.n], &mut kv);
            matvec(&kv, &self.values[j * d..(j + 1) * d], &mut prod);
            for (o, p) in out.iter_mut().zip(&prod) {
                *o += self.lambda * w * p;
            }
        }
        Ok(())
    }

    /// The interpolant as a [`Field`], borrowing the right-hand side.
    pub fn bind<'a>(&'a self, g: &'a dyn Field) -> BoundInterpolant<'a> {
        BoundInterpolant { inner: self, g }
    }
}

pub struct BoundInterpolant<'a> {
    inner: &'a NystromInterpolant,
    g: &'a dyn Field,
}

impl Field for BoundInterpolant<'_> {
    fn input_dim(&self) -> usize {
        self.inner.n
    }

    fn output_dim(&self) -> usize {
        self.inner.d
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.eval_with(self.g, x, out)
    }
}

/// Grid of `count` points per axis over the plan's truncated region.
pub fn default_probe_grid(plan: &QuadraturePlan, count: usize) -> Result<Grid> {
    let axes = plan
        .domain()
        .truncated_box(plan.truncation_radius())
        .into_iter()
        .map(|(a, b)| {
            let c = count.max(2);
            (0..c)
                .map(|i| {
                    if i + 1 == c {
                        b
                    } else {
                        a + (b - a) * i as f64 / (c - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    Grid::new(axes)
}

/// Solve `f(x) = g(x) + lambda int K(x, y) f(y) dy` by dense LU with
/// partial pivoting on the plan's nodes. The defect of the Nyström
/// interpolant is measured on `probe` (default: 41 points per axis) with a
/// plan of twice the panels.
pub fn solve_fredholm_2nd_kind(
    k: &LinearKernel,
    g: &dyn Field,
    lambda: f64,
    plan: &QuadraturePlan,
    probe: Option<&Grid>,
) -> Result<NystromSolution> {
    let sys = NystromSystem::assemble(k, g, lambda, plan)?;
    let size = sys.rhs.len();
    let mut m = DMatrix::<f64>::identity(size, size);
    m -= &sys.matrix * lambda;
    let one_norm = (0..size)
        .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lu = m.clone().lu();
    let lu_t = m.transpose().lu();
    let singular = |cond: f64| Error::LinearSolve {
        message: "system matrix I - lambda A is singular".into(),
        condition: cond,
    };
    let inv_norm = inverse_one_norm_estimate(size, |v| lu.solve_mut(v), |v| lu_t.solve_mut(v))
        .ok_or_else(|| singular(f64::INFINITY))?;
    let condition = one_norm * inv_norm;
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::LinearSolve {
            message: format!("condition estimate exceeds {CONDITION_LIMIT:e}"),
            condition,
        });
    }
    let mut sol = nalgebra::DVector::from_column_slice(&sys.rhs);
    if !lu.solve_mut(&mut sol) {
        return Err(singular(condition));
    }
    let values: Vec<f64> = sol.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("nystrom solution", &[]));
    }

    let mut warnings = Vec::new();
    let d = sys.d;
    let n = sys.n;
    let count = sys.weights.len();
    // grid sup of sum_j w_j ||K(x_i, y_j)|| from the assembled blocks
    let car4 = (0..count)
        .into_par_iter()
        .map(|i| {
            (0..count)
                .map(|j| {
                    let mut blk = vec![0.0; d * d];
                    for r in 0..d {
                        for c in 0..d {
                            blk[r * d + c] = sys.matrix[(i * d + r, j * d + c)];
                        }
                    }
                    opnorm(&blk, d)
                })
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max)
        + plan.tail_bound();
    let contraction = lambda.abs() * car4;
    if contraction >= 1.0 {
        let msg =
            format!("|lambda| * car4 = {contraction} >= 1: the fixed-point map need not contract");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let node_grid = plan.node_grid()?;
    let domain: Domain = plan.domain().clone();
    let at_nodes = SampledFunction::new(domain, node_grid, d, values.clone())?;
    let interpolant = NystromInterpolant {
        kernel: k.clone(),
        lambda,
        nodes: sys.nodes,
        weights: sys.weights,
        values,
        n,
        d,
    };

    let probe_grid = match probe {
        Some(p) => p.clone(),
        None => default_probe_grid(plan, 41)?,
    };
    let fine = plan.refined()?;
    let residual = (0..probe_grid.len())
        .into_par_iter()
        .map(|i| {
            let x = probe_grid.point(i);
            let mut fx = vec![0.0; d];
            interpolant.eval_with(g, &x, &mut fx)?;
            let mut gx = vec![0.0; d];
            g.eval_into(&x, &mut gx)?;
            let rule = fine.rule().split_at(&k.breakpoints(&x));
            let (mut kv, mut fy, mut prod) = (vec![0.0; d * d], vec![0.0; d], vec![0.0; d]);
            let tf = rule.integrate(d, |y, out| {
                interpolant.eval_with(g, y, &mut fy)?;
                k.eval_into(&x, y, &mut kv);
                matvec(&kv, &fy, &mut prod);
                out.copy_from_slice(&prod);
                Ok(())
            })?;
            let defect: Vec<f64> = (0..d).map(|c| fx[c] - gx[c] - lambda * tf[c]).collect();
            Ok(norm(&defect))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    Ok(NystromSolution {
        at_nodes,
        interpolant,
        report: NystromReport {
            lambda,
            nodes: count,
            condition_estimate: condition,
            residual,
            probe_points: probe_grid.len(),
            contraction_estimate: contraction,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{exp_separable, zero_kernel};
    use crate::sampled::scalar_field;

    fn plan(panels: usize) -> QuadraturePlan {
        QuadraturePlan::build(&Domain::half_line(), 40.0, panels)
            .unwrap()
            .with_tail_bound((-40f64).exp())
    }

    #[test]
    fn rank_one_kernel_has_closed_form_solution() {
        let g = scalar_field(1, |x| (-x[0]).exp());
        let s = solve_fredholm_2nd_kind(&exp_separable(1.0), &g, 1.0, &plan(20), None).unwrap();
        let grid = s.at_nodes.grid().clone();
        for (x, v) in grid.points().zip(s.at_nodes.values()) {
            assert!((v - 2.0 * (-x[0]).exp()).abs() < 1e-7, "{x:?}: {v}");
        }
        assert!(s.report.residual < 1e-7, "{:?}", s.report);
        assert!(s.report.condition_estimate < 10.0);
        let mut out = [0.0];
        s.interpolant.eval_with(&g, &[0.123], &mut out).unwrap();
        assert!((out[0] - 2.0 * (-0.123f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn lambda_zero_and_zero_kernel_return_rhs() {
        let g = scalar_field(1, |x| (x[0] * 0.3).cos());
        for (k, lambda) in [(exp_separable(1.0), 0.0), (zero_kernel(1, 1), 3.0)] {
            let s = solve_fredholm_2nd_kind(&k, &g, lambda, &plan(4), None).unwrap();
            for (x, v) in s.at_nodes.grid().points().zip(s.at_nodes.values()) {
                assert_eq!(*v, (x[0] * 0.3).cos());
            }
        }
    }

    #[test]
    fn singular_system_is_rejected() {
        // lambda = 2 makes I - lambda A singular up to quadrature error
        let g = scalar_field(1, |x| (-x[0]).exp());
        let err =
            solve_fredholm_2nd_kind(&exp_separable(1.0), &g, 2.0, &plan(20), None).unwrap_err();
        assert!(matches!(err, Error::LinearSolve { .. }), "{err:?}");
    }

    #[test]
    fn large_lambda_warns() {
        let g = scalar_field(1, |x| (-x[0]).exp());
        let s = solve_fredholm_2nd_kind(&exp_separable(1.0), &g, 1.5, &plan(10), None).unwrap();
        assert!(!s.report.warnings.is_empty());
    }
}
