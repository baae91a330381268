//! Damped Picard iteration `f <- (1 - alpha) f + alpha op(f)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampled::SampledFunction;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const MIN_ALPHA: f64 = 1.0 / 32.0;
/// Consecutive residual increases that halve `alpha`.
pub const INCREASES_BEFORE_HALVING: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallViolation {
    pub iteration: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub radius: f64,
    pub iterations: usize,
    /// Damping in effect at the end.
    pub alpha: f64,
    pub alpha_initial: f64,
    /// Grid sup of `||op(f) - f||` at the returned iterate.
    pub residual: f64,
    pub converged: bool,
    pub tol: f64,
    /// Sup norms of `f_0, f_1, ...`.
    pub iterate_norms: Vec<f64>,
    /// Residual of each visited iterate.
    pub residual_history: Vec<f64>,
    /// Iterates whose sup norm exceeded `radius + tol`.
    pub ball_violations: Vec<BallViolation>,
    pub ball_invariant: bool,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub report: FixedPointReport,
    pub solution: SampledFunction,
}

/// Iterate from `f0` until the grid residual is at most `tol` or
/// `max_iter` updates have been made. Non-convergence is reported, not an
/// error; a non-finite iterate is an error naming the iteration.
pub fn picard_solve<Op>(
    op: Op,
    f0: &SampledFunction,
    radius: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome>
where
    Op: Fn(&SampledFunction) -> Result<SampledFunction>,
{
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let n0 = f0.sup_norm();
    if n0 > radius {
        return Err(Error::invalid(format!(
            "initial iterate has sup norm {n0} > radius {radius}"
        )));
    }
    let mut f = f0.clone();
    let mut a = alpha;
    let mut norms = vec![n0];
    let mut history = Vec::new();
    let mut violations = Vec::new();
    let mut increases = 0;
    let mut converged = false;
    let mut k = 0;
    loop {
        let g = op(&f)?;
        if !g.same_grid(&f) {
            return Err(Error::invalid(
                "operator output must live on the iterate grid",
            ));
        }
        if g.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(
                format!("operator image at iteration {k}"),
                &[],
            ));
        }
        let r = g.sup_distance(&f, None)?.value;
        if let Some(&prev) = history.last() {
            if r > prev {
                increases += 1;
                if increases >= INCREASES_BEFORE_HALVING && a > MIN_ALPHA {
                    a = (a / 2.0).max(MIN_ALPHA);
                    log::info!("picard: residual rose {increases} times in a row, alpha -> {a}");
                    increases = 0;
                }
            } else {
                increases = 0;
            }
        }
        history.push(r);
        if r <= tol {
            converged = true;
            break;
        }
        if k == max_iter {
            break;
        }
        k += 1;
        f = f.combine(1.0 - a, &g, a)?;
        if f.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("iterate {k}"), &[]));
        }
        let nk = f.sup_norm();
        norms.push(nk);
        if nk > radius + tol {
            log::warn!("picard: iterate {k} has sup norm {nk} outside the ball of radius {radius}");
            violations.push(BallViolation {
                iteration: k,
                norm: nk,
            });
        }
    }
    let residual = *history.last().unwrap_or(&0.0);
    Ok(PicardOutcome {
        report: FixedPointReport {
            radius,
            iterations: k,
            alpha: a,
            alpha_initial: alpha,
            residual,
            converged,
            tol,
            iterate_norms: norms,
            residual_history: history,
            ball_invariant: violations.is_empty(),
            ball_violations: violations,
        },
        solution: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, Grid};
    use crate::kernels::{affine_nonlinearity, exponential_family, urysohn_example, GMap};
    use crate::operators::{apply_hammerstein, apply_urysohn, OperatorSpec};

    fn zero_on(domain: Domain, grid: Grid) -> SampledFunction {
        SampledFunction::constant(domain, grid, &[0.0]).unwrap()
    }

    #[test]
    fn identity_converges_immediately() {
        let f0 = SampledFunction::from_fn(
            Domain::half_line(),
            Grid::uniform(1, 0.0, 1.0, 5).unwrap(),
            1,
            |x, o| o[0] = x[0] / 2.0,
        )
        .unwrap();
        let out = picard_solve(|f| Ok(f.clone()), &f0, 1.0, 0.5, 0.0, 10).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.iterations, 0);
        assert_eq!(out.report.residual, 0.0);
    }

    #[test]
    fn hammerstein_affine_converges_to_two_thirds() {
        let k = exponential_family(1, GMap::Identity, 0.25, 1).unwrap();
        let grid = Grid::uniform(1, -5.0, 5.0, 21).unwrap();
        let plan = OperatorSpec::auto_plan(&k, &Domain::real_line(), &grid, 1e-12, 2.0).unwrap();
        let spec = OperatorSpec::hammerstein(
            k,
            affine_nonlinearity(1, 1.0, 0.5),
            Domain::real_line(),
            grid.clone(),
            plan,
            1e-12,
        )
        .unwrap();
        let f0 = zero_on(Domain::real_line(), grid);
        let out = picard_solve(
            |f| Ok(apply_hammerstein(&spec, f)?.output),
            &f0,
            2.0 / 3.0,
            1.0,
            1e-10,
            60,
        )
        .unwrap();
        let r = &out.report;
        assert!(
            r.converged && r.residual < 1e-8 && r.iterations <= 60,
            "{r:?}"
        );
        for v in out.solution.values() {
            assert!((v - 2.0 / 3.0).abs() < 1e-8, "{v}");
        }
        for w in r.residual_history[1..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(r.ball_invariant);
    }

    #[test]
    fn urysohn_example_converges_inside_radius() {
        let k = urysohn_example();
        let grid = Grid::uniform(1, 0.0, 8.0, 33).unwrap();
        let plan = OperatorSpec::auto_plan_urysohn(&k, 1.5, 1e-12, 2.0).unwrap();
        let spec = OperatorSpec::urysohn(k, grid.clone(), plan, 1e-12).unwrap();
        let f0 = zero_on(Domain::half_line(), grid);
        let out = picard_solve(
            |f| Ok(apply_urysohn(&spec, f)?.output),
            &f0,
            1.5,
            0.5,
            1e-10,
            200,
        )
        .unwrap();
        let r = &out.report;
        assert!(r.converged && r.residual < 1e-8, "{r:?}");
        assert!(out.solution.sup_norm() <= 1.5);
        assert!(r.ball_invariant);
    }

    #[test]
    fn bad_start_and_divergence() {
        let grid = Grid::uniform(1, 0.0, 1.0, 3).unwrap();
        let one = SampledFunction::constant(Domain::half_line(), grid.clone(), &[1.0]).unwrap();
        assert!(picard_solve(|f| Ok(f.clone()), &one, 0.5, 0.5, 0.0, 1).is_err());
        let f0 = zero_on(Domain::half_line(), grid);
        // f -> 2f + 1 is expanding: reported, not fatal
        let out = picard_solve(
            |f| f.with_values(f.values().iter().map(|v| 2.0 * v + 1.0).collect()),
            &f0,
            1.0,
            1.0,
            1e-12,
            20,
        )
        .unwrap();
        assert!(!out.report.converged);
        assert!(!out.report.ball_invariant);
        assert!(out.report.alpha < 1.0);
        let err = picard_solve(
            |f| f.with_values(vec![f64::NAN; f.values().len()]),
            &f0,
            1.0,
            1.0,
            0.0,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
