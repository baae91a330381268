//! Application of the Fredholm, Nemytskii, Hammerstein, Urysohn and Volterra
//! operators to functions, with truncation checked against declared tails.
//!
//! Outputs are produced on a caller-chosen grid. Each output point is an
//! independent integral; they are computed in parallel and assembled in
//! grid order, so results are bitwise reproducible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{norm, Domain, Grid};
use crate::error::{Error, Result};
use crate::kernels::{
    check_car4, domain_directions, mollified_volterra, LinearKernel, NonlinearityF, UrysohnKernel,
};
use crate::linalg::{matvec, opnorm};
use crate::quadrature::{find_truncation_radius, QuadraturePlan, TensorRule};
use crate::sampled::{Field, SampledFunction};

/// Relative slack for the a-posteriori bound assertions.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Fredholm,
    Hammerstein,
    Urysohn,
    Volterra,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Fredholm => "fredholm",
            OperatorKind::Hammerstein => "hammerstein",
            OperatorKind::Urysohn => "urysohn",
            OperatorKind::Volterra => "volterra",
        }
    }
}

#[derive(Debug, Clone)]
pub enum KernelSpec {
    Linear(LinearKernel),
    Urysohn(UrysohnKernel),
}

/// Everything needed to apply one operator.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    kind: OperatorKind,
    kernel: KernelSpec,
    nonlinearity: Option<NonlinearityF>,
    output_domain: Domain,
    output_grid: Grid,
    plan: QuadraturePlan,
    eps_tail: f64,
}

/// Bounds reported alongside an operator output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplyBounds {
    /// Grid sup of `int ||K(x, y)|| dy` over the output grid plus the tail
    /// (Urysohn: `int sup_{||u|| <= ||f||} ||K||` via the envelope).
    pub car4: f64,
    pub sup_out: f64,
    /// Max of `||f||` over the quadrature nodes.
    pub sup_in: f64,
    pub tail_eps: f64,
    /// Declared tail at the plan radius for the output-grid radius.
    pub tail_bound: f64,
    /// Grid sup of `||(A f)(x)||` at `x = 2T v, 4T v` for sample directions `v`.
    pub radial_probe: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Applied {
    pub output: SampledFunction,
    pub bounds: ApplyBounds,
}

impl OperatorSpec {
    fn new(
        kind: OperatorKind,
        kernel: KernelSpec,
        nonlinearity: Option<NonlinearityF>,
        output_domain: Domain,
        output_grid: Grid,
        plan: QuadraturePlan,
        eps_tail: f64,
    ) -> Result<Self> {
        if !(eps_tail > 0.0) {
            return Err(Error::invalid("eps_tail must be positive"));
        }
        if output_grid.dim() != output_domain.dim() {
            return Err(Error::invalid(
                "output grid and output domain differ in dimension",
            ));
        }
        let mut p = vec![0.0; output_grid.dim()];
        for i in 0..output_grid.len() {
            output_grid.point_into(i, &mut p);
            output_domain.check(&p)?;
        }
        match &kernel {
            KernelSpec::Linear(k) => {
                if k.x_dim() != output_grid.dim() || k.y_dim() != plan.domain().dim() {
                    return Err(Error::invalid(format!(
                        "kernel {} maps R^{} x R^{}, but grids are R^{} and R^{}",
                        k.name(),
                        k.x_dim(),
                        k.y_dim(),
                        output_grid.dim(),
                        plan.domain().dim()
                    )));
                }
                if let Some(f) = &nonlinearity {
                    if f.value_dim() != k.value_dim() {
                        return Err(Error::invalid(
                            "nonlinearity and kernel differ in value dimension",
                        ));
                    }
                }
            }
            KernelSpec::Urysohn(_) => {
                let half = Domain::half_line();
                if plan.domain().lower() != half.lower() || plan.domain().upper() != half.upper() {
                    return Err(Error::invalid("urysohn operators integrate over [0, inf)"));
                }
                if output_grid.dim() != 1 {
                    return Err(Error::invalid(
                        "urysohn operators have one-dimensional outputs",
                    ));
                }
            }
        }
        let ok = matches!(
            (kind, &kernel, &nonlinearity),
            (OperatorKind::Fredholm, KernelSpec::Linear(_), None)
                | (OperatorKind::Volterra, KernelSpec::Linear(_), None)
                | (OperatorKind::Hammerstein, KernelSpec::Linear(_), Some(_))
                | (OperatorKind::Urysohn, KernelSpec::Urysohn(_), None)
        );
        if !ok {
            return Err(Error::invalid(format!(
                "{kind:?} needs a {} kernel{}",
                if kind == OperatorKind::Urysohn {
                    "urysohn"
                } else {
                    "linear"
                },
                if kind == OperatorKind::Hammerstein {
                    " and a nonlinearity"
                } else {
                    " and no nonlinearity"
                }
            )));
        }
        Ok(OperatorSpec {
            kind,
            kernel,
            nonlinearity,
            output_domain,
            output_grid,
            plan,
            eps_tail,
        })
    }

    pub fn fredholm(
        k: LinearKernel,
        out_domain: Domain,
        grid: Grid,
        plan: QuadraturePlan,
        eps_tail: f64,
    ) -> Result<Self> {
        Self::new(
            OperatorKind::Fredholm,
            KernelSpec::Linear(k),
            None,
            out_domain,
            grid,
            plan,
            eps_tail,
        )
    }

    pub fn volterra(
        k: LinearKernel,
        out_domain: Domain,
        grid: Grid,
        plan: QuadraturePlan,
        eps_tail: f64,
    ) -> Result<Self> {
        Self::new(
            OperatorKind::Volterra,
            KernelSpec::Linear(k),
            None,
            out_domain,
            grid,
            plan,
            eps_tail,
        )
    }

    pub fn hammerstein(
        k: LinearKernel,
        f: NonlinearityF,
        out_domain: Domain,
        grid: Grid,
        plan: QuadraturePlan,
        eps_tail: f64,
    ) -> Result<Self> {
        Self::new(
            OperatorKind::Hammerstein,
            KernelSpec::Linear(k),
            Some(f),
            out_domain,
            grid,
            plan,
            eps_tail,
        )
    }

    pub fn urysohn(
        k: UrysohnKernel,
        grid: Grid,
        plan: QuadraturePlan,
        eps_tail: f64,
    ) -> Result<Self> {
        Self::new(
            OperatorKind::Urysohn,
            KernelSpec::Urysohn(k),
            None,
            Domain::half_line(),
            grid,
            plan,
            eps_tail,
        )
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn linear_kernel(&self) -> Option<&LinearKernel> {
        match &self.kernel {
            KernelSpec::Linear(k) => Some(k),
            KernelSpec::Urysohn(_) => None,
        }
    }

    pub fn urysohn_kernel(&self) -> Option<&UrysohnKernel> {
        match &self.kernel {
            KernelSpec::Urysohn(k) => Some(k),
            KernelSpec::Linear(_) => None,
        }
    }

    pub fn nonlinearity(&self) -> Option<&NonlinearityF> {
        self.nonlinearity.as_ref()
    }

    pub fn output_domain(&self) -> &Domain {
        &self.output_domain
    }

    pub fn output_grid(&self) -> &Grid {
        &self.output_grid
    }

    pub fn plan(&self) -> &QuadraturePlan {
        &self.plan
    }

    pub fn eps_tail(&self) -> f64 {
        self.eps_tail
    }

    pub fn value_dim(&self) -> usize {
        match &self.kernel {
            KernelSpec::Linear(k) => k.value_dim(),
            KernelSpec::Urysohn(k) => k.value_dim(),
        }
    }

    /// Same operator with another kind of linear kernel, grid and plan kept.
    pub fn with_linear_kernel(&self, kind: OperatorKind, k: LinearKernel) -> Result<Self> {
        Self::new(
            kind,
            KernelSpec::Linear(k),
            if kind == OperatorKind::Hammerstein {
                self.nonlinearity.clone()
            } else {
                None
            },
            self.output_domain.clone(),
            self.output_grid.clone(),
            self.plan.clone(),
            self.eps_tail,
        )
    }

    pub fn with_output_grid(&self, grid: Grid) -> Result<Self> {
        Self::new(
            self.kind,
            self.kernel.clone(),
            self.nonlinearity.clone(),
            self.output_domain.clone(),
            grid,
            self.plan.clone(),
            self.eps_tail,
        )
    }

    pub fn with_plan(&self, plan: QuadraturePlan) -> Result<Self> {
        Self::new(
            self.kind,
            self.kernel.clone(),
            self.nonlinearity.clone(),
            self.output_domain.clone(),
            self.output_grid.clone(),
            plan,
            self.eps_tail,
        )
    }

    /// Plan over `y_domain` whose radius makes the declared domination tail
    /// at the output-grid radius at most `eps_tail`.
    pub fn auto_plan(
        k: &LinearKernel,
        y_domain: &Domain,
        grid: &Grid,
        eps_tail: f64,
        panels_per_unit: f64,
    ) -> Result<QuadraturePlan> {
        let r = grid.max_norm();
        let Some(dom) = k.domination() else {
            return Err(Error::Unsupported(format!(
                "automatic truncation needs declared tail metadata; kernel {} has none",
                k.name()
            )));
        };
        QuadraturePlan::auto(y_domain, |t| dom.tail(t, r), eps_tail, panels_per_unit)
    }

    /// Like [`Self::auto_plan`] with the Volterra tail, which only covers
    /// `y <= x` and so may exist where a domination tail does not.
    pub fn auto_plan_volterra(
        k: &LinearKernel,
        y_domain: &Domain,
        grid: &Grid,
        eps_tail: f64,
        panels_per_unit: f64,
    ) -> Result<QuadraturePlan> {
        let r = grid.max_norm();
        if k.volterra_tail(1.0, r).is_none() {
            return Err(Error::Unsupported(format!(
                "automatic truncation needs declared tail metadata; kernel {} has none",
                k.name()
            )));
        }
        QuadraturePlan::auto(
            y_domain,
            |t| k.volterra_tail(t, r).unwrap_or(f64::INFINITY),
            eps_tail,
            panels_per_unit,
        )
    }

    /// Like [`Self::auto_plan`] for a Urysohn kernel at `||f|| <= m`.
    pub fn auto_plan_urysohn(
        k: &UrysohnKernel,
        m: f64,
        eps_tail: f64,
        panels_per_unit: f64,
    ) -> Result<QuadraturePlan> {
        let Some(env) = k.envelope() else {
            return Err(Error::Unsupported(format!(
                "automatic truncation needs a declared envelope; kernel {} has none",
                k.name()
            )));
        };
        QuadraturePlan::auto(
            &Domain::half_line(),
            |t| env.tail(t, m),
            eps_tail,
            panels_per_unit,
        )
    }
}

/// `(N f)(y) = F(y, f(y))`, evaluated lazily.
pub struct Nemytskii<'a> {
    f_map: &'a NonlinearityF,
    inner: &'a dyn Field,
}

impl<'a> Nemytskii<'a> {
    pub fn new(f_map: &'a NonlinearityF, inner: &'a dyn Field) -> Self {
        Nemytskii { f_map, inner }
    }
}

impl Field for Nemytskii<'_> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.f_map.value_dim()
    }

    fn eval_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let mut z = vec![0.0; self.inner.output_dim()];
        self.inner.eval_into(y, &mut z)?;
        self.f_map.eval_into(y, &z, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(
                format!("nonlinearity {}", self.f_map.name()),
                y,
            ));
        }
        Ok(())
    }

    fn sup_norm_hint(&self) -> Option<f64> {
        self.inner.sup_norm_hint().map(|s| self.f_map.phi(s))
    }
}

fn check_tail(current: f64, tail: &dyn Fn(f64) -> f64, eps_tail: f64) -> Result<f64> {
    let at = tail(current);
    if at <= eps_tail {
        return Ok(at);
    }
    let required = find_truncation_radius(tail, eps_tail).unwrap_or(f64::INFINITY);
    Err(Error::TruncationInsufficient {
        current,
        required,
        tail: at,
        allowed: eps_tail,
    })
}

/// Values at the quadrature nodes of a rule, with the max node norm.
fn sample_on(rule: &TensorRule, f: &dyn Field) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let n = rule.dim();
    let d = f.output_dim();
    let mut nodes = Vec::with_capacity(rule.len() * n);
    let mut weights = Vec::with_capacity(rule.len());
    let mut values = Vec::with_capacity(rule.len() * d);
    let mut buf = vec![0.0; d];
    let mut sup = 0.0f64;
    rule.for_each(|y, w| {
        f.eval_into(y, &mut buf)?;
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("input function", y));
        }
        sup = sup.max(norm(&buf));
        nodes.extend_from_slice(y);
        weights.push(w);
        values.extend_from_slice(&buf);
        Ok(())
    })?;
    Ok((nodes, weights, values, sup))
}

struct PointResult {
    value: Vec<f64>,
    knorm: f64,
    sup_in: f64,
}

/// `sum_j w_j K(x, y_j) f(y_j)` over `rule`, with `sum_j w_j ||K(x, y_j)||`.
fn linear_at(k: &LinearKernel, x: &[f64], rule: &TensorRule, f: &dyn Field) -> Result<PointResult> {
    let d = k.value_dim();
    let mut kv = vec![0.0; d * d];
    let mut fv = vec![0.0; d];
    let mut prod = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut knorm = 0.0;
    let mut sup_in = 0.0f64;
    rule.for_each(|y, w| {
        f.eval_into(y, &mut fv)?;
        k.eval_into(x, y, &mut kv);
        if kv.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(
                format!("kernel {} at x = {x:?}", k.name()),
                y,
            ));
        }
        if fv.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("input function", y));
        }
        sup_in = sup_in.max(norm(&fv));
        knorm += w * opnorm(&kv, d);
        matvec(&kv, &fv, &mut prod);
        for (a, p) in acc.iter_mut().zip(&prod) {
            *a += w * p;
        }
        Ok(())
    })?;
    Ok(PointResult {
        value: acc,
        knorm,
        sup_in,
    })
}

fn radial_points(domain: &Domain, t: f64) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let dirs: Vec<Vec<f64>> = if n == 1 {
        domain_directions(domain)
    } else {
        // axis directions keep the probe cheap in higher dimensions
        (0..n)
            .flat_map(|k| {
                [1.0, -1.0].into_iter().map(move |s| {
                    let mut v = vec![0.0; n];
                    v[k] = s;
                    v
                })
            })
            .filter(|v| domain.contains(&v.iter().map(|c| c * t).collect::<Vec<_>>()))
            .collect()
    };
    let mut pts = Vec::new();
    for v in dirs {
        for s in [2.0, 4.0] {
            pts.push(v.iter().map(|c| c * s * t).collect());
        }
    }
    pts
}

fn apply_linear(spec: &OperatorSpec, f: &dyn Field, volterra: bool) -> Result<Applied> {
    let k = spec.linear_kernel().expect("linear operator");
    let d = k.value_dim();
    if f.output_dim() != d || f.input_dim() != k.y_dim() {
        return Err(Error::invalid(format!(
            "input function maps R^{} -> R^{}, kernel expects R^{} -> R^{d}",
            f.input_dim(),
            f.output_dim(),
            k.y_dim()
        )));
    }
    let plan = &spec.plan;
    let r = spec.output_grid.max_norm();
    let t = plan.truncation_radius();
    let tail_fn = |tt: f64| -> f64 {
        let declared = if volterra {
            k.volterra_tail(tt, r)
        } else {
            k.domination_tail(tt, r)
        };
        declared.unwrap_or(if tt == t {
            plan.tail_bound()
        } else {
            f64::INFINITY
        })
    };
    let tail_bound = check_tail(t, &tail_fn, spec.eps_tail)?;
    let rule_for = |x: &[f64]| {
        let base = if volterra {
            plan.rule().clip_upper(x)
        } else {
            plan.rule().clone()
        };
        base.split_at(&k.breakpoints(x))
    };
    let grid = &spec.output_grid;
    let results = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            linear_at(k, &x, &rule_for(&x), f)
        })
        .collect::<Result<Vec<PointResult>>>()?;
    let mut values = Vec::with_capacity(grid.len() * d);
    let mut car4 = 0.0f64;
    let mut sup_in = 0.0f64;
    let mut sup_out = 0.0f64;
    for (i, pr) in results.iter().enumerate() {
        let out_norm = norm(&pr.value);
        // |sum w K f| <= sup|f| sum w ||K|| holds exactly for positive weights
        if out_norm > pr.sup_in * pr.knorm * (1.0 + BOUND_SLACK) + 1e-300 {
            return Err(Error::Invariant(format!(
                "boundedness estimate violated at {:?}: {out_norm} > {} * {}",
                grid.point(i),
                pr.sup_in,
                pr.knorm
            )));
        }
        values.extend_from_slice(&pr.value);
        car4 = car4.max(pr.knorm);
        sup_in = sup_in.max(pr.sup_in);
        sup_out = sup_out.max(out_norm);
    }
    let radial_probe = if volterra {
        None
    } else {
        let pts: Vec<Vec<f64>> = radial_points(&spec.output_domain, t);
        let vals = pts
            .par_iter()
            .map(|x| linear_at(k, x, &rule_for(x), f).map(|p| norm(&p.value)))
            .collect::<Result<Vec<f64>>>()?;
        vals.into_iter().reduce(f64::max)
    };
    let output = SampledFunction::new(spec.output_domain.clone(), grid.clone(), d, values)?;
    Ok(Applied {
        output,
        bounds: ApplyBounds {
            car4: car4 + tail_bound,
            sup_out,
            sup_in,
            tail_eps: spec.eps_tail,
            tail_bound,
            radial_probe,
        },
    })
}

/// `(T f)(x) = int K(x, y) f(y) dy` on the output grid.
pub fn apply_fredholm(spec: &OperatorSpec, f: &dyn Field) -> Result<Applied> {
    if !matches!(
        spec.kind,
        OperatorKind::Fredholm | OperatorKind::Hammerstein
    ) {
        return Err(Error::invalid(format!(
            "apply_fredholm on a {:?} operator",
            spec.kind
        )));
    }
    apply_linear(spec, f, false)
}

/// `(V f)(x) = int_{y <= x} K(x, y) f(y) dy`, the region `y_k <= x_k` cut
/// out of the quadrature panels exactly.
pub fn apply_volterra(spec: &OperatorSpec, f: &dyn Field) -> Result<Applied> {
    if spec.kind != OperatorKind::Volterra {
        return Err(Error::invalid(format!(
            "apply_volterra on a {:?} operator",
            spec.kind
        )));
    }
    apply_linear(spec, f, true)
}

/// `(N f)(y) = F(y, f(y))` on the grid of `f`.
pub fn apply_nemytskii(f_map: &NonlinearityF, f: &SampledFunction) -> Result<SampledFunction> {
    if f_map.value_dim() != f.value_dim() {
        return Err(Error::invalid(
            "nonlinearity and function differ in value dimension",
        ));
    }
    let grid = f.grid();
    let d = f.value_dim();
    let mut values = vec![0.0; grid.len() * d];
    let mut y = vec![0.0; grid.dim()];
    for (i, out) in values.chunks_mut(d).enumerate() {
        grid.point_into(i, &mut y);
        f_map.eval_into(&y, f.value_at(i), out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(
                format!("nonlinearity {}", f_map.name()),
                &y,
            ));
        }
    }
    let out = f.with_values(values)?;
    let bound = f_map.phi(f.sup_norm());
    if out.sup_norm() > bound * (1.0 + BOUND_SLACK) + 1e-300 {
        return Err(Error::Invariant(format!(
            "growth bound violated: ||N f|| = {} > phi(||f||) = {bound}",
            out.sup_norm()
        )));
    }
    Ok(out)
}

/// `(H f)(x) = int K(x, y) F(y, f(y)) dy`, computed as the Fredholm operator
/// applied to the Nemytskii image of `f`.
pub fn apply_hammerstein(spec: &OperatorSpec, f: &dyn Field) -> Result<Applied> {
    if spec.kind != OperatorKind::Hammerstein {
        return Err(Error::invalid(format!(
            "apply_hammerstein on a {:?} operator",
            spec.kind
        )));
    }
    let f_map = spec.nonlinearity.as_ref().expect("checked at construction");
    let nf = Nemytskii::new(f_map, f);
    let applied = apply_linear(spec, &nf, false)?;
    // sup ||F(y, f(y))|| over nodes <= phi(sup ||f||) by monotonicity of phi
    let phi = f_map.phi(f.sup_norm_hint().unwrap_or(f64::INFINITY));
    if applied.bounds.sup_in > phi * (1.0 + BOUND_SLACK) + 1e-300 {
        return Err(Error::Invariant(format!(
            "growth bound violated: sup ||F(y, f(y))|| = {} > {phi}",
            applied.bounds.sup_in
        )));
    }
    Ok(applied)
}

/// `(U f)(x) = int_0^inf K(x, y, f(y)) dy` on the output grid.
pub fn apply_urysohn(spec: &OperatorSpec, f: &dyn Field) -> Result<Applied> {
    if spec.kind != OperatorKind::Urysohn {
        return Err(Error::invalid(format!(
            "apply_urysohn on a {:?} operator",
            spec.kind
        )));
    }
    let k = spec.urysohn_kernel().expect("checked at construction");
    let d = k.value_dim();
    if f.output_dim() != d || f.input_dim() != 1 {
        return Err(Error::invalid(
            "urysohn input must map R -> R^d with the kernel's d",
        ));
    }
    let plan = &spec.plan;
    let t = plan.truncation_radius();
    let (nodes, weights, fvals, node_sup) = sample_on(plan.rule(), f)?;
    let m = f.sup_norm_hint().unwrap_or(node_sup).max(node_sup);
    let tail_fn = |tt: f64| match k.envelope() {
        Some(env) => env.tail(tt, m),
        None if tt == t => plan.tail_bound(),
        None => f64::INFINITY,
    };
    let tail_bound = check_tail(t, &tail_fn, spec.eps_tail)?;
    let grid = &spec.output_grid;
    let results = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i)[0];
            let mut acc = vec![0.0; d];
            let mut buf = vec![0.0; d];
            for (j, (y, w)) in nodes.iter().zip(&weights).enumerate() {
                k.eval_into(x, *y, &fvals[j * d..(j + 1) * d], &mut buf);
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(
                        format!("urysohn kernel {} at x = {x}", k.name()),
                        &[*y],
                    ));
                }
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += w * b;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let values: Vec<f64> = results.concat();
    let output = SampledFunction::new(spec.output_domain.clone(), grid.clone(), d, values)?;
    let sup_out = output.sup_norm();
    let car4 = match k.envelope() {
        Some(env) => plan.integrate_scalar(|y| env.bound(y[0], m))? + tail_bound,
        None => f64::NAN,
    };
    if car4.is_finite() && sup_out > car4 * (1.0 + 1e-9) + 1e-300 {
        return Err(Error::Invariant(format!(
            "urysohn output {sup_out} exceeds the envelope bound {car4}"
        )));
    }
    Ok(Applied {
        output,
        bounds: ApplyBounds {
            car4,
            sup_out,
            sup_in: node_sup,
            tail_eps: spec.eps_tail,
            tail_bound,
            radial_probe: None,
        },
    })
}

/// Dispatch on the operator kind.
pub fn apply(spec: &OperatorSpec, f: &dyn Field) -> Result<Applied> {
    match spec.kind {
        OperatorKind::Fredholm => apply_fredholm(spec, f),
        OperatorKind::Hammerstein => apply_hammerstein(spec, f),
        OperatorKind::Urysohn => apply_urysohn(spec, f),
        OperatorKind::Volterra => apply_volterra(spec, f),
    }
}

/// One row of a Volterra approximation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolterraApprox {
    pub m: u32,
    /// Grid sup of `||F_m f - V f||`.
    pub error: f64,
    /// In one dimension `sup_x int_x^{x + 1/m} ||K(x, y)|| dy`; otherwise the
    /// exact `sup_x int ||K_m(x, y) - K(x, y) 1_{y <= x}|| dy`.
    pub bound: f64,
    /// `sup_x int ||K_m(x, y) - K(x, y) 1_{y <= x}|| dy`.
    pub l1_gap: f64,
    /// Quadrature tolerance the comparison allows.
    pub tolerance: f64,
}

/// `||F_m f - V f||` on the output grid of `spec` (a Volterra spec), where
/// `F_m` is the Fredholm operator of the mollified kernel, together with the
/// strip bound.
pub fn volterra_approx_error(spec: &OperatorSpec, f: &dyn Field, m: u32) -> Result<VolterraApprox> {
    if spec.kind != OperatorKind::Volterra {
        return Err(Error::invalid(
            "volterra_approx_error needs a Volterra spec",
        ));
    }
    if let Some(s) = f.sup_norm_hint() {
        if s > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "input must lie in the unit ball, sup norm is {s}"
            )));
        }
    }
    let k = spec.linear_kernel().expect("linear");
    let km = mollified_volterra(k, m)?;
    let fred = spec.with_linear_kernel(OperatorKind::Fredholm, km.clone())?;
    let a = apply_fredholm(&fred, f)?.output;
    let b = apply_volterra(spec, f)?.output;
    let error = a.sup_distance(&b, None)?.value;
    let d = k.value_dim();
    let grid = spec.output_grid();
    let plan = spec.plan();
    let n = k.x_dim();
    let mf = f64::from(m);
    let per_x = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut br = km.breakpoints(&x);
            br.resize(n, Vec::new());
            let rule = plan.rule().split_at(&br);
            let (mut kv, mut kmv) = (vec![0.0; d * d], vec![0.0; d * d]);
            let mut strip = 0.0;
            let mut gap = 0.0;
            rule.for_each(|y, w| {
                k.eval_into(&x, y, &mut kv);
                let inside = y.iter().zip(&x).all(|(yk, xk)| yk <= xk);
                let in_strip = y
                    .iter()
                    .zip(&x)
                    .all(|(yk, xk)| *yk > *xk && *yk < xk + 1.0 / mf);
                km.eval_into(&x, y, &mut kmv);
                if inside {
                    for (a, b) in kmv.iter_mut().zip(&kv) {
                        *a -= b;
                    }
                }
                gap += w * opnorm(&kmv, d);
                if in_strip {
                    strip += w * opnorm(&kv, d);
                }
                Ok(())
            })?;
            Ok((strip, gap))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let strip = per_x.iter().map(|p| p.0).fold(0.0, f64::max);
    let l1_gap = per_x.iter().map(|p| p.1).fold(0.0, f64::max);
    let bound = if n == 1 { strip } else { l1_gap };
    Ok(VolterraApprox {
        m,
        error,
        bound,
        l1_gap,
        tolerance: 1e-8,
    })
}

/// Fit of `log(error)` against `log(m)` by least squares.
pub fn loglog_slope(rows: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Grid sup estimate of the uniform integral bound on the output grid.
pub fn car4_on_grid(spec: &OperatorSpec) -> Result<f64> {
    let k = spec
        .linear_kernel()
        .ok_or_else(|| Error::invalid("car4_on_grid needs a linear kernel"))?;
    let xs: Vec<Vec<f64>> = spec.output_grid.points().collect();
    Ok(check_car4(k, &xs, &spec.plan)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        affine_nonlinearity, exp_growth, exp_separable, exponential_family, identity_nonlinearity,
        tanh_nonlinearity, urysohn_example, urysohn_u_independent, urysohn_zero, zero_kernel,
        zero_nonlinearity, GMap,
    };
    use crate::sampled::scalar_field;

    fn line_grid(a: f64, b: f64, n: usize) -> Grid {
        Grid::uniform(1, a, b, n).unwrap()
    }

    fn abs_exp(scale: f64) -> LinearKernel {
        exponential_family(1, GMap::Identity, scale, 1).unwrap()
    }

    fn real_spec(k: LinearKernel) -> OperatorSpec {
        let grid = line_grid(-5.0, 5.0, 21);
        let plan = OperatorSpec::auto_plan(&k, &Domain::real_line(), &grid, 1e-10, 2.0).unwrap();
        OperatorSpec::fredholm(k, Domain::real_line(), grid, plan, 1e-10).unwrap()
    }

    #[test]
    fn fredholm_of_constant_is_two() {
        let spec = real_spec(abs_exp(1.0));
        let one = scalar_field(1, |_| 1.0);
        let r = apply_fredholm(&spec, &one).unwrap();
        for v in r.output.values() {
            assert!((v - 2.0).abs() < 1e-8, "{v}");
        }
        assert!(r.bounds.car4 >= 2.0 - 1e-8);
        let zero = scalar_field(1, |_| 0.0);
        assert!(apply_fredholm(&spec, &zero)
            .unwrap()
            .output
            .values()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn fredholm_of_separable_kernel() {
        let k = exp_separable(1.0);
        let grid = line_grid(0.0, 5.0, 11);
        let plan = OperatorSpec::auto_plan(&k, &Domain::half_line(), &grid, 1e-12, 2.0).unwrap();
        let spec =
            OperatorSpec::fredholm(k, Domain::half_line(), grid.clone(), plan, 1e-12).unwrap();
        let f = scalar_field(1, |y| (-y[0]).exp());
        let r = apply_fredholm(&spec, &f).unwrap();
        for (x, v) in grid.points().zip(r.output.values()) {
            assert!((v - (-x[0]).exp() / 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_that_is_too_short_names_the_required_radius() {
        let k = abs_exp(1.0);
        let grid = line_grid(-5.0, 5.0, 3);
        let plan = QuadraturePlan::build(&Domain::real_line(), 10.0, 10).unwrap();
        let spec = OperatorSpec::fredholm(k, Domain::real_line(), grid, plan, 1e-8).unwrap();
        match apply_fredholm(&spec, &scalar_field(1, |_| 1.0)) {
            Err(Error::TruncationInsufficient {
                required, current, ..
            }) => {
                assert_eq!(current, 10.0);
                assert!((2.0 * (-(required - 5.0)).exp()) <= 1e-8);
                assert!(required > 20.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nemytskii_examples() {
        let grid = line_grid(0.0, 1.0, 5);
        let f = SampledFunction::constant(Domain::half_line(), grid.clone(), &[3.0]).unwrap();
        let t = apply_nemytskii(&tanh_nonlinearity(1), &f).unwrap();
        for v in t.values() {
            assert!((v - 3f64.tanh()).abs() < 1e-15);
            assert!((v - 0.99505).abs() < 1e-5);
        }
        assert!(t.sup_norm() <= 1.0);
        assert_eq!(apply_nemytskii(&identity_nonlinearity(1), &f).unwrap(), f);
        assert!(apply_nemytskii(&zero_nonlinearity(1), &f)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn hammerstein_with_identity_is_fredholm_bitwise() {
        let k = abs_exp(1.0);
        let grid = line_grid(-5.0, 5.0, 11);
        let plan = OperatorSpec::auto_plan(&k, &Domain::real_line(), &grid, 1e-10, 2.0).unwrap();
        let fred = OperatorSpec::fredholm(
            k.clone(),
            Domain::real_line(),
            grid.clone(),
            plan.clone(),
            1e-10,
        )
        .unwrap();
        let ham = OperatorSpec::hammerstein(
            k,
            identity_nonlinearity(1),
            Domain::real_line(),
            grid,
            plan,
            1e-10,
        )
        .unwrap();
        let f = scalar_field(1, |y| (y[0] * 0.7).sin() * (-0.1 * y[0].abs()).exp());
        let a = apply_fredholm(&fred, &f).unwrap().output;
        let b = apply_hammerstein(&ham, &f).unwrap().output;
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn hammerstein_fixed_point_value() {
        let k = abs_exp(0.25);
        let grid = line_grid(-5.0, 5.0, 11);
        let plan = OperatorSpec::auto_plan(&k, &Domain::real_line(), &grid, 1e-11, 2.0).unwrap();
        let spec = OperatorSpec::hammerstein(
            k,
            affine_nonlinearity(1, 1.0, 0.5),
            Domain::real_line(),
            grid,
            plan,
            1e-11,
        )
        .unwrap();
        let f = scalar_field(1, |_| 2.0 / 3.0);
        let r = apply_hammerstein(&spec, &f).unwrap();
        for v in r.output.values() {
            assert!((v - 2.0 / 3.0).abs() < 1e-8, "{v}");
        }
        let zero = OperatorSpec::hammerstein(
            abs_exp(0.25),
            tanh_nonlinearity(1),
            Domain::real_line(),
            line_grid(-1.0, 1.0, 3),
            QuadraturePlan::build(&Domain::real_line(), 40.0, 20).unwrap(),
            1e-8,
        )
        .unwrap();
        let out = apply_hammerstein(&zero, &scalar_field(1, |_| 0.0)).unwrap();
        assert!(out.output.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn urysohn_examples() {
        let grid = line_grid(0.0, 4.0, 9);
        let plan = OperatorSpec::auto_plan_urysohn(&urysohn_example(), 1.0, 1e-12, 2.0).unwrap();
        let spec =
            OperatorSpec::urysohn(urysohn_u_independent(), grid.clone(), plan.clone(), 1e-12)
                .unwrap();
        let one = scalar_field(1, |_| 1.0);
        let r = apply_urysohn(&spec, &one).unwrap();
        for (x, v) in grid.points().zip(r.output.values()) {
            assert!((v - (-x[0]).exp()).abs() < 1e-8);
        }
        let spec =
            OperatorSpec::urysohn(urysohn_example(), grid.clone(), plan.clone(), 1e-12).unwrap();
        let one_s =
            SampledFunction::constant(Domain::half_line(), line_grid(0.0, 1.0, 2), &[1.0]).unwrap();
        let r = apply_urysohn(&spec, &one_s).unwrap();
        for (x, v) in grid.points().zip(r.output.values()) {
            assert!((v - 1.5 * (-x[0]).exp()).abs() < 1e-8);
        }
        let spec = OperatorSpec::urysohn(urysohn_zero(1), grid, plan, 1e-12).unwrap();
        assert!(apply_urysohn(&spec, &one)
            .unwrap()
            .output
            .values()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn volterra_examples() {
        let grid = line_grid(-3.0, 3.0, 13);
        let plan = QuadraturePlan::build(&Domain::real_line(), 40.0, 40).unwrap();
        let spec = OperatorSpec::volterra(
            exp_growth(),
            Domain::real_line(),
            grid.clone(),
            plan.clone(),
            1e-8,
        )
        .unwrap();
        let one = scalar_field(1, |_| 1.0);
        let r = apply_volterra(&spec, &one).unwrap();
        for (x, v) in grid.points().zip(r.output.values()) {
            assert!((v - x[0].exp()).abs() < 1e-8, "{x:?} {v}");
        }
        let spec =
            OperatorSpec::volterra(abs_exp(1.0), Domain::real_line(), grid, plan, 1e-8).unwrap();
        let r = apply_volterra(&spec, &one).unwrap();
        for v in r.output.values() {
            assert!((v - 1.0).abs() < 1e-8, "{v}");
        }
        let r0 = apply_volterra(&spec, &scalar_field(1, |_| 0.0)).unwrap();
        assert!(r0.output.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn volterra_approximation_shrinks_like_one_over_m() {
        let grid = line_grid(-3.0, 3.0, 13);
        let plan = QuadraturePlan::build(&Domain::real_line(), 40.0, 40).unwrap();
        let spec =
            OperatorSpec::volterra(abs_exp(1.0), Domain::real_line(), grid, plan, 1e-8).unwrap();
        let f = scalar_field(1, |y| (0.5 * y[0]).cos() * (-0.5 * y[0].abs()).exp());
        let mut rows = Vec::new();
        for m in [1u32, 2, 4, 8, 16, 32, 64] {
            let a = volterra_approx_error(&spec, &f, m).unwrap();
            assert!(a.error <= a.bound + 1e-8, "{a:?}");
            assert!(a.l1_gap <= a.bound + 1e-12);
            rows.push((f64::from(m), a.error));
        }
        let s = loglog_slope(&rows).unwrap();
        assert!((-1.3..=-0.7).contains(&s), "{s}");
        let zspec = spec
            .with_linear_kernel(OperatorKind::Volterra, zero_kernel(1, 1))
            .unwrap();
        assert_eq!(volterra_approx_error(&zspec, &f, 4).unwrap().error, 0.0);
    }

    #[test]
    fn spec_rejects_inconsistent_kinds() {
        let grid = line_grid(0.0, 1.0, 2);
        let plan = QuadraturePlan::build(&Domain::half_line(), 1.0, 1).unwrap();
        assert!(OperatorSpec::urysohn(
            urysohn_example(),
            grid.clone(),
            QuadraturePlan::build(&Domain::real_line(), 1.0, 1).unwrap(),
            1e-8
        )
        .is_err());
        assert!(OperatorSpec::fredholm(
            exponential_family(2, GMap::Identity, 1.0, 1).unwrap(),
            Domain::half_line(),
            grid,
            plan,
            1e-8
        )
        .is_err());
    }
}
