//! Truncated composite Gauss–Legendre quadrature over unbounded domains.
//!
//! An integral over the domain is split into the part inside the box
//! `[-T, T]^n` (intersected with the domain) and the tail outside it. The
//! truncated part is computed with tensorized composite 8-point
//! Gauss–Legendre panels; the tail is never estimated here; it is supplied
//! by the caller as a bound derived from a dominating function.
//!
//! The box `[-T, T]^n` contains the Euclidean ball of radius `T`, so any
//! bound on the integral over `{||y|| > T}` also bounds the omitted part.

use serde::{Deserialize, Serialize};

use crate::domain::{norm, Domain, Grid};
use crate::error::{Error, Result};

/// Points per panel.
pub const PANEL_POINTS: usize = 8;

/// Largest radius tried by [`find_truncation_radius`].
pub const MAX_TRUNCATION_RADIUS: f64 = 1_099_511_627_776.0; // 2^40

/// Bisection steps after the doubling phase of [`find_truncation_radius`].
pub const TRUNCATION_BISECTION_STEPS: usize = 20;

/// Cap on panels per axis used by [`refine_until`].
pub const MAX_REFINE_PANELS: usize = 4096;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            // derivative from P_n and P_{n-1}
            dp = n as f64 * (z * p - p0) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn reference_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_POINTS))
}

/// One-dimensional composite rule described by its panel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRule {
    edges: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl AxisRule {
    /// Rule with 8 Gauss points on each panel `[edges[i], edges[i+1]]`.
    /// An empty or single-edge list gives the empty rule.
    pub fn from_edges(edges: Vec<f64>) -> Self {
        let (ref_nodes, ref_weights) = reference_rule();
        let panels = edges.len().saturating_sub(1);
        let mut nodes = Vec::with_capacity(panels * PANEL_POINTS);
        let mut weights = Vec::with_capacity(panels * PANEL_POINTS);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (t, wt) in ref_nodes.iter().zip(ref_weights) {
                nodes.push(mid + half * t);
                weights.push(half * wt);
            }
        }
        AxisRule {
            edges,
            nodes,
            weights,
        }
    }

    /// `panels` equal panels on `[a, b]`.
    pub fn composite(a: f64, b: f64, panels: usize) -> Self {
        let h = (b - a) / panels as f64;
        let edges = (0..=panels)
            .map(|i| if i == panels { b } else { a + h * i as f64 })
            .collect();
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lower(&self) -> Option<f64> {
        self.edges.first().copied()
    }

    pub fn upper(&self) -> Option<f64> {
        self.edges.last().copied()
    }

    /// Subdivide every panel that strictly contains one of `breaks`.
    pub fn split_at(&self, breaks: &[f64]) -> Self {
        if self.edges.len() < 2 || breaks.is_empty() {
            return self.clone();
        }
        let (lo, hi) = (self.edges[0], self.edges[self.edges.len() - 1]);
        let mut edges = self.edges.clone();
        let scale = (hi - lo).abs().max(1.0);
        for &b in breaks {
            if b > lo && b < hi {
                edges.push(b);
            }
        }
        edges.sort_by(f64::total_cmp);
        // merge edges closer than rounding noise so no degenerate panels appear
        let mut merged: Vec<f64> = Vec::with_capacity(edges.len());
        for e in edges {
            match merged.last() {
                Some(last) if (e - last).abs() <= 1e-14 * scale => {}
                _ => merged.push(e),
            }
        }
        if let Some(last) = merged.last_mut() {
            *last = hi;
        }
        Self::from_edges(merged)
    }

    /// Restrict to `(-inf, c]`; the panel containing `c` is cut at `c`.
    pub fn clip_upper(&self, c: f64) -> Self {
        let split = self.split_at(&[c]);
        let edges: Vec<f64> = split.edges.iter().copied().filter(|e| *e <= c).collect();
        Self::from_edges(edges)
    }

    /// Restrict to `[c, inf)`.
    pub fn clip_lower(&self, c: f64) -> Self {
        let split = self.split_at(&[c]);
        let edges: Vec<f64> = split.edges.iter().copied().filter(|e| *e >= c).collect();
        Self::from_edges(edges)
    }
}

/// Tensor product of axis rules.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRule {
    axes: Vec<AxisRule>,
}

impl TensorRule {
    pub fn new(axes: Vec<AxisRule>) -> Self {
        TensorRule { axes }
    }

    pub fn axes(&self) -> &[AxisRule] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(AxisRule::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split axis `k` at the given coordinates for every k.
    pub fn split_at(&self, breaks: &[Vec<f64>]) -> Self {
        TensorRule {
            axes: self
                .axes
                .iter()
                .enumerate()
                .map(|(k, a)| match breaks.get(k) {
                    Some(b) if !b.is_empty() => a.split_at(b),
                    _ => a.clone(),
                })
                .collect(),
        }
    }

    /// Restrict to `{y : y_k <= c_k for all k}`.
    pub fn clip_upper(&self, c: &[f64]) -> Self {
        TensorRule {
            axes: self
                .axes
                .iter()
                .zip(c)
                .map(|(a, ck)| a.clip_upper(*ck))
                .collect(),
        }
    }

    /// Visit every node with its weight, in lexicographic order.
    pub fn for_each<F>(&self, mut visit: F) -> Result<()>
    where
        F: FnMut(&[f64], f64) -> Result<()>,
    {
        let n = self.axes.len();
        if self.is_empty() {
            return Ok(());
        }
        let mut idx = vec![0usize; n];
        let mut p: Vec<f64> = self.axes.iter().map(|a| a.nodes[0]).collect();
        loop {
            let w: f64 = (0..n).map(|k| self.axes[k].weights[idx[k]]).product();
            visit(&p, w)?;
            // odometer, last axis fastest
            let mut k = n;
            loop {
                if k == 0 {
                    return Ok(());
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.axes[k].len() {
                    p[k] = self.axes[k].nodes[idx[k]];
                    break;
                }
                idx[k] = 0;
                p[k] = self.axes[k].nodes[0];
            }
        }
    }

    /// Weighted node sum of a vector-valued integrand; `dim_out` components.
    pub fn integrate<F>(&self, dim_out: usize, mut integrand: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        let mut acc = vec![0.0; dim_out];
        let mut buf = vec![0.0; dim_out];
        self.for_each(|y, w| {
            integrand(y, &mut buf)?;
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("integrand", y));
            }
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
            Ok(())
        })?;
        Ok(acc)
    }

    pub fn integrate_scalar<F>(&self, mut integrand: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let v = self.integrate(1, |y, out| {
            out[0] = integrand(y);
            Ok(())
        })?;
        Ok(v[0])
    }

    pub fn weight_sum(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.weights.iter().sum::<f64>())
            .product()
    }
}

/// Truncation radius plus tensorized node/weight set over the truncated
/// region, and a certified bound on the omitted tail.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraturePlan {
    domain: Domain,
    truncation_radius: f64,
    panels_per_axis: usize,
    rule: TensorRule,
    tail_bound: f64,
}

/// Report form of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    #[serde(rename = "T")]
    pub truncation_radius: f64,
    pub panels: usize,
    pub nodes: usize,
    pub tail_bound: f64,
}

impl QuadraturePlan {
    /// Composite 8-point Gauss–Legendre rule on the domain clipped to
    /// `[-T, T]^n`, `panels_per_axis` equal panels per axis. The tail bound
    /// starts at zero.
    pub fn build(domain: &Domain, t: f64, panels_per_axis: usize) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::invalid(format!(
                "truncation radius must be positive, got {t}"
            )));
        }
        if panels_per_axis == 0 {
            return Err(Error::invalid("panels_per_axis must be at least 1"));
        }
        let axes = domain
            .truncated_box(t)
            .into_iter()
            .map(|(a, b)| {
                if a < b {
                    Ok(AxisRule::composite(a, b, panels_per_axis))
                } else {
                    Err(Error::invalid(format!(
                        "truncated region is empty at T = {t} ({})",
                        domain.describe()
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadraturePlan {
            domain: domain.clone(),
            truncation_radius: t,
            panels_per_axis,
            rule: TensorRule::new(axes),
            tail_bound: 0.0,
        })
    }

    /// Plan whose radius is chosen by [`find_truncation_radius`] so that
    /// `tail(T) <= eps_tail`, with roughly `panels_per_unit` panels per unit
    /// length on each axis (at least one). The tail bound is attached.
    pub fn auto<F>(domain: &Domain, tail: F, eps_tail: f64, panels_per_unit: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        let t = find_truncation_radius(&tail, eps_tail)?;
        let width = domain
            .truncated_box(t)
            .iter()
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max);
        let panels = ((width * panels_per_unit).ceil() as usize).max(1);
        // even panel counts keep 0 on a panel edge for symmetric boxes
        let panels = panels + panels % 2;
        Ok(Self::build(domain, t, panels)?.with_tail_bound(tail(t)))
    }

    /// Attach the caller-certified bound on the omitted integral.
    pub fn with_tail_bound(mut self, tail: f64) -> Self {
        self.tail_bound = tail;
        self
    }

    /// Evaluate a tail function at this plan's radius and attach it.
    pub fn attach_tail_bound<F: Fn(f64) -> f64>(self, tail: F) -> Self {
        let t = self.truncation_radius;
        self.with_tail_bound(tail(t))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    pub fn panels_per_axis(&self) -> usize {
        self.panels_per_axis
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn rule(&self) -> &TensorRule {
        &self.rule
    }

    pub fn node_count(&self) -> usize {
        self.rule.len()
    }

    /// The nodes as a tensor grid (same lexicographic order as
    /// [`Self::nodes_and_weights`]).
    pub fn node_grid(&self) -> Result<Grid> {
        Grid::new(
            self.rule
                .axes()
                .iter()
                .map(|a| a.nodes().to_vec())
                .collect(),
        )
    }

    /// All nodes (flattened, `n` coordinates each) and weights.
    pub fn nodes_and_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::with_capacity(self.node_count() * self.domain.dim());
        let mut weights = Vec::with_capacity(self.node_count());
        self.rule
            .for_each(|y, w| {
                nodes.extend_from_slice(y);
                weights.push(w);
                Ok(())
            })
            .expect("visitor is infallible");
        (nodes, weights)
    }

    /// Weighted node sum. Does not add the tail bound.
    pub fn integrate<F>(&self, dim_out: usize, integrand: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        self.rule.integrate(dim_out, integrand)
    }

    pub fn integrate_scalar<F>(&self, integrand: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        self.rule.integrate_scalar(integrand)
    }

    /// Volume of the truncated region.
    pub fn region_volume(&self) -> f64 {
        self.domain
            .truncated_box(self.truncation_radius)
            .iter()
            .map(|(a, b)| b - a)
            .product()
    }

    /// Same radius and tail, twice the panels per axis.
    pub fn refined(&self) -> Result<Self> {
        Ok(Self::build(
            &self.domain,
            self.truncation_radius,
            self.panels_per_axis * 2,
        )?
        .with_tail_bound(self.tail_bound))
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            truncation_radius: self.truncation_radius,
            panels: self.panels_per_axis,
            nodes: self.node_count(),
            tail_bound: self.tail_bound,
        }
    }
}

/// Smallest radius in `1, 2, 4, ...` with `tail(T) <= eps`, refined by
/// bisection between the last failing and first passing radius. The
/// returned radius always satisfies `tail(T) <= eps`.
///
/// `tail` should be nonincreasing; if it is not, the result still satisfies
/// the bound but need not be the smallest such radius.
pub fn find_truncation_radius<F>(tail: F, eps: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let passes = |t: f64| {
        let v = tail(t);
        v.is_finite() && v <= eps
    };
    let mut t = 1.0;
    if passes(t) {
        return Ok(t);
    }
    let mut lo = t;
    loop {
        t *= 2.0;
        if t > MAX_TRUNCATION_RADIUS {
            return Err(Error::NoConvergence {
                message: format!(
                    "tail stays above {eps:e} for every radius up to 2^40; the tail condition is likely violated"
                ),
                best: None,
            });
        }
        if passes(t) {
            break;
        }
        lo = t;
    }
    let mut hi = t;
    for _ in 0..TRUNCATION_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!(passes(hi), "returned radius must satisfy the tail bound");
    Ok(hi)
}

/// Panel edges accumulating geometrically at `center`: `center ± width/2^k`
/// for `k = 0..levels`. Splitting a rule at these isolates a point kink in
/// ever smaller panels.
pub fn graded_breaks(center: f64, width: f64, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * levels + 1);
    out.push(center);
    let mut h = width;
    for _ in 0..levels {
        out.push(center - h);
        out.push(center + h);
        h *= 0.5;
    }
    out
}

/// Result of [`refine_until`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub value: Vec<f64>,
    pub error_estimate: f64,
    pub panels: usize,
}

/// Double the panel count until two successive values differ by less than
/// `tol` (Euclidean norm). Fails at 4096 panels per axis, attaching the
/// best value in the error.
pub fn refine_until<F>(
    domain: &Domain,
    t: f64,
    dim_out: usize,
    integrand: F,
    tol: f64,
) -> Result<Refinement>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let mut panels = 1;
    let mut prev = QuadraturePlan::build(domain, t, panels)?.integrate(dim_out, &integrand)?;
    let mut last_diff = f64::INFINITY;
    while panels < MAX_REFINE_PANELS {
        panels *= 2;
        let next = QuadraturePlan::build(domain, t, panels)?.integrate(dim_out, &integrand)?;
        let diff: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
        last_diff = norm(&diff);
        prev = next;
        if last_diff < tol {
            return Ok(Refinement {
                value: prev,
                error_estimate: last_diff,
                panels,
            });
        }
        log::debug!("refine_until: {panels} panels, difference {last_diff:e}");
    }
    Err(Error::NoConvergence {
        message: format!(
            "panel cap {MAX_REFINE_PANELS} reached, last difference {last_diff:e} >= {tol:e}"
        ),
        best: prev.first().copied(),
    })
}
