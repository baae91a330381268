//! Kernels with their analytic hypotheses attached as evaluable metadata.
//!
//! A [`LinearKernel`] maps `(x, y)` to a `d x d` matrix (row-major). Its
//! optional [`Domination`] gives a pointwise bound `||K(x, y)|| <= D(y; r)`
//! valid for `||x|| <= r` together with a bound on the integral of `D` over
//! `{||y|| > T}`; this is what truncation radii are derived from. An
//! optional [`RadialLimit`] supplies the limit kernel `L_v(y)` of
//! `K(t v, y)` as `t -> inf`.
//!
//! A [`UrysohnKernel`] maps `(x, y, u)` with `x, y >= 0` and `u` in `R^d`
//! to `R^d`, and a [`NonlinearityF`] is the pointwise map `(y, z) -> F(y, z)`
//! of a Hammerstein operator together with its growth bound `phi`.
//!
//! Measurability and continuity hypotheses are contracts on the closures;
//! only the quantitative ones are checked, in [`checks`].

use std::fmt;
use std::sync::Arc;

use crate::domain::norm;
use crate::error::{Error, Result};
use crate::linalg::opnorm;

pub mod builtin;
pub mod checks;
pub mod tabulated;

pub use builtin::{
    exp_growth, exp_separable, exponential_family, mollified_volterra, mollifier_factor, sin_decay,
    urysohn_decaying, urysohn_example, urysohn_linear_growth, urysohn_u_independent, urysohn_zero,
    zero_kernel, GMap,
};
pub use checks::{
    check_car4, check_condition_b, check_k1_via_limit, check_k1_with, check_k2, domain_directions,
    estimate_k_m, k2_oscillation, kernel_diff_integral, unit_directions, Car4Report,
    ConditionBReport, ConditionReport, DirectionResult, KmEstimate, DEFAULT_U_SAMPLES,
};
pub use tabulated::{user_tabulated, user_tabulated_file};

type KernelFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type BreaksFn = dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync;

/// Global domination of a linear kernel.
#[derive(Clone)]
pub struct Domination {
    bound: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    tail: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl Domination {
    /// `bound(y, r)` dominates `||K(x, y)||` for every `||x|| <= r`;
    /// `tail(T, r)` bounds `int_{||y|| > T} bound(y, r) dy`.
    pub fn new<B, T>(bound: B, tail: T) -> Self
    where
        B: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        T: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Domination {
            bound: Arc::new(bound),
            tail: Arc::new(tail),
        }
    }

    pub fn bound(&self, y: &[f64], x_radius: f64) -> f64 {
        (self.bound)(y, x_radius)
    }

    pub fn tail(&self, t: f64, x_radius: f64) -> f64 {
        (self.tail)(t, x_radius)
    }
}

/// Limit kernel `L_v(y) = lim_{t -> inf} K(t v, y)` along unit directions.
#[derive(Clone)]
pub struct RadialLimit {
    eval: Arc<KernelFn>,
    breaks: Option<Arc<BreaksFn>>,
}

impl RadialLimit {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        RadialLimit {
            eval: Arc::new(eval),
            breaks: None,
        }
    }

    /// Per-axis coordinates (for direction `v`) where `L_v` is not smooth in `y`.
    pub fn with_breaks<F>(mut self, breaks: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.breaks = Some(Arc::new(breaks));
        self
    }

    pub fn eval_into(&self, v: &[f64], y: &[f64], out: &mut [f64]) {
        (self.eval)(v, y, out)
    }

    pub fn breaks(&self, v: &[f64]) -> Vec<Vec<f64>> {
        self.breaks.as_ref().map(|b| b(v)).unwrap_or_default()
    }
}

/// `K : X x Y -> B(R^d)`.
#[derive(Clone)]
pub struct LinearKernel {
    name: String,
    x_dim: usize,
    y_dim: usize,
    value_dim: usize,
    eval: Arc<KernelFn>,
    domination: Option<Domination>,
    radial_limit: Option<RadialLimit>,
    car4_bound: Option<f64>,
    breakpoints: Option<Arc<BreaksFn>>,
    volterra_tail: Option<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for LinearKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearKernel")
            .field("name", &self.name)
            .field("x_dim", &self.x_dim)
            .field("y_dim", &self.y_dim)
            .field("value_dim", &self.value_dim)
            .field("domination", &self.domination.is_some())
            .field("radial_limit", &self.radial_limit.is_some())
            .field("car4_bound", &self.car4_bound)
            .finish()
    }
}

impl LinearKernel {
    /// `eval(x, y, out)` writes the `d x d` matrix row-major into `out`.
    pub fn new<F>(
        name: impl Into<String>,
        x_dim: usize,
        y_dim: usize,
        value_dim: usize,
        eval: F,
    ) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        LinearKernel {
            name: name.into(),
            x_dim,
            y_dim,
            value_dim,
            eval: Arc::new(eval),
            domination: None,
            radial_limit: None,
            car4_bound: None,
            breakpoints: None,
            volterra_tail: None,
        }
    }

    /// Scalar kernel (d = 1).
    pub fn scalar<F>(name: impl Into<String>, x_dim: usize, y_dim: usize, k: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, x_dim, y_dim, 1, move |x, y, out| out[0] = k(x, y))
    }

    pub fn with_domination(mut self, d: Domination) -> Self {
        self.domination = Some(d);
        self
    }

    pub fn with_radial_limit(mut self, l: RadialLimit) -> Self {
        self.radial_limit = Some(l);
        self
    }

    pub fn with_car4_bound(mut self, c: f64) -> Self {
        self.car4_bound = Some(c);
        self
    }

    /// Per-axis `y` coordinates (for a given `x`) where the kernel is not
    /// smooth; quadrature panels are split there.
    pub fn with_breakpoints<F>(mut self, b: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.breakpoints = Some(Arc::new(b));
        self
    }

    /// Bound on `int_{y <= x, ||y|| > T} ||K(x, y)|| dy` for `||x|| <= r`, for
    /// kernels that are integrable only over the Volterra region.
    pub fn with_volterra_tail<F>(mut self, tail: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.volterra_tail = Some(Arc::new(tail));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn domination(&self) -> Option<&Domination> {
        self.domination.as_ref()
    }

    pub fn radial_limit(&self) -> Option<&RadialLimit> {
        self.radial_limit.as_ref()
    }

    pub fn car4_bound(&self) -> Option<f64> {
        self.car4_bound
    }

    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.eval)(x, y, out)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim * self.value_dim];
        self.eval_into(x, y, &mut out);
        out
    }

    pub fn opnorm_at(&self, x: &[f64], y: &[f64]) -> f64 {
        opnorm(&self.eval(x, y), self.value_dim)
    }

    pub fn breakpoints(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.breakpoints.as_ref().map(|b| b(x)).unwrap_or_default()
    }

    /// Union of the breakpoints at several `x`.
    pub fn breakpoints_many(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); self.y_dim];
        for x in xs {
            for (k, b) in self.breakpoints(x).into_iter().enumerate() {
                if k < out.len() {
                    out[k].extend(b);
                }
            }
        }
        out
    }

    /// Tail of the declared domination for `||x|| <= x_radius`.
    pub fn domination_tail(&self, t: f64, x_radius: f64) -> Option<f64> {
        self.domination.as_ref().map(|d| d.tail(t, x_radius))
    }

    /// Tail over the Volterra region: the declared one, else the domination tail.
    pub fn volterra_tail(&self, t: f64, x_radius: f64) -> Option<f64> {
        match &self.volterra_tail {
            Some(f) => Some(f(t, x_radius)),
            None => self.domination_tail(t, x_radius),
        }
    }

    /// Spot-check `||K(x, y)|| <= D(y; max ||x||)` on the given points.
    pub fn spot_check_domination(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
        let Some(dom) = &self.domination else {
            return Ok(());
        };
        let r = xs.iter().map(|x| norm(x)).fold(0.0, f64::max);
        let mut tails = Vec::new();
        for t in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            tails.push(dom.tail(t, r));
        }
        if tails.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
            return Err(Error::Invariant(format!(
                "{}: domination tail is not nonincreasing",
                self.name
            )));
        }
        for x in xs {
            for y in ys {
                let k = self.opnorm_at(x, y);
                let d = dom.bound(y, r);
                if k > d * (1.0 + 1e-12) + 1e-300 {
                    return Err(Error::Invariant(format!(
                        "{}: ||K(x, y)|| = {k} exceeds domination {d} at x = {x:?}, y = {y:?}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

type UrysohnFn = dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync;

/// Envelope `E(y, M) >= sup_{||u|| <= M} ||K(x, y, u)||` uniformly in `x`, with
/// `tail(T, M) >= int_T^inf E(y, M) dy`.
#[derive(Clone)]
pub struct Envelope {
    bound: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    tail: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl Envelope {
    pub fn new<B, T>(bound: B, tail: T) -> Self
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        T: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Envelope {
            bound: Arc::new(bound),
            tail: Arc::new(tail),
        }
    }

    pub fn bound(&self, y: f64, m: f64) -> f64 {
        (self.bound)(y, m)
    }

    pub fn tail(&self, t: f64, m: f64) -> f64 {
        (self.tail)(t, m)
    }
}

/// `K : R+ x R+ x R^d -> R^d`.
#[derive(Clone)]
pub struct UrysohnKernel {
    name: String,
    value_dim: usize,
    eval: Arc<UrysohnFn>,
    asymptote: Option<Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>>,
    asymptote_tail: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    envelope: Option<Envelope>,
    uniform_modulus_x: Option<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for UrysohnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UrysohnKernel")
            .field("name", &self.name)
            .field("value_dim", &self.value_dim)
            .field("asymptote", &self.asymptote.is_some())
            .field("envelope", &self.envelope.is_some())
            .finish()
    }
}

impl UrysohnKernel {
    pub fn new<F>(name: impl Into<String>, value_dim: usize, eval: F) -> Self
    where
        F: Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        UrysohnKernel {
            name: name.into(),
            value_dim,
            eval: Arc::new(eval),
            asymptote: None,
            asymptote_tail: None,
            envelope: None,
            uniform_modulus_x: None,
        }
    }

    /// The function `b(x, y)` the kernel approaches for large `y`,
    /// independently of `u`.
    pub fn with_asymptote<B>(mut self, b: B) -> Self
    where
        B: Fn(f64, f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.asymptote = Some(Arc::new(b));
        self
    }

    /// Bound on `int_T^inf sup_x ||b(x, y)|| dy`. Without it the envelope is
    /// used: `||b|| <= E(y, 0) + E(y, M)`.
    pub fn with_asymptote_tail<T>(mut self, tail: T) -> Self
    where
        T: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.asymptote_tail = Some(Arc::new(tail));
        self
    }

    pub fn with_envelope(mut self, e: Envelope) -> Self {
        self.envelope = Some(e);
        self
    }

    /// `modulus(eta, T, M)` returns `delta` with
    /// `||K(x1, y, u) - K(x2, y, u)|| < eta` whenever `|x1 - x2| < delta`,
    /// `y <= T`, `||u|| <= M`.
    pub fn with_uniform_modulus_x<F>(mut self, m: F) -> Self
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.uniform_modulus_x = Some(Arc::new(m));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn eval_into(&self, x: f64, y: f64, u: &[f64], out: &mut [f64]) {
        (self.eval)(x, y, u, out)
    }

    pub fn eval(&self, x: f64, y: f64, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim];
        self.eval_into(x, y, u, &mut out);
        out
    }

    pub fn has_asymptote(&self) -> bool {
        self.asymptote.is_some()
    }

    pub fn asymptote_into(&self, x: f64, y: f64, out: &mut [f64]) -> Option<()> {
        self.asymptote.as_ref().map(|b| b(x, y, out))
    }

    pub fn asymptote_tail(&self, t: f64, m: f64) -> Option<f64> {
        if let Some(tail) = &self.asymptote_tail {
            return Some(tail(t));
        }
        self.envelope
            .as_ref()
            .map(|e| e.tail(t, 0.0) + e.tail(t, m))
    }

    pub fn envelope(&self) -> Option<&Envelope> {
        self.envelope.as_ref()
    }

    pub fn uniform_modulus_x(&self, eta: f64, t: f64, m: f64) -> Option<f64> {
        self.uniform_modulus_x.as_ref().map(|f| f(eta, t, m))
    }

    /// Spot-check that the envelope is nondecreasing in `M` and dominates the
    /// kernel and the asymptote on sample points.
    pub fn spot_check_envelope(
        &self,
        xs: &[f64],
        ys: &[f64],
        ms: &[f64],
        u_samples: usize,
    ) -> Result<()> {
        let Some(env) = &self.envelope else {
            return Ok(());
        };
        let mut b = vec![0.0; self.value_dim];
        for &y in ys {
            for w in ms.windows(2) {
                if env.bound(y, w[1]) < env.bound(y, w[0]) * (1.0 - 1e-12) {
                    return Err(Error::Invariant(format!(
                        "{}: envelope decreases in M at y = {y}",
                        self.name
                    )));
                }
            }
            for &m in ms {
                for u in checks::u_sample_set(self.value_dim, m, u_samples) {
                    for &x in xs {
                        let k = norm(&self.eval(x, y, &u));
                        if k > env.bound(y, m) * (1.0 + 1e-12) + 1e-300 {
                            return Err(Error::Invariant(format!(
                                "{}: ||K({x}, {y}, {u:?})|| = {k} exceeds envelope {}",
                                self.name,
                                env.bound(y, m)
                            )));
                        }
                        if self.asymptote_into(x, y, &mut b).is_some()
                            && norm(&b)
                                > (env.bound(y, 0.0) + env.bound(y, m)) * (1.0 + 1e-12) + 1e-300
                        {
                            return Err(Error::Invariant(format!(
                                "{}: asymptote exceeds E(y, 0) + E(y, M) at x = {x}, y = {y}",
                                self.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

type NonlinFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Pointwise map `F(y, z)` with `||F(y, z)|| <= phi(||z||)`, `phi` nondecreasing.
#[derive(Clone)]
pub struct NonlinearityF {
    name: String,
    value_dim: usize,
    eval: Arc<NonlinFn>,
    phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    modulus: Option<Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for NonlinearityF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearityF")
            .field("name", &self.name)
            .field("value_dim", &self.value_dim)
            .finish()
    }
}

impl NonlinearityF {
    pub fn new<F, P>(name: impl Into<String>, value_dim: usize, eval: F, phi: P) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        NonlinearityF {
            name: name.into(),
            value_dim,
            eval: Arc::new(eval),
            phi: Arc::new(phi),
            modulus: None,
        }
    }

    /// `modulus(z, eps)` returns `delta` such that `||w - z|| <= delta`
    /// implies `||F(y, w) - F(y, z)|| <= eps` for a.e. `y`.
    pub fn with_modulus<M>(mut self, m: M) -> Self
    where
        M: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        self.modulus = Some(Arc::new(m));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn eval_into(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.eval)(y, z, out)
    }

    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }

    pub fn modulus(&self, z: &[f64], eps: f64) -> Option<f64> {
        self.modulus.as_ref().map(|m| m(z, eps))
    }

    /// Spot-check monotonicity of `phi` and the growth bound on samples.
    pub fn spot_check(&self, ys: &[Vec<f64>], zs: &[Vec<f64>]) -> Result<()> {
        let mut ts: Vec<f64> = zs.iter().map(|z| norm(z)).collect();
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            if self.phi(w[1]) < self.phi(w[0]) {
                return Err(Error::Invariant(format!(
                    "{}: phi decreases between {} and {}",
                    self.name, w[0], w[1]
                )));
            }
        }
        let mut out = vec![0.0; self.value_dim];
        for y in ys {
            for z in zs {
                self.eval_into(y, z, &mut out);
                let lhs = norm(&out);
                let rhs = self.phi(norm(z));
                if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                    return Err(Error::Invariant(format!(
                        "{}: ||F(y, z)|| = {lhs} exceeds phi(||z||) = {rhs} at z = {z:?}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Identity `F(y, z) = z`.
pub fn identity_nonlinearity(d: usize) -> NonlinearityF {
    NonlinearityF::new("identity", d, |_, z, out| out.copy_from_slice(z), |t| t)
        .with_modulus(|_, eps| eps)
}

/// `F(y, z) = 0`.
pub fn zero_nonlinearity(d: usize) -> NonlinearityF {
    NonlinearityF::new("zero", d, |_, _, out| out.fill(0.0), |_| 0.0)
        .with_modulus(|_, _| f64::INFINITY)
}

/// Componentwise `F(y, z) = a + b z`, `phi(t) = sqrt(d) |a| + |b| t`.
pub fn affine_nonlinearity(d: usize, a: f64, b: f64) -> NonlinearityF {
    let offset = (d as f64).sqrt() * a.abs();
    NonlinearityF::new(
        "affine",
        d,
        move |_, z, out| {
            for (o, zi) in out.iter_mut().zip(z) {
                *o = a + b * zi;
            }
        },
        move |t| offset + b.abs() * t,
    )
    .with_modulus(move |_, eps| {
        if b == 0.0 {
            f64::INFINITY
        } else {
            eps / b.abs()
        }
    })
}

/// Componentwise `tanh`, `phi(t) = min(t, sqrt(d))`.
pub fn tanh_nonlinearity(d: usize) -> NonlinearityF {
    let cap = (d as f64).sqrt();
    NonlinearityF::new(
        "tanh",
        d,
        |_, z, out| {
            for (o, zi) in out.iter_mut().zip(z) {
                *o = zi.tanh();
            }
        },
        move |t| t.min(cap),
    )
    .with_modulus(|_, eps| eps)
}
