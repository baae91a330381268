//! Built-in kernel families.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Domination, Envelope, LinearKernel, RadialLimit, UrysohnKernel};
use crate::domain::{distance, norm, MAX_DIM};
use crate::error::{Error, Result};
use crate::quadrature::graded_breaks;

/// Levels of geometric grading around a point kink in dimension >= 2.
const KINK_LEVELS: usize = 16;

/// Surface measure of the unit sphere in R^n.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => f64::NAN,
    }
}

/// `int_T^inf r^(n-1) e^(-r) dr` for integer `n >= 1`.
pub fn upper_gamma_int(n: usize, t: f64) -> f64 {
    let t = t.max(0.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    // (n-1)! sum_{k<n} t^k / k!
    for k in 1..n {
        term *= t / k as f64;
        sum += term;
    }
    let fact: f64 = (1..n).map(|k| k as f64).product();
    fact * sum * (-t).exp()
}

/// `int_{R^n} e^{-||y||} dy`.
pub fn exp_norm_integral(n: usize) -> f64 {
    sphere_area(n) * upper_gamma_int(n, 0.0)
}

/// The inner map `g` of the exponential family `e^{-||g(x) - y||}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum GMap {
    /// `g(x) = x`.
    Identity,
    /// `g(x) = x / (1 + ||x||)`.
    Saturating,
    /// `g(x) = c`.
    Constant(Vec<f64>),
    /// Componentwise `tanh`.
    Tanh,
}

impl GMap {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            GMap::Identity => out.copy_from_slice(x),
            GMap::Saturating => {
                let s = 1.0 + norm(x);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi / s;
                }
            }
            GMap::Constant(c) => out.copy_from_slice(c),
            GMap::Tanh => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi.tanh();
                }
            }
        }
    }

    /// Upper bound on `||g(x)||` over `||x|| <= r`.
    pub fn sup_norm_on_ball(&self, r: f64, n: usize) -> f64 {
        match self {
            GMap::Identity => r,
            GMap::Saturating if r.is_infinite() => 1.0,
            GMap::Saturating => r / (1.0 + r),
            GMap::Constant(c) => norm(c),
            GMap::Tanh => r.min((n as f64).sqrt() * r.tanh()),
        }
    }

    /// `lim_{t -> inf} g(t v)` when it exists.
    pub fn radial_limit(&self, v: &[f64]) -> Option<Vec<f64>> {
        match self {
            GMap::Identity => None,
            GMap::Saturating => Some(v.to_vec()),
            GMap::Constant(c) => Some(c.clone()),
            GMap::Tanh => Some(
                v.iter()
                    .map(|vi| if *vi == 0.0 { 0.0 } else { vi.signum() })
                    .collect(),
            ),
        }
    }

    pub fn label(&self) -> String {
        match self {
            GMap::Identity => "identity".into(),
            GMap::Saturating => "saturating".into(),
            GMap::Constant(c) => format!("constant{c:?}"),
            GMap::Tanh => "tanh".into(),
        }
    }
}

fn point_kink_breaks(center: &[f64]) -> Vec<Vec<f64>> {
    if center.len() == 1 {
        vec![vec![center[0]]]
    } else {
        center
            .iter()
            .map(|c| graded_breaks(*c, 0.5, KINK_LEVELS))
            .collect()
    }
}

/// `K(x, y) = scale * e^{-||g(x) - y||} * I_d` on `R^n`.
///
/// Declared domination is `scale * e^{s(r) - ||y||}` with `s(r)` a bound on
/// `||g||` over `||x|| <= r`, whose tail beyond `T` is
/// `scale * |S^{n-1}| * e^{s(r)} * int_T^inf r^{n-1} e^{-r} dr`
/// (in one dimension `2 scale e^{-(T - s)}`). The uniform integral bound
/// is `scale * int e^{-||y||} dy` by translation invariance.
pub fn exponential_family(n: usize, g: GMap, scale: f64, d: usize) -> Result<LinearKernel> {
    if n == 0 || n > MAX_DIM {
        return Err(Error::invalid(format!(
            "dimension must be in 1..={MAX_DIM}, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("value dimension must be at least 1"));
    }
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::invalid(format!(
            "scale must be finite and nonnegative, got {scale}"
        )));
    }
    if let GMap::Constant(c) = &g {
        if c.len() != n {
            return Err(Error::invalid(format!(
                "constant g has {} components, expected {n}",
                c.len()
            )));
        }
    }
    let g = Arc::new(g);
    let eval = {
        let g = g.clone();
        move |x: &[f64], y: &[f64], out: &mut [f64]| {
            let mut gx = [0.0; MAX_DIM];
            g.apply(x, &mut gx[..n]);
            let v = scale * (-distance(&gx[..n], y)).exp();
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = v;
            }
        }
    };
    let dom = {
        let (gb, gt) = (g.clone(), g.clone());
        Domination::new(
            move |y, r| scale * (gb.sup_norm_on_ball(r, n) - norm(y)).exp(),
            move |t, r| {
                scale * sphere_area(n) * gt.sup_norm_on_ball(r, n).exp() * upper_gamma_int(n, t)
            },
        )
    };
    let breaks = {
        let g = g.clone();
        move |x: &[f64]| {
            let mut gx = vec![0.0; n];
            g.apply(x, &mut gx);
            point_kink_breaks(&gx)
        }
    };
    let mut k = LinearKernel::new(format!("exponential_family[{}]", g.label()), n, n, d, eval)
        .with_domination(dom)
        .with_car4_bound(scale * exp_norm_integral(n))
        .with_breakpoints(breaks);
    if g.radial_limit(&vec![1.0; n]).is_some() {
        let gl = g.clone();
        let gb = g.clone();
        let limit = RadialLimit::new(move |v, y, out| {
            let c = gl.radial_limit(v).expect("limit exists for this map");
            let val = scale * (-distance(&c, y)).exp();
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = val;
            }
        })
        .with_breaks(move |v| {
            point_kink_breaks(&gb.radial_limit(v).expect("limit exists for this map"))
        });
        k = k.with_radial_limit(limit);
    }
    Ok(k)
}

/// Factor `prod_k phi_m(x_k, y_k)` of the mollified Volterra kernel:
/// 1 for `y_k <= x_k`, `-m y_k + m x_k + 1` on `(x_k, x_k + 1/m)`, 0 beyond.
pub fn mollifier_factor(x: &[f64], y: &[f64], m: f64) -> f64 {
    let mut f = 1.0;
    for (xk, yk) in x.iter().zip(y) {
        if *yk <= *xk {
            continue;
        }
        let v = -m * yk + m * xk + 1.0;
        if v <= 0.0 {
            return 0.0;
        }
        f *= v;
    }
    f
}

/// `K_m(x, y) = K(x, y) * prod_k phi_m(x_k, y_k)`: a continuous-in-`x`
/// kernel whose Fredholm operator approximates the Volterra operator of `K`.
/// Domination and the uniform integral bound are inherited, since the factor
/// lies in `[0, 1]`.
pub fn mollified_volterra(base: &LinearKernel, m: u32) -> Result<LinearKernel> {
    if m < 1 {
        return Err(Error::invalid("mollifier parameter m must be at least 1"));
    }
    let mf = f64::from(m);
    let b = base.clone();
    let mut k = LinearKernel::new(
        format!("mollified_volterra[{}; m={m}]", base.name()),
        base.x_dim(),
        base.y_dim(),
        base.value_dim(),
        move |x, y, out| {
            let f = mollifier_factor(x, y, mf);
            if f == 0.0 {
                out.fill(0.0);
                return;
            }
            b.eval_into(x, y, out);
            if f != 1.0 {
                for o in out.iter_mut() {
                    *o *= f;
                }
            }
        },
    );
    let b = base.clone();
    k = k.with_breakpoints(move |x| {
        let mut br = b.breakpoints(x);
        br.resize(x.len(), Vec::new());
        for (k, xk) in x.iter().enumerate() {
            br[k].push(*xk);
            br[k].push(xk + 1.0 / mf);
        }
        br
    });
    if let Some(d) = base.domination() {
        k = k.with_domination(d.clone());
    }
    if let Some(c) = base.car4_bound() {
        k = k.with_car4_bound(c);
    }
    Ok(k)
}

/// Rank-one `K(x, y) = a e^{-x-y}` on `[0, inf)`.
pub fn exp_separable(a: f64) -> LinearKernel {
    let a_abs = a.abs();
    LinearKernel::scalar("exp_separable", 1, 1, move |x, y| a * (-x[0] - y[0]).exp())
        .with_domination(Domination::new(
            move |y, _| a_abs * (-y[0].abs()).exp(),
            move |t, _| a_abs * (-t).exp(),
        ))
        .with_car4_bound(a_abs)
        .with_radial_limit(RadialLimit::new(|_, _, out| out[0] = 0.0))
}

/// `K(x, y) = e^{-|y|} sin(x)` on `R`: dominated and uniformly integrable but
/// without a limit along rays.
pub fn sin_decay() -> LinearKernel {
    LinearKernel::scalar("sin_decay", 1, 1, |x, y| (-y[0].abs()).exp() * x[0].sin())
        .with_domination(Domination::new(
            |y, _| (-y[0].abs()).exp(),
            |t, _| 2.0 * (-t).exp(),
        ))
        .with_car4_bound(2.0)
        .with_breakpoints(|_| vec![vec![0.0]])
}

/// `K(x, y) = e^{y}` on `R`. Not integrable on the whole line; only its
/// Volterra operator `int_{-inf}^x` is meaningful, with tail below `-T`
/// equal to `e^{-T}`.
pub fn exp_growth() -> LinearKernel {
    LinearKernel::scalar("exp_growth", 1, 1, |_, y| y[0].exp())
        .with_volterra_tail(|t, r| (-t).exp() + if r > t { r.exp() } else { 0.0 })
}

/// The zero kernel on `R^n` with values in `d x d` matrices.
pub fn zero_kernel(n: usize, d: usize) -> LinearKernel {
    LinearKernel::new("zero", n, n, d, |_, _, out| out.fill(0.0))
        .with_domination(Domination::new(|_, _| 0.0, |_, _| 0.0))
        .with_car4_bound(0.0)
        .with_radial_limit(RadialLimit::new(|_, _, out| out.fill(0.0)))
}

/// `max_{|u| <= M} (1 + u / (1 + u^2))`, scalar.
fn bump_sup(m: f64) -> f64 {
    1.0 + if m >= 1.0 { 0.5 } else { m / (1.0 + m * m) }
}

/// `K(x, y, u) = e^{-x-y} (1 + u / (1 + u^2))`, scalar, with `b = e^{-x-y}`
/// not an asymptote (the difference does not decay faster than `b`).
/// Envelope `e^{-y} * max_{|u|<=M}(1 + u/(1+u^2))`.
pub fn urysohn_example() -> UrysohnKernel {
    UrysohnKernel::new("urysohn_example", 1, |x, y, u, out| {
        out[0] = (-x - y).exp() * (1.0 + u[0] / (1.0 + u[0] * u[0]));
    })
    .with_envelope(Envelope::new(
        |y, m| (-y).exp() * bump_sup(m),
        |t, m| (-t).exp() * bump_sup(m),
    ))
    .with_uniform_modulus_x(|eta, _, m| eta / bump_sup(m))
}

/// `K(x, y, u) = e^{-x-y} (1 + u e^{-y} / (1 + u^2))` with asymptote
/// `b(x, y) = e^{-x-y}`: `|K - b| <= e^{-2y} / 2`.
pub fn urysohn_decaying() -> UrysohnKernel {
    UrysohnKernel::new("urysohn_decaying", 1, |x, y, u, out| {
        out[0] = (-x - y).exp() * (1.0 + u[0] * (-y).exp() / (1.0 + u[0] * u[0]));
    })
    .with_asymptote(|x, y, out| out[0] = (-x - y).exp())
    .with_asymptote_tail(|t| (-t).exp())
    .with_envelope(Envelope::new(
        |y, m| (-y).exp() * bump_sup(m),
        |t, m| (-t).exp() * bump_sup(m),
    ))
    .with_uniform_modulus_x(|eta, _, m| eta / bump_sup(m))
}

/// `K(x, y, u) = b(x, y)` with `b = e^{-x-y}`, independent of `u`.
pub fn urysohn_u_independent() -> UrysohnKernel {
    UrysohnKernel::new("urysohn_u_independent", 1, |x, y, _, out| {
        out[0] = (-x - y).exp()
    })
    .with_asymptote(|x, y, out| out[0] = (-x - y).exp())
    .with_asymptote_tail(|t| (-t).exp())
    .with_envelope(Envelope::new(|y, _| (-y).exp(), |t, _| (-t).exp()))
    .with_uniform_modulus_x(|eta, _, _| eta)
}

/// `K(x, y, u) = slope * e^{-y} * u`, componentwise in `R^d`, so that
/// `K_M = slope * M`.
pub fn urysohn_linear_growth(slope: f64, d: usize) -> UrysohnKernel {
    let s = slope.abs();
    UrysohnKernel::new("urysohn_linear_growth", d, move |_, y, u, out| {
        let e = (-y).exp();
        for (o, ui) in out.iter_mut().zip(u) {
            *o = slope * e * ui;
        }
    })
    .with_envelope(Envelope::new(
        move |y, m| s * (-y).exp() * m,
        move |t, m| s * (-t).exp() * m,
    ))
    .with_uniform_modulus_x(|_, _, _| f64::INFINITY)
}

/// The zero Urysohn kernel.
pub fn urysohn_zero(d: usize) -> UrysohnKernel {
    UrysohnKernel::new("urysohn_zero", d, |_, _, _, out| out.fill(0.0))
        .with_asymptote(|_, _, out| out.fill(0.0))
        .with_asymptote_tail(|_| 0.0)
        .with_envelope(Envelope::new(|_, _| 0.0, |_, _| 0.0))
        .with_uniform_modulus_x(|_, _, _| f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::quadrature::{AxisRule, QuadraturePlan};

    #[test]
    fn mollifier_factor_values() {
        for m in [1.0, 4.0, 32.0] {
            assert_eq!(mollifier_factor(&[0.3], &[0.3], m), 1.0);
            assert_eq!(mollifier_factor(&[0.3], &[0.3 + 1.0 / m], m).max(0.0), 0.0);
            assert!((mollifier_factor(&[0.3], &[0.3 + 0.5 / m], m) - 0.5).abs() < 1e-12);
            assert_eq!(mollifier_factor(&[0.3], &[-5.0], m), 1.0);
        }
    }

    #[test]
    fn mollified_kernel_is_continuous_in_x() {
        let base = exponential_family(1, GMap::Identity, 1.0, 1).unwrap();
        for m in [1u32, 8, 64] {
            let k = mollified_volterra(&base, m).unwrap();
            for y in [-1.0, 0.0, 0.01, 0.5, 2.0] {
                for x in [-0.5, 0.0, 0.3, 1.0] {
                    let c = k.eval(&[x], &[y])[0];
                    for h in [-1e-9, 1e-9] {
                        let e = k.eval(&[x + h], &[y])[0];
                        assert!((e - c).abs() <= 2.0 * f64::from(m) * 1e-9 + 1e-15);
                    }
                }
            }
        }
        assert!(mollified_volterra(&base, 0).is_err());
    }

    #[test]
    fn exponential_identity_is_one_on_the_diagonal() {
        let k = exponential_family(1, GMap::Identity, 1.0, 1).unwrap();
        assert_eq!(k.eval(&[0.7], &[0.7]), vec![1.0]);
        let k3 = exponential_family(3, GMap::Identity, 1.0, 2).unwrap();
        assert_eq!(
            k3.eval(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            vec![1.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn exponential_domination_holds_and_tail_matches_one_dimensional_form() {
        let k = exponential_family(1, GMap::Saturating, 1.0, 1).unwrap();
        let xs: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 * 0.7]).collect();
        let ys: Vec<Vec<f64>> = (-40..=40).map(|i| vec![i as f64 * 0.25]).collect();
        k.spot_check_domination(&xs, &ys).unwrap();
        let s = 7.0 / 8.0;
        let r = 7.0;
        for t in [1.0, 3.0, 10.0] {
            let tail = k.domination_tail(t, r).unwrap();
            assert!((tail - 2.0 * (-(t - s)).exp()).abs() < 1e-14 * tail.max(1.0));
        }
        for n in 2..=3 {
            let k = exponential_family(n, GMap::Tanh, 0.5, 1).unwrap();
            let xs = vec![vec![0.3; n], vec![-2.0; n]];
            let ys = vec![vec![0.0; n], vec![1.0; n], vec![-3.0; n]];
            k.spot_check_domination(&xs, &ys).unwrap();
        }
    }

    #[test]
    fn exponential_car4_constant_matches_integral() {
        assert!((exp_norm_integral(1) - 2.0).abs() < 1e-15);
        assert!((exp_norm_integral(2) - 2.0 * PI).abs() < 1e-14);
        assert!((exp_norm_integral(3) - 8.0 * PI).abs() < 1e-13);
        let plan = QuadraturePlan::build(&Domain::real_line(), 40.0, 80).unwrap();
        let v = plan.integrate_scalar(|y| (-y[0].abs()).exp()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn upper_gamma_matches_quadrature() {
        for n in 1..=3 {
            for t in [0.0, 1.5, 7.0] {
                let rule = AxisRule::composite(t, t + 80.0, 160);
                let v: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(r, w)| w * r.powi(n as i32 - 1) * (-r).exp())
                    .sum();
                assert!((v - upper_gamma_int(n, t)).abs() < 1e-10, "n={n} t={t}");
            }
        }
    }

    #[test]
    fn urysohn_envelopes_dominate() {
        let xs = [0.0, 0.5, 3.0];
        let ys = [0.0, 1.0, 4.0];
        let ms = [0.0, 0.5, 1.0, 3.0];
        for k in [
            urysohn_example(),
            urysohn_decaying(),
            urysohn_u_independent(),
            urysohn_linear_growth(2.0, 1),
            urysohn_zero(1),
        ] {
            k.spot_check_envelope(&xs, &ys, &ms, 64).unwrap();
        }
    }

    #[test]
    fn exp_separable_domination() {
        let k = exp_separable(1.0);
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys = xs.clone();
        k.spot_check_domination(&xs, &ys).unwrap();
    }
}
