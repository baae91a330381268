//! Invariant-ball radii for the Hammerstein and Urysohn existence results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{estimate_k_m, UrysohnKernel};
use crate::quadrature::QuadraturePlan;

pub const SCAN_CELLS: usize = 1024;
pub const BISECTION_STEPS: usize = 60;
pub const URYSOHN_BISECTION_STEPS: usize = 30;

pub const ZERO_MAP_NOTE: &str = "zero map, fixed point f \u{2261} 0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammersteinRadius {
    pub c: f64,
    pub search_max: f64,
    /// Smallest root of `c phi(t) = t` in `(0, search_max]`.
    pub t_star: Option<f64>,
    /// Every sign change of `c phi(t) - t`, each resolved by bisection.
    pub roots: Vec<f64>,
    /// `|c phi(t*) - t*|`.
    pub equality_residual: Option<f64>,
    /// `c phi(t*) <= t*`, the inclusion the existence proof uses.
    pub invariance_certified: bool,
    /// Smallest `t > 0` found with `c phi(t) <= t`; may exist without a root.
    pub inclusion_radius: Option<f64>,
    pub note: Option<String>,
}

fn checked_phi(phi: &dyn Fn(f64) -> f64, t: f64) -> Result<f64> {
    let v = phi(t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite(format!("phi({t}) = {v}"), &[t]))
    }
}

/// Root of `c phi(t) = t` by a sign-change scan over [`SCAN_CELLS`] cells
/// and [`BISECTION_STEPS`] bisections. Each root is returned from the side
/// with `c phi(t) <= t`.
pub fn hammerstein_radius(
    c: f64,
    phi: &dyn Fn(f64) -> f64,
    search_max: f64,
) -> Result<HammersteinRadius> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "c must be finite and nonnegative, got {c}"
        )));
    }
    if !(search_max > 0.0 && search_max.is_finite()) {
        return Err(Error::invalid(format!(
            "search_max must be positive, got {search_max}"
        )));
    }
    let h = |t: f64| -> Result<f64> { Ok(c * checked_phi(phi, t)? - t) };
    let ts: Vec<f64> = (0..=SCAN_CELLS)
        .map(|i| search_max * i as f64 / SCAN_CELLS as f64)
        .collect();
    let hs = ts.iter().map(|&t| h(t)).collect::<Result<Vec<f64>>>()?;

    let mut roots = Vec::new();
    let mut inclusion = None;
    for i in 1..ts.len() {
        let (above_prev, above) = (hs[i - 1] > 0.0, hs[i] > 0.0);
        if inclusion.is_none() && !above {
            inclusion = Some(if above_prev {
                bisect(&h, ts[i - 1], ts[i])?
            } else {
                ts[i]
            });
        }
        if above_prev != above {
            // keep `good` on the side where h <= 0
            let (good, bad) = if above {
                (ts[i - 1], ts[i])
            } else {
                (ts[i], ts[i - 1])
            };
            roots.push(bisect(&h, bad, good)?);
        }
    }
    let t_star = roots.first().copied();
    let equality_residual = match t_star {
        Some(t) => Some(h(t)?.abs()),
        None => None,
    };
    let invariance_certified = match t_star {
        Some(t) => h(t)? <= 1e-12 * t.max(1.0),
        None => false,
    };
    let note = if t_star.is_none() && hs[0] == 0.0 {
        Some(ZERO_MAP_NOTE.to_string())
    } else if t_star.is_none() {
        Some(format!(
            "c phi(t) - t has no sign change on (0, {search_max}]"
        ))
    } else {
        None
    };
    Ok(HammersteinRadius {
        c,
        search_max,
        t_star,
        roots,
        equality_residual,
        invariance_certified,
        inclusion_radius: inclusion,
        note,
    })
}

/// Bisection between `bad` (h > 0) and `good` (h <= 0); returns the final
/// `good` end.
fn bisect(h: &dyn Fn(f64) -> Result<f64>, mut bad: f64, mut good: f64) -> Result<f64> {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (bad + good);
        if mid == bad || mid == good {
            break;
        }
        if h(mid)? > 0.0 {
            bad = mid;
        } else {
            good = mid;
        }
    }
    Ok(good)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K_M")]
    pub k_m: f64,
    /// `K_M / M`; absent at `M = 0`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrysohnRadius {
    pub kernel: String,
    /// Smallest `M` found with `K_M <= M`.
    pub radius: Option<f64>,
    pub k_at_radius: Option<f64>,
    pub curve: Vec<RatioPoint>,
    /// Last failing and first passing grid value, when bisection ran.
    pub bracket: Option<(f64, f64)>,
}

/// Smallest `R` with `K_R <= R` from `K_M` on an increasing grid, refined
/// by bisection between the last failing and the first passing grid value.
pub fn urysohn_radius(
    k: &UrysohnKernel,
    xs: &[f64],
    plan: &QuadraturePlan,
    m_grid: &[f64],
    u_samples: usize,
) -> Result<UrysohnRadius> {
    if m_grid.is_empty() {
        return Err(Error::invalid("M grid is empty"));
    }
    if m_grid.iter().any(|m| !(m.is_finite() && *m >= 0.0))
        || m_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::invalid(
            "M grid must be nonnegative and strictly increasing",
        ));
    }
    let km = |m: f64| -> Result<f64> { Ok(estimate_k_m(k, m, xs, plan, u_samples)?.value()) };
    let mut curve = Vec::with_capacity(m_grid.len());
    let mut first_pass = None;
    for (i, &m) in m_grid.iter().enumerate() {
        let v = km(m)?;
        curve.push(RatioPoint {
            m,
            k_m: v,
            ratio: (m > 0.0).then(|| v / m),
        });
        if first_pass.is_none() && v <= m {
            first_pass = Some(i);
        }
    }
    let Some(i) = first_pass else {
        return Ok(UrysohnRadius {
            kernel: k.name().to_string(),
            radius: None,
            k_at_radius: None,
            curve,
            bracket: None,
        });
    };
    if i == 0 {
        return Ok(UrysohnRadius {
            kernel: k.name().to_string(),
            radius: Some(m_grid[0]),
            k_at_radius: Some(curve[0].k_m),
            curve,
            bracket: None,
        });
    }
    let (mut bad, mut good) = (m_grid[i - 1], m_grid[i]);
    let mut k_good = curve[i].k_m;
    for _ in 0..URYSOHN_BISECTION_STEPS {
        let mid = 0.5 * (bad + good);
        let v = km(mid)?;
        if v <= mid {
            good = mid;
            k_good = v;
        } else {
            bad = mid;
        }
    }
    Ok(UrysohnRadius {
        kernel: k.name().to_string(),
        radius: Some(good),
        k_at_radius: Some(k_good),
        curve,
        bracket: Some((m_grid[i - 1], m_grid[i])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::kernels::{urysohn_example, urysohn_linear_growth, urysohn_zero};

    #[test]
    fn affine_phi_gives_two_thirds() {
        let r = hammerstein_radius(0.5, &|t| 1.0 + t / 2.0, 10.0).unwrap();
        let t = r.t_star.unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.equality_residual.unwrap() <= 1e-10);
        assert!(r.invariance_certified);
        assert_eq!(r.roots.len(), 1);
        assert!((r.inclusion_radius.unwrap() - t).abs() < 1e-12);
    }

    #[test]
    fn degenerate_phi() {
        let r = hammerstein_radius(0.5, &|_| 0.0, 10.0).unwrap();
        assert_eq!(r.t_star, None);
        assert_eq!(r.note.as_deref(), Some(ZERO_MAP_NOTE));
        for m in [1.0, 100.0, 1e6] {
            let r = hammerstein_radius(1.0, &|t| t + 1.0, m).unwrap();
            assert_eq!(r.t_star, None);
            assert_eq!(r.inclusion_radius, None);
        }
        assert!(hammerstein_radius(1.0, &|t| if t > 1.0 { f64::NAN } else { t }, 2.0).is_err());
    }

    #[test]
    fn several_roots_are_listed_smallest_first() {
        // c phi(t) - t = (t - 1)(t - 2)(t - 3) / 10 shifted to be nondecreasing in phi
        let phi = |t: f64| t + (t - 1.0) * (t - 2.0) * (t - 3.0) / 10.0;
        let r = hammerstein_radius(1.0, &phi, 4.0).unwrap();
        assert_eq!(r.roots.len(), 3);
        for (root, want) in r.roots.iter().zip([1.0, 2.0, 3.0]) {
            assert!((root - want).abs() < 1e-10);
        }
        assert_eq!(r.t_star, Some(r.roots[0]));
    }

    fn plan() -> QuadraturePlan {
        QuadraturePlan::build(&Domain::half_line(), 40.0, 40).unwrap()
    }

    #[test]
    fn urysohn_example_radius_is_three_halves() {
        let grid: Vec<f64> = (0..=8).map(|i| 0.5 * i as f64).collect();
        let r = urysohn_radius(&urysohn_example(), &[0.0, 0.5, 1.0], &plan(), &grid, 64).unwrap();
        assert!((r.radius.unwrap() - 1.5).abs() < 1e-6, "{r:?}");
        assert_eq!(r.bracket, Some((1.0, 1.5)));
    }

    #[test]
    fn linear_growth_has_no_radius_and_zero_kernel_takes_first() {
        let grid = [1.0, 2.0, 4.0, 8.0, 16.0];
        let r = urysohn_radius(&urysohn_linear_growth(2.0, 1), &[0.0], &plan(), &grid, 32).unwrap();
        assert_eq!(r.radius, None);
        for p in &r.curve {
            assert!((p.ratio.unwrap() - 2.0).abs() < 1e-6, "{p:?}");
        }
        let r = urysohn_radius(&urysohn_zero(1), &[0.0], &plan(), &grid, 8).unwrap();
        assert_eq!(r.radius, Some(1.0));
    }
}
