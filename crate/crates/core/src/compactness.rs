//! Empirical Arzelà–Ascoli certificates for finite families of sampled
//! functions: a uniform bound, a modulus-of-continuity table and
//! `(eps, T, delta)` extension witnesses.
//!
//! A finite family certifies only itself; reports carry the sample size and
//! the phrase "empirical certificate". Kernel-derived bounds can be folded
//! in where a kernel is known.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{distance, norm, Domain, Grid};
use crate::error::{Error, Result};
use crate::kernels::{domain_directions, kernel_diff_integral, LinearKernel};
use crate::quadrature::{find_truncation_radius, QuadraturePlan};
use crate::sampled::SampledFunction;

pub const DELTA_CANDIDATES: usize = 64;
pub const MODULUS_SLACK: f64 = 0.05;
pub const BOUNDARY_PROBES: usize = 8;
pub const CERTIFICATE_LABEL: &str = "empirical certificate";

#[derive(Debug, Clone)]
pub struct FunctionFamily {
    members: Vec<SampledFunction>,
    provenance: String,
}

impl FunctionFamily {
    pub fn new(members: Vec<SampledFunction>, provenance: impl Into<String>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "a family needs at least 2 members, got {}",
                members.len()
            )));
        }
        let first = &members[0];
        if members.iter().any(|m| !first.same_grid(m)) {
            return Err(Error::invalid("family members must share one grid"));
        }
        Ok(FunctionFamily {
            members,
            provenance: provenance.into(),
        })
    }

    pub fn members(&self) -> &[SampledFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn grid(&self) -> &Grid {
        self.members[0].grid()
    }

    pub fn domain(&self) -> &Domain {
        self.members[0].domain()
    }

    pub fn value_dim(&self) -> usize {
        self.members[0].value_dim()
    }

    /// Members `range`, same provenance with a suffix.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let members = indices
            .iter()
            .map(|&i| {
                self.members
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("member {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        FunctionFamily::new(members, format!("{} (subset)", self.provenance))
    }
}

/// Largest member sup norm.
pub fn estimate_bound(fam: &FunctionFamily) -> f64 {
    fam.members.iter().map(|m| m.sup_norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub x: Vec<f64>,
    pub delta: f64,
    pub omega: f64,
}

fn check_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::invalid("delta grid is empty"));
    }
    if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite()))
        || deltas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::invalid("delta grid must be positive and increasing"));
    }
    Ok(())
}

/// Grid indices within `delta` of `x`, with their distances.
fn neighbours(grid: &Grid, x: &[f64], delta: f64) -> Vec<usize> {
    let mut p = vec![0.0; grid.dim()];
    (0..grid.len())
        .filter(|&i| {
            grid.point_into(i, &mut p);
            distance(&p, x) <= delta
        })
        .collect()
}

/// Worst oscillation of one member at `x` over each delta.
fn member_oscillation(f: &SampledFunction, x: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    let fx = f.eval(x)?;
    let grid = f.grid();
    let d = f.value_dim();
    let mut p = vec![0.0; grid.dim()];
    let mut diff = vec![0.0; d];
    let mut out = vec![0.0f64; deltas.len()];
    for i in 0..grid.len() {
        grid.point_into(i, &mut p);
        let r = distance(&p, x);
        let Some(j0) = deltas.iter().position(|dl| r <= *dl) else {
            continue;
        };
        for ((o, a), b) in diff.iter_mut().zip(f.value_at(i)).zip(fx.as_slice()) {
            *o = a - b;
        }
        let v = norm(&diff);
        out[j0] = out[j0].max(v);
    }
    // larger balls contain smaller ones
    for j in 1..out.len() {
        out[j] = out[j].max(out[j - 1]);
    }
    Ok(out)
}

/// `omega(x, delta)`: max over members and grid points `x'` with
/// `||x' - x|| <= delta` of `||f(x') - f(x)||`; `f(x)` is interpolated
/// when `x` is off the grid.
pub fn estimate_modulus(
    fam: &FunctionFamily,
    probes: &[Vec<f64>],
    deltas: &[f64],
) -> Result<Vec<ModulusRow>> {
    check_deltas(deltas)?;
    for x in probes {
        fam.domain().check(x)?;
    }
    let per_probe = probes
        .par_iter()
        .map(|x| {
            let mut best = vec![0.0f64; deltas.len()];
            for f in &fam.members {
                for (b, v) in best.iter_mut().zip(member_oscillation(f, x, deltas)?) {
                    *b = b.max(v);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(probes
        .iter()
        .zip(per_probe)
        .flat_map(|(x, row)| {
            deltas.iter().zip(row).map(move |(d, w)| ModulusRow {
                x: x.clone(),
                delta: *d,
                omega: w,
            })
        })
        .collect())
}

/// Grid points with `||x|| <= r1` (first exhaustion radius) plus up to
/// [`BOUNDARY_PROBES`] points on the sphere of radius `r1`.
pub fn default_probe_points(fam: &FunctionFamily) -> Vec<Vec<f64>> {
    let domain = fam.domain();
    let r1 = domain.exhaustion_radii()[0];
    let mut probes: Vec<Vec<f64>> = fam.grid().points().filter(|p| norm(p) <= r1).collect();
    let dirs = domain_directions(domain);
    let step = dirs.len().div_ceil(BOUNDARY_PROBES).max(1);
    for v in dirs.iter().step_by(step) {
        let p: Vec<f64> = v.iter().map(|c| c * r1).collect();
        if domain.contains(&p) && !probes.contains(&p) {
            probes.push(p);
        }
    }
    probes
}

/// `input_bound * sup int ||K(x', y) - K(x, y)|| dy` over `x'` among the
/// grid points within `delta` of `x` and the points `x + delta j/4 v`
/// for sampled unit directions `v`. Bounds the oscillation of Fredholm
/// images of functions with sup norm at most `input_bound`.
pub fn fredholm_modulus_bound(
    k: &LinearKernel,
    plan: &QuadraturePlan,
    grid: &Grid,
    out_domain: &Domain,
    x: &[f64],
    delta: f64,
    input_bound: f64,
) -> Result<f64> {
    let mut cands: Vec<Vec<f64>> = neighbours(grid, x, delta)
        .into_iter()
        .map(|i| grid.point(i))
        .collect();
    for v in crate::kernels::unit_directions(x.len()) {
        for j in 1..=4 {
            let p: Vec<f64> = x
                .iter()
                .zip(&v)
                .map(|(a, b)| a + delta * j as f64 / 4.0 * b)
                .collect();
            if out_domain.contains(&p) {
                cands.push(p);
            }
        }
    }
    let worst = cands
        .par_iter()
        .map(|p| kernel_diff_integral(k, p, x, plan))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(input_bound * worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessMethod {
    /// `T` from a kernel tail hint, `delta = eps / 4`.
    Kernel,
    /// Largest admissible delta over the exhaustion radii.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionWitness {
    pub eps: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub delta: f64,
    pub method: WitnessMethod,
    pub pairs_checked: usize,
}

/// Pair `(i, j)` and its distances: restricted to each radius, and over all
/// grid points with the location of the full sup.
struct PairDistances {
    i: usize,
    j: usize,
    restricted: Vec<f64>,
    full: f64,
    at: usize,
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

fn pair_distances(fam: &FunctionFamily, radii: &[f64]) -> Vec<PairDistances> {
    let grid = fam.grid();
    let d = fam.value_dim();
    let norms: Vec<f64> = grid.points().map(|p| norm(&p)).collect();
    // first radius covering each point, or none
    let first: Vec<Option<usize>> = norms
        .iter()
        .map(|r| radii.iter().position(|t| r <= t))
        .collect();
    pairs(fam.len())
        .into_par_iter()
        .map(|(i, j)| {
            let (f, g) = (&fam.members[i], &fam.members[j]);
            let mut restricted = vec![0.0f64; radii.len()];
            let (mut full, mut at) = (0.0f64, 0);
            let mut diff = vec![0.0; d];
            for p in 0..grid.len() {
                for ((o, a), b) in diff.iter_mut().zip(f.value_at(p)).zip(g.value_at(p)) {
                    *o = a - b;
                }
                let v = norm(&diff);
                if v > full {
                    full = v;
                    at = p;
                }
                if let Some(k) = first[p] {
                    restricted[k] = restricted[k].max(v);
                }
            }
            for k in 1..restricted.len() {
                restricted[k] = restricted[k].max(restricted[k - 1]);
            }
            PairDistances {
                i,
                j,
                restricted,
                full,
                at,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionViolation {
    pub eps: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub delta: f64,
    pub pair: (usize, usize),
    /// Grid point where the full distance is attained.
    pub at: Vec<f64>,
    pub restricted: f64,
    pub full: f64,
}

/// Pairs with `sup_{||x|| <= T} d <= delta` but `sup d > eps`.
fn extension_violations(
    fam: &FunctionFamily,
    eps: f64,
    t: f64,
    delta: f64,
) -> Vec<ExtensionViolation> {
    let grid = fam.grid();
    pair_distances(fam, &[t])
        .into_iter()
        .filter(|p| p.restricted[0] <= delta && p.full > eps)
        .map(|p| ExtensionViolation {
            eps,
            t,
            delta,
            pair: (p.i, p.j),
            at: grid.point(p.at),
            restricted: p.restricted[0],
            full: p.full,
        })
        .collect()
}

fn delta_candidates(eps: f64) -> Vec<f64> {
    let lo = eps / 100.0;
    (0..DELTA_CANDIDATES)
        .map(|i| {
            if i + 1 == DELTA_CANDIDATES {
                eps
            } else {
                lo * 100f64.powf(i as f64 / (DELTA_CANDIDATES - 1) as f64)
            }
        })
        .collect()
}

/// `(T, delta)` such that every member pair within `delta` on
/// `||x|| <= T` is within `eps` everywhere on the grid.
///
/// With a tail hint, `T = find_truncation_radius(hint, eps / 4)` and
/// `delta = eps / 4`; a hint the family contradicts falls back to the
/// empirical search over the exhaustion radii with [`DELTA_CANDIDATES`]
/// log-spaced deltas in `[eps / 100, eps]`. The returned witness has been
/// checked against every pair.
pub fn find_extension_witness(
    fam: &FunctionFamily,
    eps: f64,
    tail_hint: Option<&dyn Fn(f64) -> f64>,
) -> Result<Option<ExtensionWitness>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if fam.len() < 2 {
        return Err(Error::invalid(
            "extension witnesses need at least 2 members",
        ));
    }
    let npairs = fam.len() * (fam.len() - 1) / 2;
    if let Some(hint) = tail_hint {
        let delta = eps / 4.0;
        let t = find_truncation_radius(hint, delta)?;
        let bad = extension_violations(fam, eps, t, delta);
        if bad.is_empty() {
            return Ok(Some(ExtensionWitness {
                eps,
                t,
                delta,
                method: WitnessMethod::Kernel,
                pairs_checked: npairs,
            }));
        }
        log::warn!(
            "kernel-derived witness (T = {t}, delta = {delta}) fails on {} pairs; searching empirically",
            bad.len()
        );
    }
    let radii = fam.domain().exhaustion_radii().to_vec();
    let dists = pair_distances(fam, &radii);
    let cands = delta_candidates(eps);
    for (k, &t) in radii.iter().enumerate() {
        let bad_min = dists
            .iter()
            .filter(|p| p.full > eps)
            .map(|p| p.restricted[k])
            .fold(f64::INFINITY, f64::min);
        let Some(&delta) = cands.iter().rev().find(|c| **c < bad_min) else {
            continue;
        };
        let bad = extension_violations(fam, eps, t, delta);
        if !bad.is_empty() {
            return Err(Error::Invariant(format!(
                "witness (T = {t}, delta = {delta}) has {} violating pairs",
                bad.len()
            )));
        }
        return Ok(Some(ExtensionWitness {
            eps,
            t,
            delta,
            method: WitnessMethod::Empirical,
            pairs_checked: npairs,
        }));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AACertificate {
    pub bound_m: f64,
    pub modulus: Vec<ModulusRow>,
    pub extension: Vec<ExtensionWitness>,
    /// Requested eps with no witness.
    pub uncertified_eps: Vec<f64>,
    pub sample_size: usize,
    pub provenance: String,
    /// `T` is nondecreasing as eps decreases over the extension rows.
    pub extension_monotone: bool,
}

/// Kernel-derived floors for the bound and the modulus, when the family is
/// the image of a known operator.
pub struct KernelBounds<'a> {
    pub bound: f64,
    pub modulus: &'a (dyn Fn(&[f64], f64) -> Result<f64> + Sync),
}

pub struct CertifyOptions<'a> {
    pub eps_list: Vec<f64>,
    pub probes: Option<Vec<Vec<f64>>>,
    pub deltas: Vec<f64>,
    pub tail_hint: Option<&'a dyn Fn(f64) -> f64>,
    pub kernel_bounds: Option<KernelBounds<'a>>,
}

/// Bound, modulus table and extension rows for `fam`. With kernel bounds
/// the certified values are the larger of the empirical and kernel figures.
pub fn certify(fam: &FunctionFamily, opts: &CertifyOptions) -> Result<AACertificate> {
    let probes = opts
        .probes
        .clone()
        .unwrap_or_else(|| default_probe_points(fam));
    let mut bound_m = estimate_bound(fam);
    let mut modulus = estimate_modulus(fam, &probes, &opts.deltas)?;
    if let Some(kb) = &opts.kernel_bounds {
        bound_m = bound_m.max(kb.bound);
        let floors = modulus
            .par_iter()
            .map(|row| (kb.modulus)(&row.x, row.delta))
            .collect::<Result<Vec<f64>>>()?;
        for (row, fl) in modulus.iter_mut().zip(floors) {
            row.omega = row.omega.max(fl);
        }
        // keep omega nondecreasing in delta at each probe
        for i in 1..modulus.len() {
            if modulus[i].x == modulus[i - 1].x {
                modulus[i].omega = modulus[i].omega.max(modulus[i - 1].omega);
            }
        }
    }
    let mut extension = Vec::new();
    let mut uncertified_eps = Vec::new();
    for &eps in &opts.eps_list {
        match find_extension_witness(fam, eps, opts.tail_hint)? {
            Some(w) => extension.push(w),
            None => uncertified_eps.push(eps),
        }
    }
    let mut sorted: Vec<&ExtensionWitness> = extension.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let extension_monotone = sorted.windows(2).all(|w| w[1].t >= w[0].t);
    Ok(AACertificate {
        bound_m,
        modulus,
        extension,
        uncertified_eps,
        sample_size: fam.len(),
        provenance: fam.provenance.clone(),
        extension_monotone,
    })
}

fn x_json(x: &[f64]) -> Value {
    if x.len() == 1 {
        json!(x[0])
    } else {
        json!(x)
    }
}

impl AACertificate {
    /// `{"M", "modulus": [[x, delta, omega]..], "extension": [[eps, T, delta]..],
    /// "sample_size"}` plus descriptive fields.
    pub fn to_json(&self) -> Value {
        json!({
            "M": self.bound_m,
            "modulus": self.modulus.iter().map(|r| json!([x_json(&r.x), r.delta, r.omega])).collect::<Vec<_>>(),
            "extension": self.extension.iter().map(|w| json!([w.eps, w.t, w.delta])).collect::<Vec<_>>(),
            "extension_methods": self.extension.iter().map(|w| w.method).collect::<Vec<_>>(),
            "uncertified_eps": self.uncertified_eps,
            "sample_size": self.sample_size,
            "provenance": self.provenance,
            "extension_monotone": self.extension_monotone,
            "label": CERTIFICATE_LABEL,
        })
    }

    /// Inverse of [`Self::to_json`]; descriptive fields are optional.
    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("certificate JSON: {what}"));
        let num = |v: &Value, what: &str| v.as_f64().ok_or_else(|| bad(what));
        let modulus = v["modulus"]
            .as_array()
            .ok_or_else(|| bad("modulus must be an array"))?
            .iter()
            .map(|row| {
                let x = match &row[0] {
                    Value::Array(a) => a
                        .iter()
                        .map(|c| num(c, "probe coordinate"))
                        .collect::<Result<Vec<f64>>>()?,
                    other => vec![num(other, "probe point")?],
                };
                Ok(ModulusRow {
                    x,
                    delta: num(&row[1], "delta")?,
                    omega: num(&row[2], "omega")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let methods = v["extension_methods"].as_array();
        let extension = v["extension"]
            .as_array()
            .ok_or_else(|| bad("extension must be an array"))?
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let method = methods
                    .and_then(|m| m.get(i))
                    .and_then(|m| serde_json::from_value(m.clone()).ok())
                    .unwrap_or(WitnessMethod::Empirical);
                Ok(ExtensionWitness {
                    eps: num(&row[0], "eps")?,
                    t: num(&row[1], "T")?,
                    delta: num(&row[2], "delta")?,
                    method,
                    pairs_checked: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AACertificate {
            bound_m: num(&v["M"], "M")?,
            modulus,
            extension,
            uncertified_eps: v["uncertified_eps"]
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default(),
            sample_size: v["sample_size"]
                .as_u64()
                .ok_or_else(|| bad("sample_size"))? as usize,
            provenance: v["provenance"].as_str().unwrap_or("").to_string(),
            extension_monotone: v["extension_monotone"].as_bool().unwrap_or(true),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusViolation {
    pub x: Vec<f64>,
    pub delta: f64,
    pub certified: f64,
    pub observed: f64,
    pub member: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub sample_size: usize,
    pub bound_certified: f64,
    pub bound_observed: f64,
    pub bound_ok: bool,
    pub modulus_violations: Vec<ModulusViolation>,
    pub extension_violations: Vec<ExtensionViolation>,
    /// Extension rows whose eps was requested but absent from the certificate.
    pub missing_eps: Vec<f64>,
    pub passed: bool,
    pub label: String,
}

/// Re-check a certificate on `holdout`: the bound and modulus with
/// [`MODULUS_SLACK`] relative slack, and the extension rows for `eps_list`
/// (all rows when empty) on every holdout pair.
pub fn verify_certificate(
    holdout: &FunctionFamily,
    cert: &AACertificate,
    eps_list: &[f64],
) -> Result<VerificationReport> {
    let slack = 1.0 + MODULUS_SLACK;
    let bound_observed = estimate_bound(holdout);
    let bound_ok = bound_observed <= cert.bound_m * slack;

    let mut modulus_violations = Vec::new();
    let mut by_probe: Vec<(Vec<f64>, Vec<&ModulusRow>)> = Vec::new();
    for row in &cert.modulus {
        match by_probe.iter_mut().find(|(x, _)| *x == row.x) {
            Some((_, rows)) => rows.push(row),
            None => by_probe.push((row.x.clone(), vec![row])),
        }
    }
    for (x, rows) in &by_probe {
        holdout.domain().check(x)?;
        let mut rows = rows.clone();
        rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        rows.dedup_by(|a, b| a.delta == b.delta);
        let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
        check_deltas(&deltas)?;
        let per_member = holdout
            .members
            .par_iter()
            .map(|f| member_oscillation(f, x, &deltas))
            .collect::<Result<Vec<_>>>()?;
        for (j, row) in rows.iter().enumerate() {
            let (member, observed) = per_member
                .iter()
                .enumerate()
                .map(|(m, w)| (m, w[j]))
                .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
            if observed > row.omega * slack && observed > 0.0 {
                modulus_violations.push(ModulusViolation {
                    x: x.clone(),
                    delta: row.delta,
                    certified: row.omega,
                    observed,
                    member,
                });
            }
        }
    }

    let mut ext_violations = Vec::new();
    let mut missing_eps = Vec::new();
    let rows: Vec<&ExtensionWitness> = if eps_list.is_empty() {
        cert.extension.iter().collect()
    } else {
        let mut v = Vec::new();
        for eps in eps_list {
            match cert.extension.iter().find(|w| w.eps == *eps) {
                Some(w) => v.push(w),
                None => missing_eps.push(*eps),
            }
        }
        v
    };
    for w in rows {
        ext_violations.extend(extension_violations(holdout, w.eps, w.t, w.delta));
    }
    let passed = bound_ok && modulus_violations.is_empty() && ext_violations.is_empty();
    Ok(VerificationReport {
        sample_size: holdout.len(),
        bound_certified: cert.bound_m,
        bound_observed,
        bound_ok,
        modulus_violations,
        extension_violations: ext_violations,
        missing_eps,
        passed,
        label: format!(
            "{CERTIFICATE_LABEL}, verified on {} held-out members",
            holdout.len()
        ),
    })
}
