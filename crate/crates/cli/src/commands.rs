//! The six subcommands. Each writes its artifacts into the run directory
//! and returns whether the run certified what it set out to.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use intops::compactness::{
    certify, fredholm_modulus_bound, verify_certificate, CertifyOptions, FunctionFamily,
    KernelBounds,
};
use intops::domain::norm;
use intops::kernels::{
    check_car4, check_condition_b, check_k1_via_limit, check_k2, domain_directions, estimate_k_m,
    k2_oscillation,
};
use intops::operators::{
    apply, apply_hammerstein, apply_urysohn, car4_on_grid, loglog_slope, volterra_approx_error,
    OperatorKind, OperatorSpec,
};
use intops::solvers::{
    default_probe_grid, hammerstein_radius, picard_solve, solve_fredholm_2nd_kind, urysohn_radius,
};
use intops::{Error, Field, FnField, SampledFunction};

use crate::family::{unit_ball_family, GENERATOR};
use crate::scenario::{BuiltKernel, InputCfg, KernelCfg, LoadedScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Apply,
    SolveFredholm,
    FixedPoint,
    CheckKernel,
    Certify,
    VolterraApprox,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Apply => "apply",
            Command::SolveFredholm => "solve-fredholm",
            Command::FixedPoint => "fixed-point",
            Command::CheckKernel => "check-kernel",
            Command::Certify => "certify",
            Command::VolterraApprox => "volterra-approx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The computation ran but a certified property failed.
    NotCertified(String),
}

/// Output directory with the list of files written to it.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| {
            format!("cannot write {}", path.display())
        })?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn function(&mut self, name: &str, f: &SampledFunction) -> Result<()> {
        let mut w = self.open(name)?;
        f.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.open(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn copy(&mut self, name: &str, from: &Path) -> Result<()> {
        let bytes = fs::read(from).with_context(|| format!("cannot read {}", from.display()))?;
        let mut w = self.open(name)?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

pub struct Run<'a> {
    pub loaded: &'a LoadedScenario,
    pub seed: Option<u64>,
    pub dir: RunDir,
}

pub fn execute(
    cmd: Command,
    loaded: &LoadedScenario,
    seed: Option<u64>,
    out: &Path,
) -> Result<Outcome> {
    let mut run = Run {
        loaded,
        seed,
        dir: RunDir::create(out)?,
    };
    let outcome = match cmd {
        Command::Apply => run.apply()?,
        Command::SolveFredholm => run.solve_fredholm()?,
        Command::FixedPoint => run.fixed_point()?,
        Command::CheckKernel => run.check_kernel()?,
        Command::Certify => run.certify()?,
        Command::VolterraApprox => run.volterra_approx()?,
    };
    run.write_manifest(cmd, &outcome)?;
    Ok(outcome)
}

fn files_referenced(c: &KernelCfg, out: &mut Vec<String>) {
    match c {
        KernelCfg::UserTabulated { file } => out.push(file.clone()),
        KernelCfg::MollifiedVolterra { base, .. } => files_referenced(base, out),
        _ => {}
    }
}

/// Input function and a bound on its sup norm.
type Input = (Box<dyn Field>, f64);

impl Run<'_> {
    fn n(&self) -> Result<usize> {
        Ok(self.loaded.domain()?.dim())
    }

    fn input(&self, d: usize) -> Result<Input> {
        let n = self.n()?;
        Ok(match &self.loaded.scenario.input {
            InputCfg::Constant { value } => {
                let v = value.clone().unwrap_or_else(|| vec![1.0; d]);
                if v.len() != d {
                    bail!(
                        "constant input has {} components, operator needs {d}",
                        v.len()
                    );
                }
                let s = norm(&v);
                (
                    Box::new(FnField::new(n, d, move |_: &[f64], out: &mut [f64]| {
                        out.copy_from_slice(&v)
                    })),
                    s,
                )
            }
            InputCfg::ExpDecay { scale } => {
                let a = *scale;
                (
                    Box::new(FnField::new(n, d, move |y: &[f64], out: &mut [f64]| {
                        out.fill(a * (-norm(y)).exp())
                    })),
                    a.abs() * (d as f64).sqrt(),
                )
            }
            InputCfg::RandomUnitBall { index } => {
                let seed = self.loaded.require_seed(self.seed)?;
                let member = unit_ball_family(seed, *index as usize + 1, n, d)
                    .pop()
                    .expect("nonempty");
                (
                    Box::new(FnField::new(n, d, move |y: &[f64], out: &mut [f64]| {
                        member.eval_into(y, out)
                    })),
                    1.0,
                )
            }
            InputCfg::Csv { file } => {
                let path = self.loaded.resolve(file);
                let f =
                    File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
                let sf = SampledFunction::read_csv(self.loaded.domain()?, f)?;
                if sf.value_dim() != d {
                    bail!(
                        "input CSV has {} components, operator needs {d}",
                        sf.value_dim()
                    );
                }
                let s = sf.sup_norm();
                (Box::new(sf), s)
            }
        })
    }

    /// Value dimension of operator inputs.
    fn input_dim(&self) -> Result<usize> {
        Ok(match (self.loaded.kernel()?, self.loaded.nonlinearity()) {
            (_, Some(f)) => f.value_dim(),
            (BuiltKernel::Linear(k), None) => k.value_dim(),
            (BuiltKernel::Urysohn(k), None) => k.value_dim(),
        })
    }

    fn write_manifest(&mut self, cmd: Command, outcome: &Outcome) -> Result<()> {
        let loaded = self.loaded;
        self.dir.text("scenario.toml", &loaded.text)?;
        let mut extra = Vec::new();
        files_referenced(&loaded.scenario.kernel, &mut extra);
        if let InputCfg::Csv { file } = &loaded.scenario.input {
            extra.push(file.clone());
        }
        let mut copied = BTreeMap::new();
        for f in extra {
            let from = loaded.resolve(&f);
            let bytes =
                fs::read(&from).with_context(|| format!("cannot read {}", from.display()))?;
            let hash = hex::encode(Sha256::digest(&bytes));
            if Path::new(&f).is_relative() {
                self.dir.copy(&f, &from)?;
            }
            copied.insert(f, hash);
        }
        let mut outputs = self.dir.written.clone();
        outputs.sort();
        outputs.dedup();
        let seed_arg = self
            .seed
            .map(|s| format!(" --seed {s}"))
            .unwrap_or_default();
        let manifest = json!({
            "scenario": loaded.scenario.name,
            "subcommand": cmd.name(),
            "scenario_file": "scenario.toml",
            "scenario_sha256": hex::encode(Sha256::digest(loaded.text.as_bytes())),
            "referenced_files": copied,
            "seed": self.seed,
            "generator": GENERATOR,
            "versions": {"intops": intops::VERSION, "intops-cli": env!("CARGO_PKG_VERSION")},
            "outcome": match outcome {
                Outcome::Success => json!("success"),
                Outcome::NotCertified(why) => json!({"not_certified": why}),
            },
            "outputs": outputs,
            "rerun": format!("intops {} --scenario scenario.toml{seed_arg}", cmd.name()),
        });
        self.dir.json("manifest.json", &manifest)
    }

    fn apply(&mut self) -> Result<Outcome> {
        let d = self.input_dim()?;
        let (f, sup) = self.input(d)?;
        let spec = self.loaded.spec(sup)?;
        let applied = apply(&spec, f.as_ref())?;
        self.dir.function("output.csv", &applied.output)?;
        self.dir.json(
            "apply.json",
            &json!({
                "operator": spec.kind(),
                "kernel": kernel_name(&spec),
                "input_sup_bound": sup,
                "bounds": applied.bounds,
                "plan": spec.plan().summary(),
            }),
        )?;
        Ok(Outcome::Success)
    }

    fn solve_fredholm(&mut self) -> Result<Outcome> {
        let spec = self.loaded.spec(1.0)?;
        if spec.kind() != OperatorKind::Fredholm {
            bail!("solve-fredholm needs operator = \"fredholm\"");
        }
        let k = spec.linear_kernel().expect("fredholm");
        let (g, _) = self.input(k.value_dim())?;
        let cfg = &self.loaded.scenario.solver;
        let probe = default_probe_grid(spec.plan(), cfg.probe_points)?;
        let sol = solve_fredholm_2nd_kind(k, g.as_ref(), cfg.lambda, spec.plan(), Some(&probe))?;
        let on_grid = SampledFunction::from_field(
            spec.output_domain().clone(),
            spec.output_grid().clone(),
            &sol.interpolant.bind(g.as_ref()),
        )?;
        self.dir.function("solution_nodes.csv", &sol.at_nodes)?;
        self.dir.function("solution.csv", &on_grid)?;
        self.dir.json(
            "nystrom.json",
            &json!({
                "kernel": k.name(),
                "report": sol.report,
                "plan": spec.plan().summary(),
            }),
        )?;
        Ok(Outcome::Success)
    }

    fn fixed_point(&mut self) -> Result<Outcome> {
        let s = &self.loaded.scenario;
        let cfg = &s.solver;
        let domain = self.loaded.domain()?;
        let grid = self.loaded.grid()?;
        let d = self.input_dim()?;
        let f0 = SampledFunction::constant(domain, grid.clone(), &vec![0.0; d])?;
        let (radius_json, radius, spec) = match self.loaded.kernel()? {
            BuiltKernel::Linear(_) => {
                let spec = self.loaded.spec(1.0)?;
                if spec.kind() != OperatorKind::Hammerstein {
                    bail!("fixed-point needs a hammerstein or urysohn operator");
                }
                let c = car4_on_grid(&spec)?;
                let nl = spec.nonlinearity().expect("hammerstein").clone();
                let r = hammerstein_radius(c, &|t| nl.phi(t), cfg.search_max)?;
                let radius = r.t_star.or(r.inclusion_radius);
                (json!({"car4": c, "hammerstein": r}), radius, Some(spec))
            }
            BuiltKernel::Urysohn(k) => {
                let m_max = cfg.m_grid.iter().copied().fold(0.0, f64::max);
                let plan = self.loaded.urysohn_plan(&k, m_max)?;
                let xs: Vec<f64> = grid.axes()[0].clone();
                let r = urysohn_radius(&k, &xs, &plan, &cfg.m_grid, cfg.u_samples)?;
                let spec = match r.radius {
                    Some(radius) => Some(self.loaded.spec(radius)?),
                    None => None,
                };
                (json!({ "urysohn": r }), r.radius, spec)
            }
        };
        let (Some(radius), Some(spec)) = (radius, spec) else {
            self.dir.json(
                "fixed_point.json",
                &json!({"operator": s.operator, "radius": radius_json, "picard": Value::Null}),
            )?;
            return Ok(Outcome::NotCertified(
                "no invariant ball radius found".into(),
            ));
        };
        let op = |f: &SampledFunction| -> intops::Result<SampledFunction> {
            match spec.kind() {
                OperatorKind::Hammerstein => Ok(apply_hammerstein(&spec, f)?.output),
                _ => Ok(apply_urysohn(&spec, f)?.output),
            }
        };
        let out = picard_solve(op, &f0, radius, cfg.alpha, cfg.tol, cfg.max_iter)?;
        self.dir.function("solution.csv", &out.solution)?;
        self.dir.json(
            "fixed_point.json",
            &json!({
                "operator": s.operator,
                "kernel": kernel_name(&spec),
                "radius": radius_json,
                "picard": out.report,
                "plan": spec.plan().summary(),
            }),
        )?;
        Ok(if out.report.converged {
            Outcome::Success
        } else {
            Outcome::NotCertified(format!(
                "picard iteration stopped at residual {:e} after {} iterations",
                out.report.residual, out.report.iterations
            ))
        })
    }

    fn check_kernel(&mut self) -> Result<Outcome> {
        let cfg = &self.loaded.scenario.check;
        let domain = self.loaded.domain()?;
        let grid = self.loaded.grid()?;
        let mut failures = Vec::new();
        let report = match self.loaded.kernel()? {
            BuiltKernel::Linear(k) => {
                let plan = self.loaded.linear_plan(&k, OperatorKind::Fredholm)?;
                let xs: Vec<Vec<f64>> = grid.points().collect();
                let dirs = domain_directions(&domain);
                let car4 = check_car4(&k, &xs, &plan)?;
                let k2 = check_k2(&k, cfg.eps, &dirs, &plan)?;
                if !k2.certified {
                    failures.push("K2 not certified".to_string());
                }
                let k1 = match check_k1_via_limit(&k, cfg.eps, &dirs, &plan) {
                    Ok(r) => {
                        if !r.certified {
                            failures.push("K1 not certified".to_string());
                        }
                        serde_json::to_value(r)?
                    }
                    Err(Error::Unsupported(msg)) => json!({"skipped": msg}),
                    Err(e) => return Err(e.into()),
                };
                json!({
                    "kernel": k.name(),
                    "car4": car4,
                    "K2": k2,
                    "K1": k1,
                    "plan": plan.summary(),
                })
            }
            BuiltKernel::Urysohn(k) => {
                let m_max = cfg.m.iter().copied().fold(0.0, f64::max);
                let plan = self.loaded.urysohn_plan(&k, m_max)?;
                let xs: Vec<f64> = grid.axes()[0].clone();
                let km = cfg
                    .m
                    .iter()
                    .map(|&m| estimate_k_m(&k, m, &xs, &plan, cfg.u_samples))
                    .collect::<intops::Result<Vec<_>>>()?;
                let b = if k.has_asymptote() {
                    let reports = cfg
                        .m
                        .iter()
                        .map(|&m| check_condition_b(&k, cfg.eps, m, &xs, cfg.u_samples))
                        .collect::<intops::Result<Vec<_>>>()?;
                    if reports.iter().any(|r| !r.certified) {
                        failures.push("condition B not certified".to_string());
                    }
                    serde_json::to_value(reports)?
                } else {
                    json!({"skipped": format!("kernel {} declares no asymptote", k.name())})
                };
                json!({
                    "kernel": k.name(),
                    "K_M": km,
                    "B": b,
                    "plan": plan.summary(),
                })
            }
        };
        let certified = failures.is_empty();
        let mut report = report;
        report["certified"] = json!(certified);
        report["failures"] = json!(failures);
        self.dir.json("check_kernel.json", &report)?;
        Ok(if certified {
            Outcome::Success
        } else {
            Outcome::NotCertified(failures.join("; "))
        })
    }

    fn certify(&mut self) -> Result<Outcome> {
        let seed = self.loaded.require_seed(self.seed)?;
        let cfg = &self.loaded.scenario.certify;
        let n = self.n()?;
        let d = self.input_dim()?;
        let spec = self.loaded.spec(1.0)?;
        let total = cfg.family_size + cfg.holdout_size;
        let members = unit_ball_family(seed, total, n, d);
        let images = members
            .iter()
            .map(|m| Ok(apply(&spec, &m.field())?.output))
            .collect::<Result<Vec<_>>>()?;
        let mut images = images.into_iter();
        let fam_members: Vec<_> = images.by_ref().take(cfg.family_size).collect();
        let holdout_members: Vec<_> = images.collect();
        let provenance = format!(
            "{} image of {} seeded unit-ball samples",
            spec.kind().name(),
            cfg.family_size
        );
        let fam = FunctionFamily::new(fam_members, provenance)?;

        let kernel_route = cfg.kernel_hint && spec.kind() == OperatorKind::Fredholm;
        let dirs = domain_directions(spec.output_domain());
        let plan = spec.plan().clone();
        let k = spec.linear_kernel().cloned();
        let hint = |t: f64| match &k {
            Some(k) => k2_oscillation(k, &dirs, t, &plan).unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        };
        let car4 = if kernel_route {
            car4_on_grid(&spec)?
        } else {
            0.0
        };
        let modulus = |x: &[f64], delta: f64| -> intops::Result<f64> {
            let k = k.as_ref().expect("kernel route");
            fredholm_modulus_bound(
                k,
                &plan,
                spec.output_grid(),
                spec.output_domain(),
                x,
                delta,
                1.0,
            )
        };
        let opts = CertifyOptions {
            eps_list: cfg.eps.clone(),
            probes: None,
            deltas: cfg.deltas.clone(),
            tail_hint: kernel_route.then_some(&hint as &dyn Fn(f64) -> f64),
            kernel_bounds: kernel_route.then_some(KernelBounds {
                bound: car4,
                modulus: &modulus,
            }),
        };
        let cert = certify(&fam, &opts)?;
        self.dir.json("certificate.json", &cert.to_json())?;
        let mut failures = Vec::new();
        if !cert.uncertified_eps.is_empty() {
            failures.push(format!(
                "no extension witness for eps {:?}",
                cert.uncertified_eps
            ));
        }
        if holdout_members.len() >= 2 {
            let holdout = FunctionFamily::new(holdout_members, "holdout")?;
            let report = verify_certificate(&holdout, &cert, &cfg.eps)?;
            if !report.passed {
                failures.push("holdout verification failed".into());
            }
            self.dir.json("verification.json", &report)?;
        }
        Ok(if failures.is_empty() {
            Outcome::Success
        } else {
            Outcome::NotCertified(failures.join("; "))
        })
    }

    fn volterra_approx(&mut self) -> Result<Outcome> {
        let seed = self.loaded.require_seed(self.seed)?;
        let cfg = &self.loaded.scenario.volterra;
        let spec = self.loaded.spec(1.0)?;
        if spec.kind() != OperatorKind::Volterra {
            bail!("volterra-approx needs operator = \"volterra\"");
        }
        let n = self.n()?;
        let d = self.input_dim()?;
        let members = unit_ball_family(seed, cfg.samples, n, d);
        let mut rows = Vec::new();
        let mut csv = String::from("m,sample,error,bound\n");
        let mut violations = Vec::new();
        for &m in &cfg.m {
            for (i, member) in members.iter().enumerate() {
                let r = volterra_approx_error(&spec, &member.field(), m)?;
                csv.push_str(&format!("{m},{i},{:e},{:e}\n", r.error, r.bound));
                if r.error > r.bound + r.tolerance {
                    violations
                        .push(json!({"m": m, "sample": i, "error": r.error, "bound": r.bound}));
                }
                rows.push((m, i, r));
            }
        }
        let slopes: Vec<Option<f64>> = (0..members.len())
            .map(|i| {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.1 == i)
                    .map(|r| (f64::from(r.0), r.2.error))
                    .collect();
                loglog_slope(&pts)
            })
            .collect();
        let worst: Vec<(f64, f64)> = cfg
            .m
            .iter()
            .map(|&m| {
                let e = rows
                    .iter()
                    .filter(|r| r.0 == m)
                    .map(|r| r.2.error)
                    .fold(0.0, f64::max);
                (f64::from(m), e)
            })
            .collect();
        self.dir.text("volterra_approx.csv", &csv)?;
        self.dir.json(
            "volterra_approx.json",
            &json!({
                "kernel": kernel_name(&spec),
                "rows": rows.iter().map(|(_, i, r)| json!({"sample": i, "result": r})).collect::<Vec<_>>(),
                "slopes": slopes,
                "worst_case": worst,
                "worst_case_slope": loglog_slope(&worst),
                "bound_violations": violations,
            }),
        )?;
        Ok(if violations.is_empty() {
            Outcome::Success
        } else {
            Outcome::NotCertified(format!(
                "{} errors exceed the strip bound",
                violations.len()
            ))
        })
    }
}

fn kernel_name(spec: &OperatorSpec) -> String {
    match (spec.linear_kernel(), spec.urysohn_kernel()) {
        (Some(k), _) => k.name().to_string(),
        (_, Some(k)) => k.name().to_string(),
        _ => String::new(),
    }
}
