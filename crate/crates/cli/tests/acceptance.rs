//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;

use intops::compactness::{find_extension_witness, FunctionFamily};
use intops::kernels::{check_car4, exp_separable, exponential_family, GMap};
use intops::operators::OperatorSpec;
use intops::solvers::solve_fredholm_2nd_kind;
use intops::{Domain, FnField, Grid, QuadraturePlan, SampledFunction};

const BIN: &str = env!("CARGO_BIN_EXE_intops");

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

struct Run {
    code: i32,
    dir: PathBuf,
    elapsed: Duration,
}

impl Run {
    fn json(&self, file: &str) -> Value {
        let text =
            fs::read_to_string(self.dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"));
        serde_json::from_str(&text).unwrap()
    }

    /// Rows of a sampled-function CSV as (x, v) pairs, one-dimensional.
    fn csv(&self, file: &str) -> Vec<(f64, f64)> {
        fs::read_to_string(self.dir.join(file))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let mut it = l.split(',').map(|s| s.parse::<f64>().unwrap());
                (it.next().unwrap(), it.next().unwrap())
            })
            .collect()
    }
}

fn run(root: &Path, sub: &str, name: &str, extra: &[&str]) -> Run {
    let dir = root.join(format!("{name}-{sub}"));
    let t = Instant::now();
    let status = Command::new(BIN)
        .arg(sub)
        .arg("--scenario")
        .arg(scenario(name))
        .arg("--out")
        .arg(&dir)
        .args(extra)
        .output()
        .expect("binary runs");
    let elapsed = t.elapsed();
    if !status.stderr.is_empty() {
        eprintln!(
            "  [{sub} {name}] {}",
            String::from_utf8_lossy(&status.stderr).trim()
        );
    }
    Run {
        code: status.status.code().unwrap_or(-1),
        dir,
        elapsed,
    }
}

struct Criterion {
    failures: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion {
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn fredholm_exactness(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "apply", "fredholm_exact", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let worst = r
        .csv("output.csv")
        .iter()
        .filter(|(x, _)| x.abs() <= 5.0)
        .map(|(_, v)| (v - 2.0).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-6, format!("max |Tf - 2| = {worst:e}"));
    c.check(
        r.elapsed < Duration::from_secs(5),
        format!("runtime {:?}", r.elapsed),
    );
    format!("max |Tf - 2| = {worst:.2e}, {:.2?}", r.elapsed)
}

fn car4_translation(c: &mut Criterion) -> String {
    let k = exponential_family(1, GMap::Saturating, 1.0, 1).unwrap();
    let domain = Domain::real_line();
    let grid = Grid::uniform(1, -10.0, 10.0, 21).unwrap();
    let plan = OperatorSpec::auto_plan(&k, &domain, &grid, 1e-10, 2.0).unwrap();
    let xs: Vec<Vec<f64>> = grid.points().collect();
    let r = check_car4(&k, &xs, &plan).unwrap();
    let lo = r.per_x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.per_x.iter().copied().fold(0.0, f64::max);
    c.check(r.per_x.len() == 21, "21 probe values");
    c.check(hi - lo < 1e-6, format!("spread {:e}", hi - lo));
    c.check((r.value - 2.0).abs() <= 1e-6, format!("value {}", r.value));
    format!("value {:.10}, spread {:.2e}", r.value, hi - lo)
}

fn k2_certification(root: &Path, c: &mut Criterion) -> String {
    let good = run(root, "check-kernel", "k2_saturating", &[]);
    let bad = run(root, "check-kernel", "k2_sin_decay", &[]);
    c.check(
        good.code == 0,
        format!("saturating kernel exit {}", good.code),
    );
    let j = good.json("check_kernel.json");
    let t_sup = f(&j["K2"]["T_sup"]);
    c.check(
        j["K2"]["certified"] == true && t_sup.is_finite(),
        "saturating kernel K2 certified",
    );
    c.check(j["K2"]["eps"] == 1e-3, "eps 1e-3");
    c.check(bad.code == 2, format!("sin kernel exit {}", bad.code));
    c.check(
        bad.json("check_kernel.json")["K2"]["certified"] == false,
        "sin kernel not certified",
    );
    for r in [&good, &bad] {
        c.check(
            r.elapsed < Duration::from_secs(30),
            format!("runtime {:?}", r.elapsed),
        );
    }
    format!(
        "T_sup = {t_sup:.1}, divergent kernel exit {}, {:.2?} / {:.2?}",
        bad.code, good.elapsed, bad.elapsed
    )
}

fn volterra_approximation(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "volterra-approx", "volterra_approx", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let j = r.json("volterra_approx.json");
    // the measured norm over the sample is the sup over its members
    let worst: Vec<(f64, f64)> = j["worst_case"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (f(&p[0]), f(&p[1])))
        .collect();
    c.check(
        worst.windows(2).all(|w| w[1].1 < w[0].1),
        "sup error decreases in m",
    );
    let slope = f(&j["worst_case_slope"]);
    c.check((-1.3..=-0.7).contains(&slope), format!("slope {slope}"));
    let slopes: Vec<f64> = j["slopes"].as_array().unwrap().iter().map(f).collect();
    c.check(slopes.len() == 10, "10 samples");
    let ms: Vec<u64> = j["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| row["result"]["m"].as_u64().unwrap())
        .collect();
    c.check(
        [1, 2, 4, 8, 16, 32, 64].iter().all(|m| ms.contains(m)),
        "m in 1..64",
    );
    let mut worst_gap = f64::NEG_INFINITY;
    for row in j["rows"].as_array().unwrap() {
        let gap = f(&row["result"]["error"]) - f(&row["result"]["bound"]);
        worst_gap = worst_gap.max(gap);
    }
    c.check(
        worst_gap <= 1e-8,
        format!("error exceeds bound by {worst_gap:e}"),
    );
    let (lo, hi) = slopes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
            (a.min(*s), b.max(*s))
        });
    format!(
        "sup-error slope {slope:.3} (per sample [{lo:.3}, {hi:.3}]), max(error - bound) = {worst_gap:.2e}"
    )
}

fn hammerstein_fixed_point(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "fixed-point", "hammerstein", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let j = r.json("fixed_point.json");
    let t = f(&j["radius"]["hammerstein"]["t_star"]);
    c.check((t - 2.0 / 3.0).abs() <= 1e-10, format!("t* = {t}"));
    let p = &j["picard"];
    let residual = f(&p["residual"]);
    let iterations = p["iterations"].as_u64().unwrap_or(u64::MAX);
    c.check(
        p["converged"] == true && residual < 1e-8,
        format!("residual {residual:e}"),
    );
    c.check(iterations <= 100, format!("{iterations} iterations"));
    let worst = r
        .csv("solution.csv")
        .iter()
        .map(|(_, v)| (v - 2.0 / 3.0).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-6, format!("max |f - 2/3| = {worst:e}"));
    let max_norm = p["iterate_norms"]
        .as_array()
        .unwrap()
        .iter()
        .map(f)
        .fold(0.0, f64::max);
    c.check(
        max_norm <= t + 1e-6,
        format!("iterate norm {max_norm} > t*"),
    );
    format!(
        "t* = {t:.12}, {iterations} iterations, residual {residual:.2e}, max |f - 2/3| = {worst:.2e}"
    )
}

fn urysohn_fixed_point(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "fixed-point", "urysohn", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let j = r.json("fixed_point.json");
    let radius = f(&j["radius"]["urysohn"]["radius"]);
    c.check((radius - 1.5).abs() <= 1e-3, format!("R = {radius}"));
    let ratios: Vec<f64> = j["radius"]["urysohn"]["curve"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|p| p["ratio"].as_f64())
        .collect();
    c.check(
        ratios.windows(2).all(|w| w[1] < w[0]),
        "ratio curve decreasing",
    );
    let last = *ratios.last().unwrap_or(&f64::NAN);
    c.check(last < 0.05, format!("last ratio {last}"));
    let residual = f(&j["picard"]["residual"]);
    c.check(residual < 1e-8, format!("picard residual {residual:e}"));

    let b = run(root, "check-kernel", "urysohn_b", &[]);
    c.check(b.code == 0, format!("condition B exit {}", b.code));
    let reports = b.json("check_kernel.json")["B"]
        .as_array()
        .cloned()
        .unwrap_or_default();
    let mut ts = Vec::new();
    for rep in &reports {
        c.check(
            rep["certified"] == true && rep["eps"] == 1e-6,
            "condition B certified at 1e-6",
        );
        c.check(f(&rep["tail_at_t"]) <= 1e-6, "post-checked tail <= eps");
        let t = f(&rep["T"]);
        c.check(
            (3.0..=3.3).contains(&t),
            format!("T = {t:.4} outside [3.0, 3.3]"),
        );
        ts.push(t);
    }
    c.check(!reports.is_empty(), "condition B reports");
    let pb = run(root, "fixed-point", "urysohn_b", &[]);
    let res_b = f(&pb.json("fixed_point.json")["picard"]["residual"]);
    c.check(
        pb.code == 0 && res_b < 1e-8,
        format!("variant picard residual {res_b:e}"),
    );
    format!(
        "R = {radius:.6}, last K_M/M = {last:.4}, B at T = {:?}, residuals {residual:.1e} / {res_b:.1e}",
        ts.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>()
    )
}

fn nystrom(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "solve-fredholm", "nystrom", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let worst = r
        .csv("solution_nodes.csv")
        .iter()
        .map(|(x, v)| (v - 2.0 * (-x).exp()).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-6, format!("max node error {worst:e}"));

    let k = exp_separable(1.0);
    let g = FnField::new(1, 1, |x: &[f64], o: &mut [f64]| o[0] = (-x[0]).exp());
    let errors: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&panels| {
            let plan = QuadraturePlan::build(&Domain::half_line(), 40.0, panels).unwrap();
            let sol = solve_fredholm_2nd_kind(&k, &g, 1.0, &plan, None).unwrap();
            let grid = sol.at_nodes.grid();
            (0..grid.len())
                .map(|i| (sol.at_nodes.value_at(i)[0] - 2.0 * (-grid.point(i)[0]).exp()).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    c.check(
        errors.windows(2).all(|w| w[1] < w[0]),
        format!("errors {errors:?}"),
    );
    format!(
        "max node error {worst:.2e}, doubling errors {:?}",
        errors
            .iter()
            .map(|e| format!("{e:.1e}"))
            .collect::<Vec<_>>()
    )
}

fn bump_family() -> FunctionFamily {
    let domain = Domain::half_line()
        .with_exhaustion(vec![1.0, 2.0, 4.0, 8.0, 16.0])
        .unwrap();
    let grid = Grid::uniform(1, 0.0, 40.0, 401).unwrap();
    let members = (20..=36)
        .step_by(4)
        .map(|c| {
            SampledFunction::from_fn(domain.clone(), grid.clone(), 1, |x, o| {
                o[0] = (1.0 - (x[0] - c as f64).abs()).max(0.0)
            })
            .unwrap()
        })
        .collect();
    FunctionFamily::new(members, "translated bumps").unwrap()
}

fn compactness(root: &Path, c: &mut Criterion) -> String {
    let r = run(root, "certify", "certify", &[]);
    c.check(r.code == 0, format!("exit code {}", r.code));
    let cert = r.json("certificate.json");
    c.check(cert["sample_size"] == 100, "100 members");
    let ext = cert["extension"].as_array().cloned().unwrap_or_default();
    for eps in [0.1, 0.01, 0.001] {
        let row = ext.iter().find(|w| f(&w[0]) == eps);
        c.check(
            row.is_some_and(|w| (f(&w[2]) - eps / 4.0).abs() <= 1e-15 * eps),
            format!("witness with delta = eps/4 at eps {eps}"),
        );
    }
    c.check(
        cert["extension_methods"]
            .as_array()
            .is_some_and(|m| m.iter().all(|s| s == "kernel")),
        "kernel-derived witnesses",
    );
    let v = r.json("verification.json");
    c.check(v["sample_size"] == 50, "50-member holdout");
    let violations = v["modulus_violations"]
        .as_array()
        .map_or(usize::MAX, Vec::len)
        + v["extension_violations"]
            .as_array()
            .map_or(usize::MAX, Vec::len);
    c.check(v["passed"] == true && violations == 0, "holdout verifies");
    let bumps = find_extension_witness(&bump_family(), 0.5, None).unwrap();
    c.check(
        bumps.is_none(),
        "translated bumps have no witness at eps 0.5",
    );
    let ts: Vec<String> = ext.iter().map(|w| format!("{:.0}", f(&w[1]))).collect();
    format!(
        "T = {ts:?}, holdout violations {violations}, bump witness {:?}, {:.2?}",
        bumps.map(|w| w.t),
        r.elapsed
    )
}

fn determinism(root: &Path, c: &mut Criterion) -> String {
    let cases: [(&str, &str); 9] = [
        ("apply", "fredholm_exact"),
        ("check-kernel", "k2_saturating"),
        ("check-kernel", "k2_sin_decay"),
        ("volterra-approx", "volterra_approx"),
        ("fixed-point", "hammerstein"),
        ("fixed-point", "urysohn"),
        ("check-kernel", "urysohn_b"),
        ("solve-fredholm", "nystrom"),
        ("certify", "certify"),
    ];
    let mut files = 0;
    for (sub, name) in cases {
        let a = run(&root.join("first"), sub, name, &["--threads", "1"]);
        let b = run(&root.join("second"), sub, name, &["--threads", "4"]);
        c.check(a.code == b.code, format!("{name}: exit codes differ"));
        let mut names: Vec<_> = fs::read_dir(&a.dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        let mut other: Vec<_> = fs::read_dir(&b.dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        other.sort();
        c.check(names == other, format!("{name}: file lists differ"));
        for n in &names {
            let same = fs::read(a.dir.join(n)).ok() == fs::read(b.dir.join(n)).ok();
            c.check(same, format!("{name}: {} differs", n.to_string_lossy()));
            files += 1;
        }
    }
    format!("{files} files byte-identical across reruns with 1 and 4 threads")
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let suite = Instant::now();
    let mut all_ok = true;
    let mut report = |id: u32, title: &str, body: &dyn Fn(&mut Criterion) -> String| {
        let mut c = Criterion::new();
        let t = Instant::now();
        let summary = body(&mut c);
        let status = if c.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        all_ok &= c.failures.is_empty();
        println!(
            "{status} criterion {id} {title}: {summary} [{:.2?}]",
            t.elapsed()
        );
        for f in &c.failures {
            println!("     {f}");
        }
    };
    report(1, "fredholm exactness", &|c| fredholm_exactness(root, c));
    report(2, "car4 translation invariance", &|c| car4_translation(c));
    report(3, "K2 certification", &|c| k2_certification(root, c));
    report(4, "volterra approximation", &|c| {
        volterra_approximation(root, c)
    });
    report(5, "hammerstein fixed point", &|c| {
        hammerstein_fixed_point(root, c)
    });
    report(6, "urysohn fixed point", &|c| urysohn_fixed_point(root, c));
    report(7, "nystrom solve", &|c| nystrom(root, c));
    report(8, "compactness certification", &|c| {
        let s = compactness(root, c);
        let total = suite.elapsed();
        c.check(
            total < Duration::from_secs(120),
            format!("suite so far {total:?}"),
        );
        s
    });
    report(9, "determinism", &|c| determinism(&root.join("rerun"), c));
    if !all_ok {
        std::process::exit(1);
    }
}
