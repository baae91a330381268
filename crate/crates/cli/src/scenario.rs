//! Scenario files: TOML with one section per concern.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use intops::kernels::{
    affine_nonlinearity, exp_growth, exp_separable, exponential_family, identity_nonlinearity,
    mollified_volterra, sin_decay, tanh_nonlinearity, urysohn_decaying, urysohn_example,
    urysohn_linear_growth, urysohn_u_independent, urysohn_zero, user_tabulated_file, zero_kernel,
    zero_nonlinearity, GMap, DEFAULT_U_SAMPLES,
};
use intops::operators::{OperatorKind, OperatorSpec};
use intops::solvers::DEFAULT_ALPHA;
use intops::{Domain, Grid, LinearKernel, NonlinearityF, QuadraturePlan, UrysohnKernel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub operator: OperatorKindCfg,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub domain: DomainCfg,
    pub kernel: KernelCfg,
    pub nonlinearity: Option<NonlinearityCfg>,
    pub grid: GridCfg,
    #[serde(default)]
    pub quadrature: QuadratureCfg,
    #[serde(default)]
    pub input: InputCfg,
    #[serde(default)]
    pub solver: SolverCfg,
    #[serde(default)]
    pub check: CheckCfg,
    #[serde(default)]
    pub certify: CertifyCfg,
    #[serde(default)]
    pub volterra: VolterraCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKindCfg {
    Fredholm,
    Volterra,
    Hammerstein,
    Urysohn,
}

impl From<OperatorKindCfg> for OperatorKind {
    fn from(k: OperatorKindCfg) -> Self {
        match k {
            OperatorKindCfg::Fredholm => OperatorKind::Fredholm,
            OperatorKindCfg::Volterra => OperatorKind::Volterra,
            OperatorKindCfg::Hammerstein => OperatorKind::Hammerstein,
            OperatorKindCfg::Urysohn => OperatorKind::Urysohn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKindCfg {
    HalfLine,
    RealLine,
    Rn,
    Box,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    pub kind: DomainKindCfg,
    pub dim: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub exhaustion: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelCfg {
    ExponentialFamily {
        #[serde(default = "one")]
        scale: f64,
        g: Option<GMap>,
        #[serde(default = "one_usize")]
        d: usize,
    },
    ExpSeparable {
        #[serde(default = "one")]
        a: f64,
    },
    SinDecay {},
    ExpGrowth {},
    Zero {
        #[serde(default = "one_usize")]
        d: usize,
    },
    MollifiedVolterra {
        m: u32,
        base: Box<KernelCfg>,
    },
    UserTabulated {
        file: String,
    },
    UrysohnExample {},
    UrysohnDecaying {},
    UrysohnUIndependent {},
    UrysohnLinearGrowth {
        #[serde(default = "one")]
        slope: f64,
        #[serde(default = "one_usize")]
        d: usize,
    },
    UrysohnZero {
        #[serde(default = "one_usize")]
        d: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityCfg {
    Identity {
        #[serde(default = "one_usize")]
        d: usize,
    },
    Zero {
        #[serde(default = "one_usize")]
        d: usize,
    },
    Affine {
        a: f64,
        b: f64,
        #[serde(default = "one_usize")]
        d: usize,
    },
    Tanh {
        #[serde(default = "one_usize")]
        d: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    /// Explicit points per axis.
    pub axes: Option<Vec<Vec<f64>>>,
    /// Uniform points on `[lower, upper]` in every axis.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truncation {
    Radius(f64),
    Keyword(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureCfg {
    #[serde(default = "auto")]
    pub truncation: Truncation,
    /// Panels per axis for a fixed truncation radius.
    pub panels: Option<usize>,
    #[serde(default = "two")]
    pub panels_per_unit: f64,
    #[serde(default = "default_eps_tail")]
    pub eps_tail: f64,
    /// Sup norm the Urysohn envelope tail is evaluated at.
    pub envelope_m: Option<f64>,
}

fn auto() -> Truncation {
    Truncation::Keyword("auto".into())
}

fn two() -> f64 {
    2.0
}

fn default_eps_tail() -> f64 {
    1e-8
}

impl Default for QuadratureCfg {
    fn default() -> Self {
        QuadratureCfg {
            truncation: auto(),
            panels: None,
            panels_per_unit: two(),
            eps_tail: default_eps_tail(),
            envelope_m: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputCfg {
    /// Constant value, ones by default.
    Constant { value: Option<Vec<f64>> },
    /// `scale * e^{-||y||}` in every component.
    ExpDecay {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Member `index` of the seeded unit-ball family.
    RandomUnitBall {
        #[serde(default)]
        index: u64,
    },
    /// A sampled function in CSV form.
    Csv { file: String },
}

impl Default for InputCfg {
    fn default() -> Self {
        InputCfg::Constant { value: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverCfg {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub search_max: f64,
    pub m_grid: Vec<f64>,
    pub u_samples: usize,
    /// Probe points per axis for the Nyström residual.
    pub probe_points: usize,
}

impl Default for SolverCfg {
    fn default() -> Self {
        SolverCfg {
            lambda: 1.0,
            tol: 1e-10,
            max_iter: 100,
            alpha: DEFAULT_ALPHA,
            search_max: 100.0,
            m_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            u_samples: DEFAULT_U_SAMPLES,
            probe_points: 41,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckCfg {
    pub eps: f64,
    /// Sup-norm levels for `K_M` and condition (B).
    pub m: Vec<f64>,
    pub u_samples: usize,
}

impl Default for CheckCfg {
    fn default() -> Self {
        CheckCfg {
            eps: 1e-3,
            m: vec![1.0],
            u_samples: DEFAULT_U_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyCfg {
    pub eps: Vec<f64>,
    pub family_size: usize,
    pub holdout_size: usize,
    pub deltas: Vec<f64>,
    /// Use the kernel-derived witness and bounds when the operator is Fredholm.
    pub kernel_hint: bool,
}

impl Default for CertifyCfg {
    fn default() -> Self {
        CertifyCfg {
            eps: vec![0.1, 0.01, 0.001],
            family_size: 100,
            holdout_size: 50,
            deltas: vec![0.01, 0.05, 0.1, 0.5],
            kernel_hint: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolterraCfg {
    pub m: Vec<u32>,
    pub samples: usize,
}

impl Default for VolterraCfg {
    fn default() -> Self {
        VolterraCfg {
            m: vec![1, 2, 4, 8, 16, 32, 64],
            samples: 10,
        }
    }
}

/// A parse or validation failure at a line of the scenario file.
#[derive(Debug)]
pub struct ScenarioError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}: parse error: {}",
            self.path.display(),
            self.line,
            self.message
        )
    }
}

impl std::error::Error for ScenarioError {}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `[section]`, or of `key =` inside it, falling back to 1.
fn locate(text: &str, section: &str, key: Option<&str>) -> usize {
    let header = format!("[{section}]");
    let mut in_section = section.is_empty();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            if in_section && key.is_some() {
                break;
            }
            in_section = line == header;
            if in_section && key.is_none() {
                return i + 1;
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                if line.split('=').next().is_some_and(|lhs| lhs.trim() == k) {
                    return i + 1;
                }
            }
        }
    }
    1
}

/// A parsed scenario with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub text: String,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedScenario> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario {}", path.display()))?;
    let err = |line, message: String| ScenarioError {
        path: path.to_path_buf(),
        line,
        message,
    };
    if text.trim().is_empty() {
        return Err(err(1, "scenario file is empty".into()).into());
    }
    let scenario: Scenario = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| line_at(&text, s.start)).unwrap_or(1);
        err(line, e.message().to_string())
    })?;
    let loaded = LoadedScenario {
        scenario,
        base_dir: path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
        text,
        path: path.to_path_buf(),
    };
    loaded.validate()?;
    Ok(loaded)
}

/// Built kernel of either family.
pub enum BuiltKernel {
    Linear(LinearKernel),
    Urysohn(UrysohnKernel),
}

impl LoadedScenario {
    fn invalid(
        &self,
        section: &str,
        key: Option<&str>,
        message: impl Into<String>,
    ) -> anyhow::Error {
        ScenarioError {
            path: self.path.clone(),
            line: locate(&self.text, section, key),
            message: message.into(),
        }
        .into()
    }

    fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let urysohn_kernel = matches!(
            s.kernel,
            KernelCfg::UrysohnExample {}
                | KernelCfg::UrysohnDecaying {}
                | KernelCfg::UrysohnUIndependent {}
                | KernelCfg::UrysohnLinearGrowth { .. }
                | KernelCfg::UrysohnZero { .. }
        );
        if urysohn_kernel != (s.operator == OperatorKindCfg::Urysohn) {
            return Err(self.invalid(
                "kernel",
                Some("name"),
                "Urysohn kernels go with operator = \"urysohn\" and only there",
            ));
        }
        if (s.operator == OperatorKindCfg::Hammerstein) != s.nonlinearity.is_some() {
            return Err(self.invalid(
                "nonlinearity",
                None,
                "a [nonlinearity] section is required for hammerstein and only there",
            ));
        }
        if s.operator == OperatorKindCfg::Urysohn && s.domain.kind != DomainKindCfg::HalfLine {
            return Err(self.invalid(
                "domain",
                Some("kind"),
                "urysohn operators live on half_line",
            ));
        }
        if let Truncation::Keyword(k) = &s.quadrature.truncation {
            if k != "auto" {
                return Err(self.invalid(
                    "quadrature",
                    Some("truncation"),
                    format!("truncation must be a radius or \"auto\", got {k:?}"),
                ));
            }
        }
        if !(s.quadrature.eps_tail > 0.0) {
            return Err(self.invalid("quadrature", Some("eps_tail"), "eps_tail must be positive"));
        }
        if matches!(s.input, InputCfg::RandomUnitBall { .. }) && s.seed.is_none() {
            return Err(self.invalid("input", Some("kind"), "random inputs need a seed"));
        }
        self.domain()
            .map_err(|e| self.invalid("domain", None, e.to_string()))?;
        self.grid()
            .map_err(|e| self.invalid("grid", None, e.to_string()))?;
        Ok(())
    }

    /// Error for subcommands that draw random families without a seed.
    pub fn require_seed(&self, seed: Option<u64>) -> Result<u64> {
        seed.ok_or_else(|| {
            self.invalid(
                "",
                Some("seed"),
                "this subcommand needs a seed (set seed or pass --seed)",
            )
        })
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn domain(&self) -> Result<Domain> {
        let c = &self.scenario.domain;
        let d = match c.kind {
            DomainKindCfg::HalfLine => Domain::half_line(),
            DomainKindCfg::RealLine => Domain::real_line(),
            DomainKindCfg::Rn => Domain::rn(c.dim.ok_or_else(|| anyhow!("rn needs dim"))?)?,
            DomainKindCfg::Box => Domain::boxed(
                c.lower.clone().ok_or_else(|| anyhow!("box needs lower"))?,
                c.upper.clone().ok_or_else(|| anyhow!("box needs upper"))?,
            )?,
        };
        Ok(match &c.exhaustion {
            Some(r) => d.with_exhaustion(r.clone())?,
            None => d,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.scenario.grid;
        let n = self.domain()?.dim();
        let grid = match (&g.axes, g.lower, g.upper, g.points) {
            (Some(axes), None, None, None) => Grid::new(axes.clone())?,
            (None, Some(a), Some(b), Some(p)) => Grid::uniform(n, a, b, p)?,
            _ => bail!("give either axes or lower, upper and points"),
        };
        if grid.dim() != n {
            bail!("grid has {} axes, domain dimension is {n}", grid.dim());
        }
        let domain = self.domain()?;
        for p in grid.points() {
            domain.check(&p)?;
        }
        Ok(grid)
    }

    pub fn kernel(&self) -> Result<BuiltKernel> {
        let n = self.domain()?.dim();
        self.build_kernel(&self.scenario.kernel, n)
    }

    fn build_kernel(&self, c: &KernelCfg, n: usize) -> Result<BuiltKernel> {
        use BuiltKernel::{Linear, Urysohn};
        let one_d = |name: &str| -> Result<()> {
            if n != 1 {
                bail!("kernel {name} is one-dimensional, domain has dimension {n}");
            }
            Ok(())
        };
        Ok(match c {
            KernelCfg::ExponentialFamily { scale, g, d } => Linear(exponential_family(
                n,
                g.clone().unwrap_or(GMap::Identity),
                *scale,
                *d,
            )?),
            KernelCfg::ExpSeparable { a } => {
                one_d("exp_separable")?;
                Linear(exp_separable(*a))
            }
            KernelCfg::SinDecay {} => {
                one_d("sin_decay")?;
                Linear(sin_decay())
            }
            KernelCfg::ExpGrowth {} => {
                one_d("exp_growth")?;
                Linear(exp_growth())
            }
            KernelCfg::Zero { d } => Linear(zero_kernel(n, *d)),
            KernelCfg::MollifiedVolterra { m, base } => match self.build_kernel(base, n)? {
                Linear(k) => Linear(mollified_volterra(&k, *m)?),
                Urysohn(_) => bail!("mollified_volterra needs a linear base kernel"),
            },
            KernelCfg::UserTabulated { file } => {
                one_d("user_tabulated")?;
                Linear(user_tabulated_file(&self.resolve(file))?)
            }
            KernelCfg::UrysohnExample {} => Urysohn(urysohn_example()),
            KernelCfg::UrysohnDecaying {} => Urysohn(urysohn_decaying()),
            KernelCfg::UrysohnUIndependent {} => Urysohn(urysohn_u_independent()),
            KernelCfg::UrysohnLinearGrowth { slope, d } => {
                Urysohn(urysohn_linear_growth(*slope, *d))
            }
            KernelCfg::UrysohnZero { d } => Urysohn(urysohn_zero(*d)),
        })
    }

    pub fn nonlinearity(&self) -> Option<NonlinearityF> {
        self.scenario.nonlinearity.as_ref().map(|c| match c {
            NonlinearityCfg::Identity { d } => identity_nonlinearity(*d),
            NonlinearityCfg::Zero { d } => zero_nonlinearity(*d),
            NonlinearityCfg::Affine { a, b, d } => affine_nonlinearity(*d, *a, *b),
            NonlinearityCfg::Tanh { d } => tanh_nonlinearity(*d),
        })
    }

    /// Plan for a linear kernel: fixed radius, or automatic from the
    /// declared tail (the Volterra tail for Volterra operators).
    pub fn linear_plan(&self, k: &LinearKernel, kind: OperatorKind) -> Result<QuadraturePlan> {
        let q = &self.scenario.quadrature;
        let domain = self.domain()?;
        let grid = self.grid()?;
        match q.truncation {
            Truncation::Radius(t) => {
                let panels = q
                    .panels
                    .unwrap_or_else(|| ((2.0 * t * q.panels_per_unit).ceil() as usize).max(1));
                let plan = QuadraturePlan::build(&domain, t, panels)?;
                let r = grid.max_norm();
                let tail = if kind == OperatorKind::Volterra {
                    k.volterra_tail(t, r)
                } else {
                    k.domination_tail(t, r)
                };
                Ok(match tail {
                    Some(b) => plan.with_tail_bound(b),
                    None => plan,
                })
            }
            Truncation::Keyword(_) if kind == OperatorKind::Volterra => Ok(
                OperatorSpec::auto_plan_volterra(k, &domain, &grid, q.eps_tail, q.panels_per_unit)?,
            ),
            Truncation::Keyword(_) => Ok(OperatorSpec::auto_plan(
                k,
                &domain,
                &grid,
                q.eps_tail,
                q.panels_per_unit,
            )?),
        }
    }

    /// Plan for a Urysohn kernel with the envelope evaluated at `m`.
    pub fn urysohn_plan(&self, k: &UrysohnKernel, m: f64) -> Result<QuadraturePlan> {
        let q = &self.scenario.quadrature;
        let m = q.envelope_m.unwrap_or(m);
        match q.truncation {
            Truncation::Radius(t) => {
                let panels = q
                    .panels
                    .unwrap_or_else(|| ((t * q.panels_per_unit).ceil() as usize).max(1));
                let plan = QuadraturePlan::build(&Domain::half_line(), t, panels)?;
                Ok(match k.envelope() {
                    Some(env) => plan.with_tail_bound(env.tail(t, m)),
                    None => plan,
                })
            }
            Truncation::Keyword(_) => Ok(OperatorSpec::auto_plan_urysohn(
                k,
                m,
                q.eps_tail,
                q.panels_per_unit,
            )?),
        }
    }

    /// Operator spec for the scenario; Urysohn plans are sized for `urysohn_m`.
    pub fn spec(&self, urysohn_m: f64) -> Result<OperatorSpec> {
        let s = &self.scenario;
        let kind: OperatorKind = s.operator.into();
        let domain = self.domain()?;
        let grid = self.grid()?;
        let eps = s.quadrature.eps_tail;
        Ok(match self.kernel()? {
            BuiltKernel::Linear(k) => {
                let plan = self.linear_plan(&k, kind)?;
                match kind {
                    OperatorKind::Fredholm => OperatorSpec::fredholm(k, domain, grid, plan, eps)?,
                    OperatorKind::Volterra => OperatorSpec::volterra(k, domain, grid, plan, eps)?,
                    OperatorKind::Hammerstein => {
                        let f = self.nonlinearity().expect("validated");
                        OperatorSpec::hammerstein(k, f, domain, grid, plan, eps)?
                    }
                    OperatorKind::Urysohn => unreachable!("validated"),
                }
            }
            BuiltKernel::Urysohn(k) => {
                let plan = self.urysohn_plan(&k, urysohn_m)?;
                OperatorSpec::urysohn(k, grid, plan, eps)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        fs::write(&p, text).unwrap();
        (dir, p)
    }

    fn scenario_error(e: anyhow::Error) -> ScenarioError {
        e.downcast::<ScenarioError>().unwrap()
    }

    #[test]
    fn empty_file_fails_at_line_one() {
        let (_d, p) = write("");
        assert_eq!(scenario_error(load(&p).unwrap_err()).line, 1);
    }

    #[test]
    fn syntax_and_validation_errors_name_the_line() {
        let (_d, p) = write("name = \"x\"\noperator = \"fredholm\"\n[domain]\nkind = \"half_line\"\n[kernel]\nname = \"nope\"\n[grid]\nlower = 0.0\nupper = 1.0\npoints = 3\n");
        let e = scenario_error(load(&p).unwrap_err());
        assert!(e.message.contains("nope"), "{e}");
        let (_d, p) = write("name = \"x\"\noperator = \"hammerstein\"\n[domain]\nkind = \"half_line\"\n[kernel]\nname = \"exp_separable\"\n[grid]\nlower = 0.0\nupper = 1.0\npoints = 3\n");
        let e = scenario_error(load(&p).unwrap_err());
        assert_eq!(e.line, 1);
        assert!(e.message.contains("nonlinearity"));
        let (_d, p) = write("name = \"x\"\noperator = \"fredholm\"\n[domain]\nkind = \"half_line\"\n[kernel]\nname = \"exp_separable\"\n[grid]\nlower = 0.0\nupper = 1.0\npoints = 3\n[input]\nkind = \"random_unit_ball\"\n");
        let e = scenario_error(load(&p).unwrap_err());
        assert_eq!(e.line, 12);
    }

    #[test]
    fn full_scenario_builds() {
        let (_d, p) = write(
            r#"
name = "ham"
operator = "hammerstein"
seed = 3

[domain]
kind = "real_line"

[kernel]
name = "exponential_family"
scale = 0.25
g = { type = "saturating" }

[nonlinearity]
name = "affine"
a = 1.0
b = 0.5

[grid]
lower = -5.0
upper = 5.0
points = 11

[quadrature]
truncation = "auto"
eps_tail = 1e-10
"#,
        );
        let s = load(&p).unwrap();
        let spec = s.spec(1.0).unwrap();
        assert_eq!(spec.kind(), OperatorKind::Hammerstein);
        assert!(spec.plan().truncation_radius() > 20.0);
    }
}
