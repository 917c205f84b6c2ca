//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [problem]
//! edges = [3.141592653589793, 1.0, 1.0]
//! t_max = 2.0
//! degeneracy = { kind = "beta", p = 0.618 }
//! source = { kind = "power", r = 1.0, scale = 1.0 }
//! initial = { kind = "sine", amplitude = 0.001 }
//!
//! [grid.x]
//! kind = "uniform"
//! n = 200
//!
//! [stepping]
//! tau0 = 1e-4
//! tau_min = 1e-9
//!
//! [guard]
//! strict = false
//!
//! [output]
//! trace = "trace.jsonl"
//! ```
//!
//! Absent grid axes are inactive. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::TauCap;
use crate::error::{Error, Result};
use crate::harness::RunSetup;
use crate::mesh::{Axis, AxisGrid, Degeneracy, GridKind, Mesh};
use crate::model::{InitialField, PowerSource, ProblemSpec, DEFAULT_QUENCH_EPS};
use crate::stepper::{SourceMode, StepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub stepping: SteppingConfig,
    #[serde(default)]
    pub guard: GuardConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Physical edge lengths `[a, b, c]`.
    pub edges: [f64; 3],
    #[serde(default)]
    pub t0: f64,
    pub t_max: f64,
    pub degeneracy: DegeneracyConfig,
    pub source: SourceConfig,
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyKind {
    Power,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegeneracyConfig {
    pub kind: DegeneracyKind,
    /// Exponent of the power-law weight.
    pub q: Option<f64>,
    /// Exponent of the product weight `X^p (L - X)^(1-p)`.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Power,
}

/// `f(u) = scale / (1 - u)^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Zero,
    Constant,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub value: Option<f64>,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x: Option<AxisConfig>,
    pub y: Option<AxisConfig>,
    pub z: Option<AxisConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Uniform,
    Graded,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub kind: AxisKind,
    /// Interior node count (uniform and graded).
    pub n: Option<usize>,
    /// Grading exponent (graded).
    pub gamma: Option<f64>,
    /// Interior nodes in `(0, 1)` (explicit).
    pub nodes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapKind {
    #[default]
    Positivity,
    Fixed,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceModeKind {
    #[default]
    Predictor,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingConfig {
    pub tau0: f64,
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    #[serde(default = "yes")]
    pub adaptive: bool,
    #[serde(default)]
    pub cap: CapKind,
    pub cap_value: Option<f64>,
    #[serde(default)]
    pub source_mode: SourceModeKind,
    #[serde(default = "default_fp_iters")]
    pub fp_max_iters: usize,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_order")]
    pub sweep_order: [usize; 3],
    #[serde(default = "yes")]
    pub clamp_predictor: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_tau_min() -> f64 {
    1e-9
}

fn yes() -> bool {
    true
}

fn default_fp_iters() -> usize {
    50
}

fn default_fp_tol() -> f64 {
    1e-12
}

fn default_order() -> [usize; 3] {
    [1, 2, 3]
}

fn default_max_steps() -> usize {
    10_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardConfig {
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_quench_eps")]
    pub quench_eps: f64,
}

fn default_quench_eps() -> f64 {
    DEFAULT_QUENCH_EPS
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self { strict: false, quench_eps: DEFAULT_QUENCH_EPS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON-lines trace.
    pub trace: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

fn need<T: Copy>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing key `{what}`")))
}

impl AxisConfig {
    fn build(&self, name: &str) -> Result<AxisGrid> {
        let kind = match self.kind {
            AxisKind::Uniform => GridKind::Uniform,
            AxisKind::Graded => GridKind::Graded { gamma: need(self.gamma, &format!("grid.{name}.gamma"))? },
            AxisKind::Explicit => {
                let nodes =
                    self.nodes.clone().ok_or_else(|| Error::Config(format!("missing key `grid.{name}.nodes`")))?;
                return AxisGrid::from_interior(&nodes);
            }
        };
        AxisGrid::new(&kind, need(self.n, &format!("grid.{name}.n"))?)
    }
}

impl RunConfig {
    /// Parses TOML text; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let g = &self.grid;
        Mesh::new(
            g.x.as_ref().map(|a| a.build("x")).transpose()?,
            g.y.as_ref().map(|a| a.build("y")).transpose()?,
            g.z.as_ref().map(|a| a.build("z")).transpose()?,
        )
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let degeneracy = match p.degeneracy.kind {
            DegeneracyKind::Power => Degeneracy::PowerLaw { q: need(p.degeneracy.q, "problem.degeneracy.q")? },
            DegeneracyKind::Beta => Degeneracy::Beta { p: need(p.degeneracy.p, "problem.degeneracy.p")? },
        };
        let source = match p.source.kind {
            SourceKind::Power => PowerSource::new(p.source.r, p.source.scale)?,
        };
        let initial = match p.initial.kind {
            InitialKind::Zero => InitialField::Zero,
            InitialKind::Constant => InitialField::Constant(need(p.initial.value, "problem.initial.value")?),
            InitialKind::Sine => {
                InitialField::Sine { amplitude: need(p.initial.amplitude, "problem.initial.amplitude")? }
            }
        };
        let mut spec =
            ProblemSpec::new(p.edges, degeneracy, Arc::new(source)).with_initial(initial).with_horizon(p.t0, p.t_max);
        spec.quench_eps = self.guard.quench_eps;
        Ok(spec)
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        let s = &self.stepping;
        let mut order = [Axis::X; 3];
        for (slot, n) in order.iter_mut().zip(s.sweep_order) {
            *slot = Axis::from_number(n)
                .ok_or_else(|| Error::Config(format!("sweep_order entries must be 1, 2 or 3, got {n}")))?;
        }
        let source_mode = match s.source_mode {
            SourceModeKind::Predictor => SourceMode::Predictor,
            SourceModeKind::FixedPoint => SourceMode::FixedPoint { max_iters: s.fp_max_iters, tol: s.fp_tol },
        };
        let cfg = StepConfig { source_mode, sweep_order: order, clamp_predictor: s.clamp_predictor };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tau_cap(&self) -> Result<TauCap> {
        Ok(match self.stepping.cap {
            CapKind::Positivity => TauCap::Positivity,
            CapKind::None => TauCap::None,
            CapKind::Fixed => TauCap::Fixed(need(self.stepping.cap_value, "stepping.cap_value")?),
        })
    }

    pub fn setup(&self) -> Result<RunSetup> {
        let s = &self.stepping;
        let mut setup = RunSetup::new(self.mesh()?, self.problem()?)
            .with_steps(s.tau0, s.tau_min)
            .with_cap(self.tau_cap()?)
            .with_step_config(self.step_config()?)
            .strict(self.guard.strict);
        setup.adaptive = s.adaptive;
        setup.max_steps = s.max_steps;
        Ok(setup)
    }
}
