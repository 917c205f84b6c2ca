//! The continuous problem: source nonlinearity, domain, initial data, and
//! the transformed source `g(u) = f(u) / phi`.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Axis, Degeneracy, DegeneracyField, Mesh};

/// Source nonlinearity `f` on `[0, 1)`: positive, strictly increasing and
/// unbounded as `u -> 1-`.
pub trait Source: Send + Sync + Debug {
    fn value(&self, u: f64) -> f64;

    fn derivative(&self, u: f64) -> f64;

    fn f0(&self) -> f64 {
        self.value(0.0)
    }

    /// Whether `f'` is nondecreasing on `[0, 1)`. When true, the maximum of
    /// `f'` over a segment is attained at one of its endpoints.
    fn derivative_nondecreasing(&self) -> bool {
        false
    }
}

/// `f(u) = scale / (1 - u)^r`, `r >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSource {
    pub r: f64,
    pub scale: f64,
}

impl PowerSource {
    pub fn new(r: f64, scale: f64) -> Result<Self> {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::InvalidInput(format!("source exponent must be >= 1, got {r}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput(format!("source scale must be positive, got {scale}")));
        }
        Ok(Self { r, scale })
    }

    /// `f(u) = 1 / (1 - u)`.
    pub fn reciprocal() -> Self {
        Self { r: 1.0, scale: 1.0 }
    }
}

impl Source for PowerSource {
    fn value(&self, u: f64) -> f64 {
        let gap = 1.0 - u;
        if self.r == 1.0 {
            self.scale / gap
        } else {
            self.scale / gap.powf(self.r)
        }
    }

    fn derivative(&self, u: f64) -> f64 {
        let gap = 1.0 - u;
        if self.r == 1.0 {
            self.scale / (gap * gap)
        } else {
            self.scale * self.r / gap.powf(self.r + 1.0)
        }
    }

    fn derivative_nondecreasing(&self) -> bool {
        true
    }
}

/// Spot-checks the [`Source`] contract on a fixed sample of `[0, 1)`.
pub fn validate_source(source: &dyn Source) -> Result<()> {
    let f0 = source.f0();
    if !(f0 > 0.0) || !f0.is_finite() {
        return Err(Error::InvalidInput(format!("source must satisfy f(0) > 0, got {f0}")));
    }
    let samples: Vec<f64> = (0..=20).map(|i| 0.99 * i as f64 / 20.0).collect();
    for w in samples.windows(2) {
        if !(source.value(w[1]) > source.value(w[0])) {
            return Err(Error::InvalidInput(format!(
                "source is not strictly increasing between {} and {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(u) = samples.iter().find(|u| !(source.derivative(**u) >= 0.0)) {
        return Err(Error::InvalidInput(format!("source derivative is negative at {u}")));
    }
    if !(source.value(1.0 - 1e-8) > 1e6 * f0) {
        return Err(Error::InvalidInput("source does not blow up as u -> 1".into()));
    }
    Ok(())
}

/// Initial temperature field on the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialField {
    Zero,
    Constant(f64),
    /// `amplitude * prod over active axes of sin(pi x)`; on a physical
    /// interval `[0, L]` this is `amplitude * sin(pi X / L)`.
    Sine {
        amplitude: f64,
    },
    /// Values at interior nodes in lexicographic order.
    Nodal(Vec<f64>),
}

/// The degenerate Kawarada problem on `(0,a) x (0,b) x (0,c)`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Physical edge lengths `[a, b, c]`.
    pub edges: [f64; 3],
    pub degeneracy: Degeneracy,
    pub source: Arc<dyn Source>,
    pub initial: InitialField,
    pub t0: f64,
    pub t_max: f64,
    /// Numerical quench trigger: `max v >= 1 - quench_eps`.
    pub quench_eps: f64,
}

pub const DEFAULT_QUENCH_EPS: f64 = 1e-6;

impl ProblemSpec {
    pub fn new(edges: [f64; 3], degeneracy: Degeneracy, source: Arc<dyn Source>) -> Self {
        Self {
            edges,
            degeneracy,
            source,
            initial: InitialField::Zero,
            t0: 0.0,
            t_max: 1.0,
            quench_eps: DEFAULT_QUENCH_EPS,
        }
    }

    pub fn with_initial(mut self, initial: InitialField) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_horizon(mut self, t0: f64, t_max: f64) -> Self {
        self.t0 = t0;
        self.t_max = t_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidInput(format!("domain edges must be positive, got {:?}", self.edges)));
        }
        if !(self.t0 < self.t_max) {
            return Err(Error::InvalidInput(format!("start time {} must precede horizon {}", self.t0, self.t_max)));
        }
        if !(self.quench_eps > 0.0 && self.quench_eps < 1.0) {
            return Err(Error::InvalidInput(format!("quench_eps must lie in (0, 1), got {}", self.quench_eps)));
        }
        validate_source(self.source.as_ref())
    }

    /// Smallest squared edge over the active axes.
    pub fn min_edge_sq(&self, mesh: &Mesh) -> f64 {
        mesh.active_axes().map(|a| self.edges[a.index()].powi(2)).fold(f64::INFINITY, f64::min)
    }

    /// Samples the initial field at the interior nodes.
    pub fn initial_values(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let n = mesh.len();
        let values = match &self.initial {
            InitialField::Zero => vec![0.0; n],
            InitialField::Constant(c) => vec![*c; n],
            InitialField::Sine { amplitude } => (0..n)
                .map(|idx| {
                    let x = mesh.node_coords(idx);
                    amplitude * mesh.active_axes().map(|a| (PI * x[a.index()]).sin()).product::<f64>()
                })
                .collect(),
            InitialField::Nodal(v) => {
                if v.len() != n {
                    return Err(Error::InvalidInput(format!(
                        "nodal initial field has {} values, grid has {n} unknowns",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some((i, u)) = values.iter().enumerate().find(|(_, u)| !(**u >= 0.0 && **u < 1.0)) {
            return Err(Error::InvalidInput(format!("initial value {u} at node {i} is outside [0, 1)")));
        }
        Ok(values)
    }
}

fn check_domain(v: &[f64]) -> Result<()> {
    match v.iter().position(|u| !(*u < 1.0)) {
        Some(index) => Err(Error::QuenchDomain { index, value: v[index] }),
        None => Ok(()),
    }
}

/// `g(v) = f(v) / phi`, componentwise.
pub fn eval_source(spec: &ProblemSpec, phi: &DegeneracyField, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    eval_source_into(spec.source.as_ref(), phi, v, &mut out)?;
    Ok(out)
}

pub fn eval_source_into(source: &dyn Source, phi: &DegeneracyField, v: &[f64], out: &mut [f64]) -> Result<()> {
    check_domain(v)?;
    for ((o, u), p) in out.iter_mut().zip(v).zip(phi.values()) {
        *o = source.value(*u) / p;
    }
    Ok(())
}

/// Diagonal of the source Jacobian, `f'(v) / phi`.
pub fn eval_source_jacobian_diag(spec: &ProblemSpec, phi: &DegeneracyField, v: &[f64]) -> Result<Vec<f64>> {
    check_domain(v)?;
    Ok(v.iter().zip(phi.values()).map(|(u, p)| spec.source.derivative(*u) / p).collect())
}

/// Spectral norm of the (diagonal) source Jacobian at `v`.
pub fn jacobian_norm(spec: &ProblemSpec, phi: &DegeneracyField, v: &[f64]) -> Result<f64> {
    Ok(eval_source_jacobian_diag(spec, phi, v)?.into_iter().fold(0.0, f64::max))
}

/// Active-axis flags, used by weight functions.
pub fn active_mask(mesh: &Mesh) -> [bool; 3] {
    Axis::ALL.map(|a| mesh.is_active(a))
}
