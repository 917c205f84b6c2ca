//! One step of the semi-adaptive LOD scheme
//!
//! ```text
//! v+ = [prod_s (I - tau/2 M_s)^{-1} (I + tau/2 M_s)] (v + tau/2 g(v)) + tau/2 g(v*)
//! ```
//!
//! where `v*` approximates the new state: the explicit predictor
//! `w = v + tau (C v + g(v))`, a fixed-point iterate of the implicit form, or
//! a frozen source vector shared by both source slots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lodop::OperatorSet;
use crate::mesh::{Axis, DegeneracyField, Mesh};
use crate::model::{eval_source, ProblemSpec};
use crate::spectral::{DenseOracle, OracleCap};

/// Interior nodal field, its time and step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl StateVector {
    pub fn new(values: Vec<f64>, t: f64) -> Self {
        Self { values, t, step: 0 }
    }

    pub fn max(&self) -> f64 {
        max_value(&self.values)
    }
}

/// Largest entry, scanning in index order.
pub fn max_value(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// How `g(v+)` in the trailing source term is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceMode {
    /// Explicit Euler predictor, clamped below the singularity.
    Predictor,
    /// Iterate `v* <- scheme(v*)` until the max-norm update drops below `tol`.
    FixedPoint { max_iters: usize, tol: f64 },
    /// Use this source vector in both slots (linearized scheme).
    Frozen(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub source_mode: SourceMode,
    /// Directions in application order; the first entry acts first.
    pub sweep_order: [Axis; 3],
    /// Clamp the predictor to at most `1 - quench_eps / 10` before
    /// evaluating the source. When disabled an overshoot is an error.
    pub clamp_predictor: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { source_mode: SourceMode::Predictor, sweep_order: [Axis::X, Axis::Y, Axis::Z], clamp_predictor: true }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 3];
        for a in self.sweep_order {
            if std::mem::replace(&mut seen[a.index()], true) {
                return Err(Error::InvalidInput("sweep order must be a permutation of (1, 2, 3)".into()));
            }
        }
        if let SourceMode::FixedPoint { max_iters, tol } = self.source_mode {
            if max_iters == 0 || !(tol > 0.0) {
                return Err(Error::InvalidInput("fixed-point mode needs max_iters >= 1 and tol > 0".into()));
            }
        }
        Ok(())
    }
}

/// Result of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: StateVector,
    /// Predictor components clamped below the singularity.
    pub clamp_events: usize,
    /// Fixed-point iterations used (0 for other modes).
    pub iterations: usize,
}

/// Explicit predictor `w = v + tau (C v + g(v))`, unclamped.
pub fn predictor(
    state: &StateVector,
    tau: f64,
    ops: &OperatorSet,
    spec: &ProblemSpec,
    phi: &DegeneracyField,
) -> Result<Vec<f64>> {
    let g = eval_source(spec, phi, &state.values)?;
    Ok(predictor_with_source(&state.values, &g, tau, ops))
}

fn predictor_with_source(v: &[f64], g: &[f64], tau: f64, ops: &OperatorSet) -> Vec<f64> {
    let rhs = ops.apply_full_operator(v, g);
    v.iter().zip(&rhs).map(|(x, r)| x + tau * r).collect()
}

/// Clamps components above `ceiling`; returns how many were clamped.
pub fn clamp_predictor(w: &mut [f64], ceiling: f64) -> usize {
    let mut count = 0;
    for x in w.iter_mut().filter(|x| **x > ceiling) {
        *x = ceiling;
        count += 1;
    }
    count
}

pub(crate) fn clamp_ceiling(spec: &ProblemSpec) -> f64 {
    1.0 - spec.quench_eps / 10.0
}

/// Advances `state` by one LOD step of size `tau`.
pub fn lod_step(
    state: &StateVector,
    tau: f64,
    ops: &OperatorSet,
    spec: &ProblemSpec,
    phi: &DegeneracyField,
    cfg: &StepConfig,
) -> Result<StepReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {tau}")));
    }
    let v = &state.values;
    let half = 0.5 * tau;

    let g_now = match &cfg.source_mode {
        SourceMode::Frozen(g) => {
            if g.len() != v.len() {
                return Err(Error::InvalidInput("frozen source has wrong length".into()));
            }
            g.clone()
        }
        _ => eval_source(spec, phi, v)?,
    };

    let mut y: Vec<f64> = v.iter().zip(&g_now).map(|(x, g)| x + half * g).collect();
    ops.apply_product(tau, &cfg.sweep_order, &mut y)?;

    let mut clamp_events = 0;
    let mut iterations = 0;
    let values = match &cfg.source_mode {
        SourceMode::Frozen(g) => y.iter().zip(g).map(|(a, b)| a + half * b).collect(),
        SourceMode::Predictor => {
            let mut w = predictor_with_source(v, &g_now, tau, ops);
            if cfg.clamp_predictor {
                clamp_events = clamp_predictor(&mut w, clamp_ceiling(spec));
            }
            let g_w = eval_source(spec, phi, &w)?;
            y.iter().zip(&g_w).map(|(a, b)| a + half * b).collect()
        }
        SourceMode::FixedPoint { max_iters, tol } => {
            let mut current = predictor_with_source(v, &g_now, tau, ops);
            if cfg.clamp_predictor {
                clamp_events = clamp_predictor(&mut current, clamp_ceiling(spec));
            }
            let mut residual = f64::INFINITY;
            loop {
                if iterations == *max_iters {
                    return Err(Error::IterationFailure { iterations, residual });
                }
                iterations += 1;
                let g_star = eval_source(spec, phi, &current)?;
                let next: Vec<f64> = y.iter().zip(&g_star).map(|(a, b)| a + half * b).collect();
                residual = next.iter().zip(&current).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                current = next;
                if residual < *tol {
                    break current;
                }
            }
        }
    };

    Ok(StepReport { state: StateVector { values, t: state.t + tau, step: state.step + 1 }, clamp_events, iterations })
}

/// Max-norm difference between one LOD step and one unsplit Crank–Nicolson
/// step with identical source treatment, both from `state`. The unsplit step
/// comes from the dense oracle, so the grid must fit under `cap`.
#[allow(clippy::too_many_arguments)]
pub fn step_defect(
    state: &StateVector,
    tau: f64,
    mesh: &Mesh,
    ops: &OperatorSet,
    spec: &ProblemSpec,
    phi: &DegeneracyField,
    cfg: &StepConfig,
    cap: OracleCap,
) -> Result<f64> {
    cap.check(mesh.len())?;
    if tau == 0.0 {
        return Ok(0.0);
    }
    let oracle = DenseOracle::build(mesh, phi, spec.edges, cap)?;
    let split = lod_step(state, tau, ops, spec, phi, cfg)?;
    let unsplit = oracle.cn_step(state, tau, spec, phi, cfg)?;
    Ok(split.state.values.iter().zip(&unsplit).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}
