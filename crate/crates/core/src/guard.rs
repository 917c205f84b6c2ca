//! Runtime checks of the sufficient conditions for positivity, monotonicity
//! and stability, and the per-step solution monitor.
//!
//! Guards are advisory by default: failures are logged and recorded in the
//! trace header. In strict mode the run driver refuses to start when any of
//! the blocking checks fails.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lodop::OperatorSet;
use crate::mesh::{mesh_extrema, Axis, DegeneracyField, Mesh};
use crate::model::{eval_source, eval_source_jacobian_diag, ProblemSpec};
use crate::stepper::{max_value, StateVector};

/// Roundoff allowance for the componentwise monotonicity verdict.
pub const MONOTONE_TOL: f64 = 1e-12;

/// `beta_min = h_min^2 / (2 ||B||_2) = h_min^2 min(phi) / 2`.
pub fn beta_min(mesh: &Mesh, phi: &DegeneracyField) -> f64 {
    let (h_min, _) = mesh_extrema(mesh);
    0.5 * h_min * h_min * phi.inv_norm()
}

/// Step-size condition `tau / beta_min < min(edge^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CflCheck {
    pub passed: bool,
    pub tau: f64,
    pub beta_min: f64,
    /// Largest admissible step, `beta_min * min(edge^2)`.
    pub bound: f64,
    /// `min(edge^2) - tau / beta_min`.
    pub margin: f64,
    /// `1 - tau / bound`.
    pub normalized_margin: f64,
}

pub fn check_cfl(tau: f64, mesh: &Mesh, phi: &DegeneracyField, spec: &ProblemSpec) -> CflCheck {
    let beta = beta_min(mesh, phi);
    let e2 = spec.min_edge_sq(mesh);
    let bound = beta * e2;
    let margin = e2 - tau / beta;
    CflCheck { passed: margin > 0.0, tau, beta_min: beta, bound, margin, normalized_margin: 1.0 - tau / bound }
}

/// Mesh-size condition keeping the first step below unity from rest:
/// `h_max^2 < min(1/f0, 4/f(tau0 f0 / phi_min)) / (2 min(edge^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshBoundCheck {
    pub passed: bool,
    pub h_max: f64,
    /// `1 / (2 f0 min(edge^2))`.
    pub source_threshold: f64,
    /// `4 / (2 f(tau0 f0 / phi_min) min(edge^2))`; infinite-argument cases are NaN.
    pub predictor_threshold: f64,
    /// Which threshold binds: `"source"` or `"predictor"`.
    pub binding: String,
    /// `tau0 f0 / phi_min`.
    pub argument: f64,
    pub error: Option<String>,
}

pub fn check_mesh_bound(mesh: &Mesh, spec: &ProblemSpec, tau0: f64, phi: &DegeneracyField) -> MeshBoundCheck {
    let (_, h_max) = mesh_extrema(mesh);
    let e2 = spec.min_edge_sq(mesh);
    let f0 = spec.source.f0();
    let argument = tau0 * f0 / phi.inv_norm();
    let source_threshold = 1.0 / (2.0 * e2 * f0);
    if !(argument < 1.0) {
        return MeshBoundCheck {
            passed: false,
            h_max,
            source_threshold,
            predictor_threshold: f64::NAN,
            binding: "predictor".into(),
            argument,
            error: Some(format!("quench domain: tau0 f0 / phi_min = {argument} >= 1, the source is undefined there")),
        };
    }
    let predictor_threshold = 4.0 / (2.0 * e2 * spec.source.value(argument));
    let (bound, binding) = if source_threshold <= predictor_threshold {
        (source_threshold, "source")
    } else {
        (predictor_threshold, "predictor")
    };
    MeshBoundCheck {
        passed: h_max * h_max < bound,
        h_max,
        source_threshold,
        predictor_threshold,
        binding: binding.into(),
        argument,
        error: None,
    }
}

/// Start-up monotonicity conditions: (a) `C v0 + g(v0)/2 > 0` and
/// (b) `tau0 d < 2` where `d` bounds the source Jacobian diagonal along the
/// segment from `v0` to the predictor state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneStartCheck {
    pub passed: bool,
    pub condition_a: bool,
    /// Smallest component of `C v0 + g(v0)/2`.
    pub min_a: f64,
    pub condition_b: bool,
    /// `max f'(xi)/phi` over both segment endpoints (infinite if the predictor leaves [0, 1)).
    pub d0: f64,
    /// Step bound `min(beta_min min(edge^2), min 2 phi / f'(xi))`.
    pub tau_bound: f64,
}

pub fn check_monotonicity_start(
    state0: &StateVector,
    ops: &OperatorSet,
    mesh: &Mesh,
    spec: &ProblemSpec,
    phi: &DegeneracyField,
    tau0: f64,
) -> Result<MonotoneStartCheck> {
    let v0 = &state0.values;
    let g0 = eval_source(spec, phi, v0)?;
    let cv = ops.apply_sum(v0);
    let min_a = cv.iter().zip(&g0).map(|(c, g)| c + 0.5 * g).fold(f64::INFINITY, f64::min);

    let w0: Vec<f64> = v0.iter().zip(&cv).zip(&g0).map(|((v, c), g)| v + tau0 * (c + g)).collect();
    let d_start = eval_source_jacobian_diag(spec, phi, v0)?;
    let (d0, per_node_bound) = match eval_source_jacobian_diag(spec, phi, &w0) {
        Ok(d_end) => {
            let d_seg: Vec<f64> = d_start.iter().zip(&d_end).map(|(a, b)| a.max(*b)).collect();
            let d0 = d_seg.iter().copied().fold(0.0, f64::max);
            let bound =
                d_seg.iter().map(|d| if *d > 0.0 { 2.0 / d } else { f64::INFINITY }).fold(f64::INFINITY, f64::min);
            (d0, bound)
        }
        Err(_) => (f64::INFINITY, 0.0),
    };
    let tau_bound = (beta_min(mesh, phi) * spec.min_edge_sq(mesh)).min(per_node_bound);
    let condition_a = min_a > 0.0;
    let condition_b = tau0 * d0 < 2.0;
    Ok(MonotoneStartCheck { passed: condition_a && condition_b, condition_a, min_a, condition_b, d0, tau_bound })
}

/// Grid-regularity scan. For each direction and each interior node
/// `1 / (h_s^2 phi_prev edge^2) - 1 / (h_left h_right phi edge^2)` where
/// `h_s` is the smallest spacing of the axis and `phi_prev` is the weight at
/// the previous node along the axis (a boundary node for the first row).
/// `K = 2 max(0, max lhs)` bounds the logarithmic norm of every `M_s` when
/// the weight is nondecreasing along each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityCheck {
    pub passed: bool,
    pub k: f64,
    /// Largest left-hand side per axis (NaN for inactive axes).
    pub max_lhs: [f64; 3],
}

pub fn check_regularity(mesh: &Mesh, phi: &DegeneracyField, edges: [f64; 3]) -> RegularityCheck {
    let mut max_lhs = [f64::NAN; 3];
    let values = phi.values();
    let dims = mesh.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in mesh.active_axes() {
        let s = axis.index();
        let grid = mesh.axis(axis).expect("active axis");
        let h = grid.spacings();
        let h_axis = grid.min_spacing();
        let e2 = edges[s] * edges[s];
        let mut worst = f64::NEG_INFINITY;
        for idx in 0..mesh.len() {
            let i = mesh.ijk(idx)[s];
            let phi_prev = if i == 0 { phi.lower_face(axis, idx) } else { values[idx - strides[s]] };
            let lhs = (1.0 / (h_axis * h_axis * phi_prev) - 1.0 / (h[i] * h[i + 1] * values[idx])) / e2;
            worst = if lhs.is_nan() { f64::INFINITY } else { worst.max(lhs) };
        }
        max_lhs[s] = worst;
    }
    let worst = max_lhs.iter().filter(|x| !x.is_nan()).copied().fold(f64::NEG_INFINITY, f64::max);
    let k = 2.0 * worst.max(0.0);
    RegularityCheck { passed: k.is_finite(), k, max_lhs }
}

/// Generalized first-step bound for small nonzero initial data
/// `0 < max v0 < 1/8`: `h_max^2 < (1 - 8 max v0) / (2 F min(edge^2))` with
/// `F = f(max v0 + tau0 max(C v0 + g(v0)))`. Reported only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallDataBound {
    pub passed: bool,
    pub f_value: f64,
    pub bound: f64,
    pub h_max_sq: f64,
}

pub fn small_data_bound(
    state0: &StateVector,
    ops: &OperatorSet,
    mesh: &Mesh,
    spec: &ProblemSpec,
    phi: &DegeneracyField,
    tau0: f64,
) -> Result<Option<SmallDataBound>> {
    let vmax = state0.max();
    if !(vmax > 0.0 && vmax < 0.125) {
        return Ok(None);
    }
    let g0 = eval_source(spec, phi, &state0.values)?;
    let rhs = ops.apply_full_operator(&state0.values, &g0);
    let arg = vmax + tau0 * max_value(&rhs);
    let f_value = if arg < 1.0 { spec.source.value(arg) } else { f64::INFINITY };
    let bound = (1.0 - 8.0 * vmax) / (2.0 * f_value * spec.min_edge_sq(mesh));
    let (_, h_max) = mesh_extrema(mesh);
    Ok(Some(SmallDataBound { passed: h_max * h_max < bound, f_value, bound, h_max_sq: h_max * h_max }))
}

/// Everything the guards know before a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub cfl: CflCheck,
    pub mesh: MeshBoundCheck,
    pub monotone_start: MonotoneStartCheck,
    pub regularity: RegularityCheck,
    /// Step bound guaranteeing the start-up monotonicity conditions.
    pub tau_bound_monotone: f64,
    /// Largest source Jacobian diagonal at the initial state.
    pub jacobian_g: f64,
    pub small_data: Option<SmallDataBound>,
}

impl CriteriaReport {
    pub fn evaluate(
        state0: &StateVector,
        tau0: f64,
        ops: &OperatorSet,
        mesh: &Mesh,
        spec: &ProblemSpec,
        phi: &DegeneracyField,
    ) -> Result<Self> {
        let monotone_start = check_monotonicity_start(state0, ops, mesh, spec, phi, tau0)?;
        let jacobian_g = eval_source_jacobian_diag(spec, phi, &state0.values)?.into_iter().fold(0.0, f64::max);
        Ok(Self {
            cfl: check_cfl(tau0, mesh, phi, spec),
            mesh: check_mesh_bound(mesh, spec, tau0, phi),
            tau_bound_monotone: monotone_start.tau_bound,
            monotone_start,
            regularity: check_regularity(mesh, phi, spec.edges),
            jacobian_g,
            small_data: small_data_bound(state0, ops, mesh, spec, phi, tau0)?,
        })
    }

    /// Names of the failed checks that block a strict run.
    pub fn blocking_failures(&self) -> Vec<&'static str> {
        let mut failed = Vec::new();
        if !self.cfl.passed {
            failed.push("check_cfl");
        }
        if !self.mesh.passed {
            failed.push("check_mesh_bound");
        }
        if !self.monotone_start.passed {
            failed.push("check_monotonicity_start");
        }
        failed
    }

    pub fn all_passed(&self) -> bool {
        self.blocking_failures().is_empty()
    }
}

/// Per-step verdicts on positivity, monotonicity and quench onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub positive: bool,
    pub monotone: bool,
    pub quenched: bool,
    pub max_value: f64,
    /// Lexicographic index of the (first) maximum.
    pub argmax: usize,
    pub quench_location: Option<usize>,
}

pub fn monitor_step(prev: &StateVector, next: &StateVector, quench_eps: f64) -> MonitorVerdict {
    let positive = next.values.iter().all(|x| *x >= 0.0);
    let monotone = next.values.iter().zip(&prev.values).all(|(n, p)| n - p >= -MONOTONE_TOL);
    let (argmax, max_value) =
        next.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) });
    let quenched = max_value >= 1.0 - quench_eps;
    MonitorVerdict { positive, monotone, quenched, max_value, argmax, quench_location: quenched.then_some(argmax) }
}

/// Smallest squared edge over active axes, exposed for reports.
pub fn min_edge_sq(mesh: &Mesh, edges: [f64; 3]) -> f64 {
    mesh.active_axes().map(|a: Axis| edges[a.index()].powi(2)).fold(f64::INFINITY, f64::min)
}
