//! Experiment drivers: full quenching runs with traces and checkpoints,
//! perturbation twin runs, and fixed-step convergence tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{derivative_scalar, ControllerHistory, StepController, TauCap};
use crate::error::{Error, Result};
use crate::guard::{check_regularity, monitor_step, CriteriaReport};
use crate::lodop::OperatorSet;
use crate::mesh::{eval_degeneracy, DegeneracyField, Mesh};
use crate::model::{eval_source, eval_source_jacobian_diag, ProblemSpec};
use crate::spectral::{factor_norm, DenseOracle, OracleCap};
use crate::stepper::{lod_step, SourceMode, StateVector, StepConfig};

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub mesh: Mesh,
    pub spec: ProblemSpec,
    pub step: StepConfig,
    pub tau0: f64,
    pub tau_min: f64,
    pub cap: TauCap,
    /// `false` keeps every step at `tau0`.
    pub adaptive: bool,
    /// Refuse to start when a blocking guard fails.
    pub strict: bool,
    pub max_steps: usize,
}

impl RunSetup {
    pub fn new(mesh: Mesh, spec: ProblemSpec) -> Self {
        Self {
            mesh,
            spec,
            step: StepConfig::default(),
            tau0: 1e-4,
            tau_min: 1e-9,
            cap: TauCap::Positivity,
            adaptive: true,
            strict: false,
            max_steps: 10_000_000,
        }
    }

    pub fn with_steps(mut self, tau0: f64, tau_min: f64) -> Self {
        self.tau0 = tau0;
        self.tau_min = tau_min;
        self
    }

    pub fn with_cap(mut self, cap: TauCap) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_step_config(mut self, step: StepConfig) -> Self {
        self.step = step;
        self
    }

    pub fn fixed_step(mut self, tau: f64) -> Self {
        self.tau0 = tau;
        self.adaptive = false;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Validates the setup and evaluates the weight, operators, initial
    /// state and guard report.
    pub fn prepare(&self) -> Result<Prepared> {
        self.spec.validate()?;
        self.step.validate()?;
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        let phi = eval_degeneracy(&self.mesh, self.spec.edges, &self.spec.degeneracy)?;
        let ops = OperatorSet::build(&self.mesh, &phi, self.spec.edges)?;
        let state0 = StateVector::new(self.spec.initial_values(&self.mesh)?, self.spec.t0);
        let tau_cap = if self.adaptive { self.cap.resolve(&self.mesh, &phi, &self.spec) } else { None };
        let criteria = CriteriaReport::evaluate(&state0, self.tau0, &ops, &self.mesh, &self.spec, &phi)?;
        Ok(Prepared { phi, ops, state0, tau_cap, criteria })
    }

    fn controller(&self, tau_cap: Option<f64>) -> Result<StepController> {
        if self.adaptive {
            StepController::new(self.tau0, self.tau_min, tau_cap)
        } else {
            StepController::fixed(self.tau0)
        }
    }

    fn header(&self, prep: &Prepared, resumed_from_step: Option<usize>) -> TraceHeader {
        TraceHeader {
            unknowns: self.mesh.len(),
            dims: self.mesh.dims(),
            edges: self.spec.edges,
            degeneracy: format!("{:?}", self.spec.degeneracy),
            source: format!("{:?}", self.spec.source),
            tau0: self.tau0,
            tau_min: self.tau_min,
            tau_cap: prep.tau_cap,
            adaptive: self.adaptive,
            sweep_order: self.step.sweep_order.map(|a| a.number()),
            source_mode: match self.step.source_mode {
                SourceMode::Predictor => "predictor".into(),
                SourceMode::FixedPoint { .. } => "fixed_point".into(),
                SourceMode::Frozen(_) => "frozen".into(),
            },
            quench_eps: self.spec.quench_eps,
            t0: self.spec.t0,
            t_max: self.spec.t_max,
            criteria: prep.criteria.clone(),
            resumed_from_step,
        }
    }
}

/// Derived quantities shared by the drivers.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub phi: DegeneracyField,
    pub ops: OperatorSet,
    pub state0: StateVector,
    pub tau_cap: Option<f64>,
    pub criteria: CriteriaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub unknowns: usize,
    pub dims: [usize; 3],
    pub edges: [f64; 3],
    pub degeneracy: String,
    pub source: String,
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_cap: Option<f64>,
    pub adaptive: bool,
    pub sweep_order: [usize; 3],
    pub source_mode: String,
    pub quench_eps: f64,
    pub t0: f64,
    pub t_max: f64,
    pub criteria: CriteriaReport,
    pub resumed_from_step: Option<usize>,
}

/// One accepted step (or the initial state, with `tau = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub max_v: f64,
    pub argmax: usize,
    pub min_v: f64,
    /// Max-norm discrete time derivative over the step.
    pub d: f64,
    pub clamp_events: usize,
    pub positive: bool,
    pub monotone: bool,
    pub quenched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    /// `t` is the midpoint of `[t_last_ok, t_detected]`; `location` is the
    /// lexicographic index of the maximum and `coords` its unit-cube position.
    Quenched {
        t: f64,
        bracket: f64,
        t_last_ok: f64,
        t_detected: f64,
        location: usize,
        coords: [f64; 3],
    },
    HorizonReached {
        t: f64,
    },
    Error {
        kind: String,
        message: String,
    },
}

impl Outcome {
    pub fn quench_time(&self) -> Option<f64> {
        match self {
            Outcome::Quenched { t, .. } => Some(*t),
            _ => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Outcome::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub outcome: Outcome,
    pub steps: usize,
    pub final_t: f64,
    pub final_max_v: f64,
    /// Derivative scalar of the last recorded step.
    pub terminal_derivative: f64,
    /// Derivative scalar of the last step that stayed below the quench threshold.
    pub last_accepted_derivative: f64,
    pub clamp_events: usize,
    pub monotone_throughout: bool,
    pub positive_throughout: bool,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine<'a> {
    Header(&'a TraceHeader),
    Step(&'a StepRecord),
    Footer(&'a TraceFooter),
}

/// Complete record of a run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Last computed state (the detecting state when quenched).
    pub final_state: StateVector,
    pub controller: ControllerHistory,
}

impl RunTrace {
    pub fn footer(&self) -> TraceFooter {
        let last = self.records.last();
        TraceFooter {
            outcome: self.outcome.clone(),
            steps: self.records.iter().filter(|r| r.tau > 0.0).count(),
            final_t: self.final_state.t,
            final_max_v: self.final_state.max(),
            terminal_derivative: last.map_or(f64::NAN, |r| r.d),
            last_accepted_derivative: self.last_accepted_derivative(),
            clamp_events: self.records.iter().map(|r| r.clamp_events).sum(),
            monotone_throughout: self.records.iter().all(|r| r.monotone),
            positive_throughout: self.records.iter().all(|r| r.positive),
        }
    }

    /// Derivative scalar of the last recorded step.
    pub fn terminal_derivative(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.d)
    }

    /// Derivative scalar of the last step whose state stayed below the
    /// quench threshold (the step ending at `t_last_ok` for quenched runs).
    pub fn last_accepted_derivative(&self) -> f64 {
        self.records.iter().rev().find(|r| !r.quenched && r.tau > 0.0).map_or(f64::NAN, |r| r.d)
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &TraceLine::Header(&self.header))?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &TraceLine::Step(r))?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &TraceLine::Footer(&self.footer()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "t,max_v,tau,d")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.t, r.max_v, r.tau, r.d)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        self.write_jsonl(File::create(path)?)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            state: self.final_state.clone(),
            history: self.controller.clone(),
            tau0: self.header.tau0,
            tau_min: self.header.tau_min,
            tau_cap: self.header.tau_cap,
            adaptive: self.header.adaptive,
        }
    }
}

/// State and controller history; resuming from it reproduces the
/// uninterrupted run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: StateVector,
    pub history: ControllerHistory,
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_cap: Option<f64>,
    pub adaptive: bool,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

fn guard_gate(setup: &RunSetup, criteria: &CriteriaReport) -> Result<()> {
    let failed = criteria.blocking_failures();
    if failed.is_empty() {
        return Ok(());
    }
    if setup.strict {
        return Err(Error::GuardBlocked { failed, report: Box::new(criteria.clone()) });
    }
    for name in failed {
        log::warn!("guard {name} failed; continuing in advisory mode");
    }
    Ok(())
}

/// Runs from the initial state until quench, horizon, or a step error.
pub fn run(setup: &RunSetup) -> Result<RunTrace> {
    let prep = setup.prepare()?;
    guard_gate(setup, &prep.criteria)?;
    let mut controller = setup.controller(prep.tau_cap)?;
    let v0 = &prep.state0.values;
    let d0 = prep
        .ops
        .apply_full_operator(v0, &eval_source(&setup.spec, &prep.phi, v0)?)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    controller.record_initial(d0);
    let (argmax, max_v) = argmax(v0);
    let first = StepRecord {
        step: prep.state0.step,
        t: prep.state0.t,
        tau: 0.0,
        max_v,
        argmax,
        min_v: v0.iter().copied().fold(f64::INFINITY, f64::min),
        d: d0,
        clamp_events: 0,
        positive: v0.iter().all(|x| *x >= 0.0),
        monotone: true,
        quenched: false,
    };
    let header = setup.header(&prep, None);
    Ok(drive(setup, &prep, prep.state0.clone(), controller, header, vec![first]))
}

/// Continues a run from a checkpoint written by [`RunTrace::checkpoint`].
pub fn resume(setup: &RunSetup, checkpoint: &Checkpoint) -> Result<RunTrace> {
    let prep = setup.prepare()?;
    if checkpoint.state.values.len() != setup.mesh.len() {
        return Err(Error::InvalidInput(format!(
            "checkpoint has {} unknowns, grid has {}",
            checkpoint.state.values.len(),
            setup.mesh.len()
        )));
    }
    if checkpoint.adaptive != setup.adaptive || checkpoint.tau0 != setup.tau0 || checkpoint.tau_min != setup.tau_min {
        return Err(Error::InvalidInput("checkpoint step settings differ from the configuration".into()));
    }
    guard_gate(setup, &prep.criteria)?;
    let mut controller = setup.controller(checkpoint.tau_cap)?;
    controller.restore(checkpoint.history.clone());
    let header = setup.header(&prep, Some(checkpoint.state.step));
    Ok(drive(setup, &prep, checkpoint.state.clone(), controller, header, Vec::new()))
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if *x > bv { (i, *x) } else { (bi, bv) })
}

fn drive(
    setup: &RunSetup,
    prep: &Prepared,
    start: StateVector,
    mut controller: StepController,
    header: TraceHeader,
    mut records: Vec<StepRecord>,
) -> RunTrace {
    let spec = &setup.spec;
    let start_step = start.step;
    let mut state = start;
    let outcome = loop {
        if state.t >= spec.t_max {
            break Outcome::HorizonReached { t: state.t };
        }
        if state.step - start_step >= setup.max_steps {
            break Outcome::Error {
                kind: "step_limit".into(),
                message: format!("step limit {} reached at t = {}", setup.max_steps, state.t),
            };
        }
        let tau = controller.propose();
        let report = match lod_step(&state, tau, &prep.ops, spec, &prep.phi, &setup.step) {
            Ok(r) => r,
            // An iterate of the step left the source's domain: the solution
            // reaches 1 inside this step.
            Err(Error::QuenchDomain { index, .. }) => {
                break Outcome::Quenched {
                    t: state.t + 0.5 * tau,
                    bracket: tau,
                    t_last_ok: state.t,
                    t_detected: state.t + tau,
                    location: index,
                    coords: setup.mesh.node_coords(index),
                };
            }
            Err(e) => break Outcome::Error { kind: e.kind().into(), message: e.to_string() },
        };
        let next = report.state;
        if let Some(i) = next.values.iter().position(|x| !x.is_finite()) {
            break Outcome::Error {
                kind: "numeric_failure".into(),
                message: format!("non-finite value at node {i} after step {}", next.step),
            };
        }
        let d = derivative_scalar(&state.values, &next.values, tau);
        let verdict = monitor_step(&state, &next, spec.quench_eps);
        controller.record(tau, d);
        records.push(StepRecord {
            step: next.step,
            t: next.t,
            tau,
            max_v: verdict.max_value,
            argmax: verdict.argmax,
            min_v: next.values.iter().copied().fold(f64::INFINITY, f64::min),
            d,
            clamp_events: report.clamp_events,
            positive: verdict.positive,
            monotone: verdict.monotone,
            quenched: verdict.quenched,
        });
        let t_last_ok = state.t;
        state = next;
        if verdict.quenched {
            break Outcome::Quenched {
                t: 0.5 * (t_last_ok + state.t),
                bracket: state.t - t_last_ok,
                t_last_ok,
                t_detected: state.t,
                location: verdict.argmax,
                coords: setup.mesh.node_coords(verdict.argmax),
            };
        }
    };
    if let Outcome::Error { message, .. } = &outcome {
        log::error!("run stopped: {message}");
    }
    RunTrace { header, records, outcome, final_state: state, controller: controller.history().clone() }
}

/// How the twin runs treat the source term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    /// Both twins use `g(v0)` in every source slot.
    Frozen,
    /// Both twins use the live predictor source.
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauSchedule {
    Fixed { tau: f64, steps: usize },
    List(Vec<f64>),
}

impl TauSchedule {
    pub fn taus(&self) -> Vec<f64> {
        match self {
            TauSchedule::Fixed { tau, steps } => vec![*tau; *steps],
            TauSchedule::List(v) => v.clone(),
        }
    }
}

/// Dense uniform perturbation in `[-magnitude, magnitude]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub seed: u64,
    pub magnitude: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { seed: 0, magnitude: 1e-8 }
    }
}

impl Perturbation {
    pub fn sample(&self, n: usize) -> Vec<f64> {
        if self.magnitude == 0.0 {
            return vec![0.0; n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n).map(|_| rng.random_range(-self.magnitude..=self.magnitude)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    Completed,
    /// Stopped once a twin reached the max-value cap.
    Capped,
    /// A twin reached the quench neighbourhood first.
    Inconclusive,
}

/// Default max-value cap for live twin runs.
pub const LIVE_MAX_V_CAP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub mode: StabilityMode,
    pub seed: u64,
    pub magnitude: f64,
    pub status: StabilityStatus,
    /// Elapsed times, starting at 0.
    pub times: Vec<f64>,
    pub taus: Vec<f64>,
    /// `||z_l||_2`, starting with `||z_0||_2`.
    pub z_norms: Vec<f64>,
    /// Theoretical bound on `||z_l|| / ||z_0||` at each recorded time.
    pub envelope: Vec<f64>,
    /// `max_l ||z_l|| / ||z_0||`; `None` when `z_0 = 0`.
    pub c_emp: Option<f64>,
    pub k: f64,
    /// Measured second-order factor-norm constant (frozen mode).
    pub c2: Option<f64>,
    /// Largest source Jacobian diagonal seen by either twin (live mode).
    pub g: Option<f64>,
    pub degenerate: bool,
    pub within_envelope: bool,
}

impl PerturbationResult {
    pub fn ratios(&self) -> Vec<f64> {
        let z0 = self.z_norms[0];
        self.z_norms.iter().map(|z| z / z0).collect()
    }

    pub fn elapsed(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_jacobian(spec: &ProblemSpec, phi: &DegeneracyField, v: &[f64]) -> Result<f64> {
    Ok(eval_source_jacobian_diag(spec, phi, v)?.into_iter().fold(0.0, f64::max))
}

/// `max(0, (prod_s ||F_s(tau)|| - 1 - 3 K tau) / tau^2)` over the distinct steps.
fn measured_c2(setup: &RunSetup, phi: &DegeneracyField, taus: &[f64], k: f64, cap: OracleCap) -> Result<f64> {
    let oracle = DenseOracle::build(&setup.mesh, phi, setup.spec.edges, cap)?;
    let mut distinct: Vec<f64> = taus.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let active = setup.mesh.active_axes().count() as f64;
    let mut c2 = 0.0f64;
    for tau in distinct {
        let mut prod = 1.0;
        for axis in oracle.active_axes() {
            prod *= factor_norm(&oracle, axis, tau)?;
        }
        c2 = c2.max((prod - 1.0 - active * k * tau) / (tau * tau));
    }
    Ok(c2)
}

/// Twin runs from `v0` and `v0 + z0` with identical step sequences.
///
/// Frozen mode compares each `||z_l|| / ||z_0||` with
/// `prod_k (1 + 3 K tau_k + c2 tau_k^2)`, where `c2` is measured on the dense
/// factors, and needs the grid to fit under `cap`. Live mode stops at
/// `max_v_cap` and compares with `exp(G t) (1 + 3 K t)`.
pub fn stability_run(
    setup: &RunSetup,
    schedule: &TauSchedule,
    mode: StabilityMode,
    perturbation: Perturbation,
    max_v_cap: f64,
    cap: OracleCap,
) -> Result<PerturbationResult> {
    let taus = schedule.taus();
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("step schedule must be a nonempty list of positive steps".into()));
    }
    if !(perturbation.magnitude >= 0.0) {
        return Err(Error::InvalidInput("perturbation magnitude must be nonnegative".into()));
    }
    let prep = setup.prepare()?;
    let spec = &setup.spec;
    let phi = &prep.phi;
    let k = check_regularity(&setup.mesh, phi, spec.edges).k;
    let active = setup.mesh.active_axes().count() as f64;

    let cfg = match mode {
        StabilityMode::Frozen => StepConfig {
            source_mode: SourceMode::Frozen(eval_source(spec, phi, &prep.state0.values)?),
            ..setup.step.clone()
        },
        StabilityMode::Live => setup.step.clone(),
    };
    let c2 = match mode {
        StabilityMode::Frozen if k.is_finite() => Some(measured_c2(setup, phi, &taus, k, cap)?),
        _ => None,
    };

    let z0 = perturbation.sample(setup.mesh.len());
    let mut a = prep.state0.clone();
    let mut b = StateVector::new(a.values.iter().zip(&z0).map(|(v, z)| v + z).collect(), a.t);
    let z0_norm = norm2(&z0);
    let mut z_norms = vec![z0_norm];
    let mut times = vec![0.0];
    let mut used = Vec::new();
    let mut roundoff = vec![0.0];
    let mut g = match mode {
        StabilityMode::Live => Some(max_jacobian(spec, phi, &a.values)?.max(max_jacobian(spec, phi, &b.values)?)),
        StabilityMode::Frozen => None,
    };
    let mut status = StabilityStatus::Completed;

    for tau in taus {
        let (ra, rb) = rayon::join(
            || lod_step(&a, tau, &prep.ops, spec, phi, &cfg),
            || lod_step(&b, tau, &prep.ops, spec, phi, &cfg),
        );
        let (na, nb) = match (ra, rb) {
            (Ok(x), Ok(y)) => (x.state, y.state),
            (Err(Error::QuenchDomain { .. }), _) | (_, Err(Error::QuenchDomain { .. }))
                if mode == StabilityMode::Live =>
            {
                status = StabilityStatus::Inconclusive;
                break;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let top = na.max().max(nb.max());
        if mode == StabilityMode::Live && top >= 1.0 - spec.quench_eps {
            status = StabilityStatus::Inconclusive;
            break;
        }
        let z: Vec<f64> = nb.values.iter().zip(&na.values).map(|(y, x)| y - x).collect();
        z_norms.push(norm2(&z));
        times.push(na.t - spec.t0);
        used.push(tau);
        let scale = norm2(&na.values).max(norm2(&nb.values));
        roundoff.push(roundoff.last().copied().unwrap_or(0.0) + 64.0 * f64::EPSILON * scale);
        if let Some(gv) = g.as_mut() {
            *gv = gv.max(max_jacobian(spec, phi, &na.values)?).max(max_jacobian(spec, phi, &nb.values)?);
        }
        a = na;
        b = nb;
        if mode == StabilityMode::Live && top >= max_v_cap {
            status = StabilityStatus::Capped;
            break;
        }
    }

    let envelope: Vec<f64> = match mode {
        StabilityMode::Frozen => {
            let c = c2.unwrap_or(f64::INFINITY);
            let mut acc = 1.0;
            let mut env = vec![1.0];
            for tau in &used {
                acc *= 1.0 + active * k * tau + c * tau * tau;
                env.push(acc);
            }
            env
        }
        StabilityMode::Live => {
            let gv = g.unwrap_or(0.0);
            times.iter().map(|t| (gv * t).exp() * (1.0 + active * k * t)).collect()
        }
    };

    let degenerate = z0_norm == 0.0;
    let c_emp = (!degenerate).then(|| z_norms.iter().map(|z| z / z0_norm).fold(0.0, f64::max));
    let within_envelope = degenerate
        || z_norms.iter().zip(&envelope).zip(&roundoff).all(|((z, e), r)| *z <= e * z0_norm * (1.0 + 1e-12) + r);

    Ok(PerturbationResult {
        mode,
        seed: perturbation.seed,
        magnitude: perturbation.magnitude,
        status,
        times,
        taus: used,
        z_norms,
        envelope,
        c_emp,
        k,
        c2,
        g,
        degenerate,
        within_envelope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub tau: f64,
    /// Steps needed to reach the common time.
    pub steps: usize,
    /// Max value at the common time (`None` if quenched earlier).
    pub max_v_at_common: Option<f64>,
    pub quench_time: Option<f64>,
    pub bracket: Option<f64>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub t_common: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Max-norm differences of terminal states between consecutive rows.
    pub differences: Vec<f64>,
    /// Observed orders from consecutive differences.
    pub orders: Vec<f64>,
}

/// Fixed-step runs for each `tau`: terminal states at `t_common` (measured
/// from `t0`) and quenching times if the horizon allows.
pub fn convergence_study(setup: &RunSetup, taus: &[f64], t_common: f64) -> Result<ConvergenceTable> {
    if taus.len() < 3 {
        return Err(Error::InvalidInput("convergence study needs at least three step sizes".into()));
    }
    let mut steps = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("step sizes must be positive, got {tau}")));
        }
        let n = (t_common / tau).round();
        if n < 1.0 || (n * tau - t_common).abs() > 1e-9 * t_common.max(tau) {
            return Err(Error::InvalidInput(format!("common time {t_common} is not a multiple of step {tau}")));
        }
        steps.push(n as usize);
    }
    let results: Vec<Result<(ConvergenceRow, Option<Vec<f64>>)>> =
        taus.par_iter().zip(&steps).map(|(&tau, &n)| fixed_run(setup, tau, n)).collect();
    let mut rows = Vec::with_capacity(taus.len());
    let mut states = Vec::with_capacity(taus.len());
    for r in results {
        let (row, state) = r?;
        rows.push(row);
        states.push(state);
    }
    let mut differences = Vec::new();
    for w in states.windows(2) {
        match (&w[0], &w[1]) {
            (Some(x), Some(y)) => {
                differences.push(x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())));
            }
            _ => break,
        }
    }
    let orders =
        differences.windows(2).zip(taus.windows(2)).map(|(d, t)| (d[0] / d[1]).ln() / (t[0] / t[1]).ln()).collect();
    Ok(ConvergenceTable { t_common, rows, differences, orders })
}

fn fixed_run(setup: &RunSetup, tau: f64, n_common: usize) -> Result<(ConvergenceRow, Option<Vec<f64>>)> {
    let mut fixed = setup.clone().fixed_step(tau);
    fixed.strict = false;
    let prep = fixed.prepare()?;
    let spec = &fixed.spec;
    let mut state = prep.state0.clone();
    let mut at_common = None;
    let mut outcome = String::from("horizon_reached");
    let mut quench = None;
    let mut taken = 0usize;
    loop {
        if taken == n_common {
            at_common = Some(state.values.clone());
        }
        if state.t >= spec.t_max && taken >= n_common {
            break;
        }
        if taken >= fixed.max_steps {
            outcome = "step_limit".into();
            break;
        }
        let next = match lod_step(&state, tau, &prep.ops, spec, &prep.phi, &fixed.step) {
            Ok(r) => r.state,
            Err(e) => {
                outcome = e.kind().into();
                break;
            }
        };
        taken += 1;
        if next.max() >= 1.0 - spec.quench_eps {
            quench = Some((0.5 * (state.t + next.t), next.t - state.t));
            outcome = "quenched".into();
            break;
        }
        state = next;
    }
    let row = ConvergenceRow {
        tau,
        steps: n_common,
        max_v_at_common: at_common.as_ref().map(|v| crate::stepper::max_value(v)),
        quench_time: quench.map(|q| q.0),
        bracket: quench.map(|q| q.1),
        outcome,
    };
    Ok((row, at_common))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::{AxisGrid, Degeneracy};
    use crate::model::{InitialField, PowerSource};

    fn small_cube(q: f64, edge: f64) -> RunSetup {
        let mesh = Mesh::cube(AxisGrid::uniform(4).unwrap());
        let spec = ProblemSpec::new([edge; 3], Degeneracy::PowerLaw { q }, Arc::new(PowerSource::reciprocal()))
            .with_horizon(0.0, 0.05);
        RunSetup::new(mesh, spec).with_steps(1e-3, 1e-9)
    }

    #[test]
    fn weak_source_reaches_horizon_monotonically() {
        let mut setup = small_cube(0.0, 1.0);
        setup.spec.source = Arc::new(PowerSource::new(1.0, 1e-6).unwrap());
        setup.spec.t_max = 0.1;
        let trace = run(&setup).unwrap();
        assert!(matches!(trace.outcome, Outcome::HorizonReached { .. }));
        assert!(trace.records.iter().all(|r| r.monotone && r.positive));
        assert!(trace.records.windows(2).all(|w| w[1].t > w[0].t && w[1].step == w[0].step + 1));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut setup = small_cube(1.0, 1.0);
        setup.spec.t_max = 0.02;
        let first = run(&setup).unwrap();
        let mut longer = setup.clone();
        longer.spec.t_max = 0.05;
        let resumed = resume(&longer, &first.checkpoint()).unwrap();
        let full = run(&longer).unwrap();
        let joined: Vec<StepRecord> = first.records.iter().chain(&resumed.records).copied().collect();
        assert_eq!(joined, full.records);
        assert_eq!(resumed.final_state, full.final_state);
    }

    #[test]
    fn strict_mode_blocks_on_cfl() {
        let setup = small_cube(0.0, 1.0).with_steps(0.5, 1e-9).strict(true);
        match run(&setup) {
            Err(Error::GuardBlocked { failed, .. }) => assert!(failed.contains(&"check_cfl")),
            other => panic!("expected a guard block, got {other:?}"),
        }
    }

    #[test]
    fn trace_files_are_well_formed() {
        let trace = run(&small_cube(1.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["type"], "header");
        assert_eq!(lines.last().unwrap()["type"], "footer");
        assert_eq!(lines.len(), trace.records.len() + 2);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("t,max_v,tau,d\n"));
    }

    #[test]
    fn zero_perturbation_is_degenerate() {
        let setup = small_cube(1.0, 1.0);
        let r = stability_run(
            &setup,
            &TauSchedule::Fixed { tau: 1e-3, steps: 5 },
            StabilityMode::Frozen,
            Perturbation { seed: 1, magnitude: 0.0 },
            LIVE_MAX_V_CAP,
            OracleCap::default(),
        )
        .unwrap();
        assert!(r.degenerate && r.c_emp.is_none());
        assert!(r.z_norms.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn frozen_twins_on_flat_grid_do_not_grow() {
        let mut setup = small_cube(0.0, 1.0);
        setup.spec.initial = InitialField::Sine { amplitude: 0.1 };
        let r = stability_run(
            &setup,
            &TauSchedule::Fixed { tau: 5e-3, steps: 20 },
            StabilityMode::Frozen,
            Perturbation { seed: 3, magnitude: 1e-6 },
            LIVE_MAX_V_CAP,
            OracleCap::default(),
        )
        .unwrap();
        assert!(r.c_emp.unwrap() <= 1.0 + 1e-6);
        assert!(r.within_envelope);
    }

    #[test]
    fn convergence_needs_three_steps() {
        let setup = small_cube(0.0, 1.0);
        assert!(convergence_study(&setup, &[1e-3, 5e-4], 0.01).is_err());
        assert!(convergence_study(&setup, &[3e-3, 1e-3, 5e-4], 0.01).is_err());
    }
}
