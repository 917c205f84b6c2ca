//! Arc-length temporal adaptation.
//!
//! Equal arc lengths of the discrete `v_t` curve over neighbouring intervals
//! give the recursion
//!
//! ```text
//! tau_l^2 = tau_{l-1}^2 + (D_{l-1} - D_{l-2})^2 - (D_l - D_{l-1})^2
//! ```
//!
//! on the max-norm derivative scalars `D`. Negative right-hand sides fall
//! back to the minimal step, and every emitted step is clipped to an optional
//! ceiling (by default the positivity bound on `tau`).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::beta_min;
use crate::mesh::{DegeneracyField, Mesh};
use crate::model::ProblemSpec;

/// Safety factor keeping the default ceiling strictly inside the positivity regime.
pub const CAP_SAFETY: f64 = 1.0 - 1e-9;

/// Where the step ceiling comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TauCap {
    /// `beta_min * min(edge^2) * (1 - 1e-9)`.
    Positivity,
    Fixed(f64),
    None,
}

impl TauCap {
    pub fn resolve(&self, mesh: &Mesh, phi: &DegeneracyField, spec: &ProblemSpec) -> Option<f64> {
        match self {
            TauCap::Positivity => Some(positivity_cap(mesh, phi, spec)),
            TauCap::Fixed(v) => Some(*v),
            TauCap::None => None,
        }
    }
}

/// Largest step that keeps every factor nonnegative / inverse-positive,
/// shrunk by [`CAP_SAFETY`].
pub fn positivity_cap(mesh: &Mesh, phi: &DegeneracyField, spec: &ProblemSpec) -> f64 {
    beta_min(mesh, phi) * spec.min_edge_sq(mesh) * CAP_SAFETY
}

/// Max-norm discrete time derivative `||v_curr - v_prev||_inf / tau_prev`.
pub fn derivative_scalar(v_prev: &[f64], v_curr: &[f64], tau_prev: f64) -> f64 {
    v_prev.iter().zip(v_curr).fold(0.0f64, |m, (a, b)| m.max((b - a).abs())) / tau_prev
}

/// One application of the arc-length recursion with the minimal-step floor
/// and optional ceiling.
pub fn next_step(tau_min: f64, tau_cap: Option<f64>, d_lm2: f64, d_lm1: f64, d_l: f64, tau_prev: f64) -> f64 {
    let disc = tau_prev * tau_prev + (d_lm1 - d_lm2).powi(2) - (d_l - d_lm1).powi(2);
    let tau = if disc.is_finite() { disc.max(tau_min * tau_min).sqrt() } else { tau_min };
    match tau_cap {
        Some(cap) => tau.min(cap),
        None => tau,
    }
}

/// Derivative history and last step; enough to resume a run exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerHistory {
    /// Up to three most recent derivative scalars, oldest first.
    pub derivatives: VecDeque<f64>,
    pub last_tau: Option<f64>,
    pub steps_taken: usize,
}

/// Minimal-step arc-length controller.
#[derive(Debug, Clone, PartialEq)]
pub struct StepController {
    tau0: f64,
    tau_min: f64,
    tau_cap: Option<f64>,
    adaptive: bool,
    history: ControllerHistory,
}

impl StepController {
    pub fn new(tau0: f64, tau_min: f64, tau_cap: Option<f64>) -> Result<Self> {
        if !(tau0 > 0.0) || !tau0.is_finite() {
            return Err(Error::InvalidInput(format!("tau0 must be positive, got {tau0}")));
        }
        if !(tau_min > 0.0 && tau_min < tau0) {
            return Err(Error::InvalidInput(format!(
                "tau_min must satisfy 0 < tau_min < tau0, got {tau_min} (tau0 = {tau0})"
            )));
        }
        if let Some(cap) = tau_cap {
            if !(cap >= tau_min) {
                return Err(Error::InvalidInput(format!(
                    "step ceiling {cap:e} is below tau_min {tau_min:e}; refine tau_min or coarsen the grid"
                )));
            }
        }
        Ok(Self { tau0, tau_min, tau_cap, adaptive: true, history: ControllerHistory::default() })
    }

    /// Constant steps of size `tau`; the recursion is disabled.
    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("step must be positive, got {tau}")));
        }
        Ok(Self { tau0: tau, tau_min: tau, tau_cap: None, adaptive: false, history: ControllerHistory::default() })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_cap(&self) -> Option<f64> {
        self.tau_cap
    }

    pub fn is_adaptive(&self) -> bool {
        self.adaptive
    }

    pub fn history(&self) -> &ControllerHistory {
        &self.history
    }

    pub fn restore(&mut self, history: ControllerHistory) {
        self.history = history;
    }

    fn push_derivative(&mut self, d: f64) {
        self.history.derivatives.push_back(d);
        while self.history.derivatives.len() > 3 {
            self.history.derivatives.pop_front();
        }
    }

    /// Seeds the history with the derivative at the initial time.
    pub fn record_initial(&mut self, d0: f64) {
        self.history = ControllerHistory::default();
        self.push_derivative(d0);
    }

    /// Records an accepted step of size `tau` whose new derivative scalar is `d`.
    pub fn record(&mut self, tau: f64, d: f64) {
        self.push_derivative(d);
        self.history.last_tau = Some(tau);
        self.history.steps_taken += 1;
    }

    /// Step size for the next step. The first two steps use `tau0`.
    pub fn propose(&self) -> f64 {
        if !self.adaptive {
            return self.tau0;
        }
        let bootstrap = self.tau_cap.map_or(self.tau0, |c| self.tau0.min(c));
        let h = &self.history;
        match (h.steps_taken, h.last_tau) {
            (n, Some(tau_prev)) if n >= 2 && h.derivatives.len() == 3 => {
                next_step(self.tau_min, self.tau_cap, h.derivatives[0], h.derivatives[1], h.derivatives[2], tau_prev)
            }
            _ => bootstrap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_scalar_cases() {
        let v = [0.1, 0.2, 0.3];
        assert_eq!(derivative_scalar(&v, &v, 0.01), 0.0);
        let w: Vec<f64> = v.iter().map(|x| x + 0.01).collect();
        assert!((derivative_scalar(&v, &w, 0.01) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recursion_cases() {
        // Equal jumps cancel.
        assert!((next_step(1e-9, None, 0.0, 0.5, 1.0, 0.01) - 0.01).abs() < 1e-12);
        let tau = next_step(1e-9, None, 0.0, 0.02, 0.03, 0.01);
        assert!((tau - 0.02).abs() < 1e-15);
        // Accelerating derivative drives the discriminant negative.
        assert_eq!(next_step(1e-9, None, 0.0, 0.0, 5.0, 0.01), 1e-9);
        assert_eq!(next_step(1e-9, Some(0.015), 0.0, 0.02, 0.03, 0.01), 0.015);
    }

    #[test]
    fn bootstrap_then_recursion() {
        let mut c = StepController::new(1e-3, 1e-9, None).unwrap();
        c.record_initial(1.0);
        assert_eq!(c.propose(), 1e-3);
        c.record(1e-3, 1.0);
        assert_eq!(c.propose(), 1e-3);
        c.record(1e-3, 1.0);
        assert_eq!(c.propose(), 1e-3);
        c.record(1e-3, 2.0);
        assert_eq!(c.propose(), 1e-9);
    }

    #[test]
    fn cap_applies_to_bootstrap() {
        let mut c = StepController::new(1e-3, 1e-9, Some(1e-4)).unwrap();
        c.record_initial(0.0);
        assert_eq!(c.propose(), 1e-4);
    }

    #[test]
    fn invalid_controllers() {
        assert!(StepController::new(1e-3, 1e-3, None).is_err());
        assert!(StepController::new(1e-3, 1e-2, None).is_err());
        assert!(StepController::new(1e-3, 1e-9, Some(1e-10)).is_err());
        assert!(StepController::fixed(0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn emitted_steps_stay_in_bounds(ds in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            let mut c = StepController::new(1e-2, 1e-7, Some(5e-2)).unwrap();
            c.record_initial(ds[0]);
            for d in &ds[1..] {
                let tau = c.propose();
                proptest::prop_assert!((1e-7..=5e-2).contains(&tau));
                c.record(tau, *d);
            }
        }

        #[test]
        fn constant_derivative_keeps_constant_steps(d in -10.0f64..10.0, n in 3usize..30) {
            let mut c = StepController::new(2e-3, 1e-9, None).unwrap();
            c.record_initial(d);
            for _ in 0..n {
                let tau = c.propose();
                proptest::prop_assert_eq!(tau, 2e-3);
                c.record(tau, d);
            }
        }
    }
}
