//! Dense reference operators.
//!
//! [`DenseOracle`] assembles every `M_s` through Kronecker products of a
//! second-difference matrix built from node coordinates, without touching the
//! structured operators. [`materialize`] goes the other way and reads a
//! structured operator off its action on unit vectors.

use super::dense::DenseMatrix;
use super::OracleCap;
use crate::error::Error;
use crate::error::Result;
use crate::lodop::{DirectionalOperator, OperatorSet};
use crate::mesh::{Axis, AxisGrid, DegeneracyField, Mesh};
use crate::model::{eval_source, ProblemSpec};
use crate::stepper::{clamp_ceiling, clamp_predictor, SourceMode, StateVector, StepConfig};

/// Second-difference matrix on the interior nodes of `grid`:
/// `u'' ~ 2 / (hl + hr) ((u+ - u) / hr - (u - u-) / hl)`.
pub fn second_difference(grid: &AxisGrid) -> DenseMatrix {
    let x = grid.nodes();
    let n = x.len() - 2;
    let mut t = DenseMatrix::zeros(n);
    for r in 0..n {
        let hl = x[r + 1] - x[r];
        let hr = x[r + 2] - x[r + 1];
        let w = 2.0 / (hl + hr);
        if r > 0 {
            t[(r, r - 1)] = w / hl;
        }
        t[(r, r)] = -w / hr - w / hl;
        if r + 1 < n {
            t[(r, r + 1)] = w / hr;
        }
    }
    t
}

/// Dense `M_s`, their sum `C`, and the schemes built from them.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    dims: [usize; 3],
    m: [Option<DenseMatrix>; 3],
    c: DenseMatrix,
}

impl DenseOracle {
    pub fn build(mesh: &Mesh, phi: &DegeneracyField, edges: [f64; 3], cap: OracleCap) -> Result<Self> {
        let n = mesh.len();
        cap.check(n)?;
        let dims = mesh.dims();
        let b = DenseMatrix::from_diag(&phi.values().iter().map(|p| 1.0 / p).collect::<Vec<_>>());
        let mut m: [Option<DenseMatrix>; 3] = [None, None, None];
        let mut c = DenseMatrix::zeros(n);
        for axis in mesh.active_axes() {
            let s = axis.index();
            let t = second_difference(mesh.axis(axis).expect("active axis"));
            // Unknowns are ordered x fastest: full = T3 (x) T2 (x) T1 with identities off-axis.
            let factors: Vec<DenseMatrix> =
                (0..3).rev().map(|d| if d == s { t.clone() } else { DenseMatrix::identity(dims[d]) }).collect();
            let k = factors[0].kron(&factors[1]).kron(&factors[2]);
            let ms = b.matmul(&k).scale(1.0 / (edges[s] * edges[s]));
            c = c.add(&ms);
            m[s] = Some(ms);
        }
        Ok(Self { dims, m, c })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn m(&self, axis: Axis) -> Option<&DenseMatrix> {
        self.m[axis.index()].as_ref()
    }

    pub fn active_axes(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|a| self.m[a.index()].is_some())
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    fn require(&self, axis: Axis) -> Result<&DenseMatrix> {
        self.m(axis).ok_or_else(|| Error::InvalidInput(format!("direction {axis} is inactive")))
    }

    /// `I + tau/2 M_s`.
    pub fn forward_factor(&self, axis: Axis, tau: f64) -> Result<DenseMatrix> {
        Ok(self.require(axis)?.shifted_identity(0.5 * tau))
    }

    /// `I - tau/2 M_s`.
    pub fn backward_factor(&self, axis: Axis, tau: f64) -> Result<DenseMatrix> {
        Ok(self.require(axis)?.shifted_identity(-0.5 * tau))
    }

    /// `(I - tau/2 M_s)^{-1} (I + tau/2 M_s)`.
    pub fn pade_factor(&self, axis: Axis, tau: f64) -> Result<DenseMatrix> {
        Ok(self.backward_factor(axis, tau)?.inverse()?.matmul(&self.forward_factor(axis, tau)?))
    }

    /// Product of the directional factors, `order[0]` acting first.
    pub fn lod_propagator(&self, tau: f64, order: &[Axis]) -> Result<DenseMatrix> {
        let mut p = DenseMatrix::identity(self.dim());
        for axis in order.iter().filter(|a| self.m(**a).is_some()) {
            p = self.pade_factor(*axis, tau)?.matmul(&p);
        }
        Ok(p)
    }

    /// Unsplit `(I - tau/2 C)^{-1} (I + tau/2 C)`.
    pub fn cn_propagator(&self, tau: f64) -> Result<DenseMatrix> {
        let back = self.c.shifted_identity(-0.5 * tau).inverse()?;
        Ok(back.matmul(&self.c.shifted_identity(0.5 * tau)))
    }

    /// One step of the split scheme assembled densely.
    pub fn lod_step(
        &self,
        state: &StateVector,
        tau: f64,
        spec: &ProblemSpec,
        phi: &DegeneracyField,
        cfg: &StepConfig,
    ) -> Result<Vec<f64>> {
        let p = self.lod_propagator(tau, &cfg.sweep_order)?;
        self.scheme_step(&p, state, tau, spec, phi, cfg)
    }

    /// One unsplit Crank–Nicolson step with the same source treatment.
    pub fn cn_step(
        &self,
        state: &StateVector,
        tau: f64,
        spec: &ProblemSpec,
        phi: &DegeneracyField,
        cfg: &StepConfig,
    ) -> Result<Vec<f64>> {
        let p = self.cn_propagator(tau)?;
        self.scheme_step(&p, state, tau, spec, phi, cfg)
    }

    fn scheme_step(
        &self,
        propagator: &DenseMatrix,
        state: &StateVector,
        tau: f64,
        spec: &ProblemSpec,
        phi: &DegeneracyField,
        cfg: &StepConfig,
    ) -> Result<Vec<f64>> {
        let v = &state.values;
        let half = 0.5 * tau;
        let g_now = match &cfg.source_mode {
            SourceMode::Frozen(g) => g.clone(),
            _ => eval_source(spec, phi, v)?,
        };
        let shifted: Vec<f64> = v.iter().zip(&g_now).map(|(x, g)| x + half * g).collect();
        let y = propagator.matvec(&shifted);
        let add_half = |g: &[f64]| -> Vec<f64> { y.iter().zip(g).map(|(a, b)| a + half * b).collect() };

        let predict = || -> Vec<f64> {
            let cv = self.c.matvec(v);
            let mut w: Vec<f64> = v.iter().zip(&cv).zip(&g_now).map(|((x, c), g)| x + tau * (c + g)).collect();
            if cfg.clamp_predictor {
                clamp_predictor(&mut w, clamp_ceiling(spec));
            }
            w
        };
        match &cfg.source_mode {
            SourceMode::Frozen(g) => Ok(add_half(g)),
            SourceMode::Predictor => Ok(add_half(&eval_source(spec, phi, &predict())?)),
            SourceMode::FixedPoint { max_iters, tol } => {
                let mut current = predict();
                let mut residual = f64::INFINITY;
                for _ in 0..*max_iters {
                    let next = add_half(&eval_source(spec, phi, &current)?);
                    residual = next.iter().zip(&current).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    current = next;
                    if residual < *tol {
                        return Ok(current);
                    }
                }
                Err(Error::IterationFailure { iterations: *max_iters, residual })
            }
        }
    }
}

/// Structured objects that can be read off as dense matrices.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Operator(&'a DirectionalOperator),
    Sum(&'a OperatorSet),
    /// `I + tau/2 M_s`.
    Forward(&'a DirectionalOperator, f64),
    /// `I - tau/2 M_s`.
    Backward(&'a DirectionalOperator, f64),
    /// `(I - tau/2 M_s)^{-1}` through the line solver.
    BackwardInverse(&'a DirectionalOperator, f64),
    /// Full split propagator in the given order.
    Product(&'a OperatorSet, f64, [Axis; 3]),
}

/// Dense matrix whose columns are the target applied to unit vectors.
pub fn materialize(target: Target<'_>, cap: OracleCap) -> Result<DenseMatrix> {
    let n = match target {
        Target::Operator(op) | Target::Forward(op, _) | Target::Backward(op, _) | Target::BackwardInverse(op, _) => {
            op.len()
        }
        Target::Sum(ops) | Target::Product(ops, _, _) => ops.len(),
    };
    cap.check(n)?;
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = match target {
            Target::Operator(op) => op.apply(&e),
            Target::Sum(ops) => ops.apply_sum(&e),
            Target::Forward(op, tau) => op.apply_forward(tau, &e),
            Target::Backward(op, tau) => op.apply_backward_matrix(tau, &e),
            Target::BackwardInverse(op, tau) => op.solve_backward(tau, &e)?,
            Target::Product(ops, tau, order) => {
                ops.apply_product(tau, &order, &mut e)?;
                e
            }
        };
        cols.push(col);
    }
    Ok(DenseMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{eval_degeneracy, Degeneracy};

    fn setup(q: f64) -> (Mesh, DegeneracyField, OperatorSet, DenseOracle) {
        let mesh = Mesh::new(
            Some(AxisGrid::graded(3, 1.4).unwrap()),
            Some(AxisGrid::from_interior(&[0.2, 0.3, 0.7]).unwrap()),
            Some(AxisGrid::uniform(2).unwrap()),
        )
        .unwrap();
        let edges = [1.5, 0.8, 2.0];
        let phi = eval_degeneracy(&mesh, edges, &Degeneracy::PowerLaw { q }).unwrap();
        let ops = OperatorSet::build(&mesh, &phi, edges).unwrap();
        let oracle = DenseOracle::build(&mesh, &phi, edges, OracleCap::default()).unwrap();
        (mesh, phi, ops, oracle)
    }

    #[test]
    fn line_oracle_is_scaled_second_difference() {
        let grid = AxisGrid::from_interior(&[0.2, 0.5]).unwrap();
        let mesh = Mesh::line(grid.clone());
        let phi = DegeneracyField::constant(&mesh, 1.0).unwrap();
        let oracle = DenseOracle::build(&mesh, &phi, [2.0, 1.0, 1.0], OracleCap::default()).unwrap();
        let t = second_difference(&grid);
        assert!(oracle.m(Axis::X).unwrap().max_abs_diff(&t.scale(0.25)) < 1e-14);
        assert!(oracle.m(Axis::Y).is_none());
    }

    #[test]
    fn kronecker_route_matches_materialized_operators() {
        for q in [0.0, 1.0, 2.0] {
            let (_, _, ops, oracle) = setup(q);
            for op in ops.iter() {
                let dense = materialize(Target::Operator(op), OracleCap::default()).unwrap();
                let reference = oracle.m(op.axis()).unwrap();
                assert!(dense.max_abs_diff(reference) <= 1e-14 * reference.max_abs().max(1.0));
            }
            let sum = materialize(Target::Sum(&ops), OracleCap::default()).unwrap();
            assert!(sum.max_abs_diff(oracle.c()) <= 1e-14 * oracle.c().max_abs());
        }
    }

    #[test]
    fn structured_inverse_matches_dense_inverse() {
        let (_, _, ops, oracle) = setup(1.0);
        for op in ops.iter() {
            let inv = materialize(Target::BackwardInverse(op, 0.01), OracleCap::default()).unwrap();
            let dense = oracle.backward_factor(op.axis(), 0.01).unwrap();
            assert!(dense.matmul(&inv).max_abs_diff(&DenseMatrix::identity(dense.dim())) < 1e-10);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let (_, _, ops, _) = setup(0.0);
        assert!(matches!(
            materialize(Target::Sum(&ops), OracleCap::new(10)),
            Err(Error::GridTooLarge { unknowns: 18, cap: 10 })
        ));
    }
}
