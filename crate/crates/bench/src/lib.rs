//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use kawarada_core::mesh::eval_degeneracy;
use kawarada_core::{
    AxisGrid, Degeneracy, DegeneracyField, InitialField, Mesh, OperatorSet, PowerSource, ProblemSpec, StateVector,
};

/// A q = 1 cube with `n` interior nodes per axis, graded along x.
pub struct Cube {
    pub mesh: Mesh,
    pub spec: ProblemSpec,
    pub phi: DegeneracyField,
    pub ops: OperatorSet,
    pub state: StateVector,
}

impl Cube {
    pub fn new(n: usize) -> Self {
        let mesh = Mesh::new(
            Some(AxisGrid::graded(n, 1.05).unwrap()),
            Some(AxisGrid::uniform(n).unwrap()),
            Some(AxisGrid::uniform(n).unwrap()),
        )
        .unwrap();
        let spec = ProblemSpec::new([5.0; 3], Degeneracy::PowerLaw { q: 1.0 }, Arc::new(PowerSource::reciprocal()))
            .with_initial(InitialField::Sine { amplitude: 0.5 });
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).unwrap();
        let ops = OperatorSet::build(&mesh, &phi, spec.edges).unwrap();
        let state = StateVector::new(spec.initial_values(&mesh).unwrap(), 0.0);
        Self { mesh, spec, phi, ops, state }
    }
}
