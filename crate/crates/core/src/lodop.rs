//! Directional operators `M_s = (1/edge^2) B (I (x) ... T_s ... (x) I)` kept as
//! per-line tridiagonal stencils, with the forward factor `I + (tau/2) M_s`
//! and the line-by-line solve of `I - (tau/2) M_s`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Axis, AxisGrid, DegeneracyField, Mesh};

/// Below this many unknowns a sweep runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// Nonuniform three-point second-difference stencil of one axis.
///
/// Row `r` (zero-based, interior node `r + 1`) has `sub[r - 1]` in column
/// `r - 1`, `diag[r]` on the diagonal and `sup[r]` in column `r + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TridiagStencil {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl TridiagStencil {
    pub fn from_axis(axis: &AxisGrid) -> Self {
        let h = axis.spacings();
        let n = axis.interior_count();
        let diag = (0..n).map(|r| -2.0 / (h[r] * h[r + 1])).collect();
        let sub = (1..n).map(|r| 2.0 / (h[r] * (h[r] + h[r + 1]))).collect();
        let sup = (0..n - 1).map(|r| 2.0 / (h[r + 1] * (h[r] + h[r + 1]))).collect();
        Self { sub, diag, sup }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        let left = if r > 0 { self.sub[r - 1] } else { 0.0 };
        let right = if r + 1 < self.len() { self.sup[r] } else { 0.0 };
        left + self.diag[r] + right
    }

    #[inline]
    fn coeffs(&self, r: usize) -> (f64, f64, f64) {
        let n = self.len();
        let a = if r > 0 { self.sub[r - 1] } else { 0.0 };
        let c = if r + 1 < n { self.sup[r] } else { 0.0 };
        (a, self.diag[r], c)
    }
}

/// One directional operator: the axis stencil plus the per-node row scale
/// `1 / (edge^2 phi)`.
#[derive(Debug, Clone)]
pub struct DirectionalOperator {
    axis: Axis,
    stencil: TridiagStencil,
    line_scale: Vec<f64>,
    edge: f64,
    dims: [usize; 3],
}

impl DirectionalOperator {
    /// Builds `M_axis`. Fails for inactive axes.
    pub fn build(axis: Axis, mesh: &Mesh, phi: &DegeneracyField, edge: f64) -> Result<Self> {
        let grid = mesh.axis(axis).ok_or_else(|| Error::InvalidInput(format!("axis {axis} is inactive")))?;
        if phi.values().len() != mesh.len() {
            return Err(Error::InvalidInput("degeneracy field does not match mesh".into()));
        }
        let e2 = edge * edge;
        Ok(Self {
            axis,
            stencil: TridiagStencil::from_axis(grid),
            line_scale: phi.values().iter().map(|p| 1.0 / (e2 * p)).collect(),
            edge,
            dims: mesh.dims(),
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn stencil(&self) -> &TridiagStencil {
        &self.stencil
    }

    pub fn line_scale(&self) -> &[f64] {
        &self.line_scale
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn len(&self) -> usize {
        self.line_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line_scale.is_empty()
    }

    /// `(outer, n, inner)`: the field is `outer` contiguous blocks, each
    /// holding `inner` interleaved lines of length `n`.
    fn layout(&self) -> (usize, usize, usize) {
        let [n1, n2, n3] = self.dims;
        match self.axis {
            Axis::X => (n2 * n3, n1, 1),
            Axis::Y => (n3, n2, n1),
            Axis::Z => (1, n3, n1 * n2),
        }
    }

    /// `out = v + theta * M v`. `theta = 0` with `identity = false` gives `M v`.
    fn apply_affine(&self, theta: f64, identity: bool, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.len());
        assert_eq!(out.len(), self.len());
        let (_, n, inner) = self.layout();
        let block = n * inner;
        let work = |(b, (out_blk, v_blk)): (usize, (&mut [f64], &[f64]))| {
            let scale = &self.line_scale[b * block..(b + 1) * block];
            for r in 0..n {
                let (a, d, c) = self.stencil.coeffs(r);
                for p in 0..inner {
                    let idx = r * inner + p;
                    let mut mv = d * v_blk[idx];
                    if r > 0 {
                        mv += a * v_blk[idx - inner];
                    }
                    if r + 1 < n {
                        mv += c * v_blk[idx + inner];
                    }
                    mv *= scale[idx];
                    out_blk[idx] = if identity { v_blk[idx] + theta * mv } else { mv };
                }
            }
        };
        if self.len() >= PARALLEL_THRESHOLD {
            out.par_chunks_mut(block).zip(v.par_chunks(block)).enumerate().for_each(work);
        } else {
            out.chunks_mut(block).zip(v.chunks(block)).enumerate().for_each(work);
        }
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_affine(0.0, false, v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_affine(0.0, false, v, out);
    }

    /// `(I + (tau/2) M) v`.
    pub fn apply_forward(&self, tau: f64, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_affine(0.5 * tau, true, v, &mut out);
        out
    }

    pub fn apply_forward_into(&self, tau: f64, v: &[f64], out: &mut [f64]) {
        self.apply_affine(0.5 * tau, true, v, out);
    }

    /// `(I - (tau/2) M) v`.
    pub fn apply_backward_matrix(&self, tau: f64, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_affine(-0.5 * tau, true, v, &mut out);
        out
    }

    /// Solves `(I - (tau/2) M) w = rhs`.
    pub fn solve_backward(&self, tau: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut w = rhs.to_vec();
        self.solve_backward_in_place(tau, &mut w)?;
        Ok(w)
    }

    /// Solves `(I - (tau/2) M) w = rhs` in place, one tridiagonal elimination
    /// per grid line, without pivoting.
    pub fn solve_backward_in_place(&self, tau: f64, rhs: &mut [f64]) -> Result<()> {
        assert_eq!(rhs.len(), self.len());
        let theta = 0.5 * tau;
        let (_, n, inner) = self.layout();
        let block = n * inner;
        let direction = self.axis.number();
        let work = |(b, blk): (usize, &mut [f64])| -> Result<()> {
            let scale = &self.line_scale[b * block..(b + 1) * block];
            let mut cp = vec![0.0; block];
            solve_block(&self.stencil, theta, scale, inner, blk, &mut cp)
                .map_err(|(p, row, pivot)| Error::SingularFactor { direction, line: b * inner + p, row, pivot })
        };
        if self.len() >= PARALLEL_THRESHOLD {
            rhs.par_chunks_mut(block).enumerate().try_for_each(work)
        } else {
            rhs.chunks_mut(block).enumerate().try_for_each(work)
        }
    }
}

/// Thomas elimination over `inner` interleaved lines of one block.
/// On breakdown returns `(line offset, row, pivot)`.
fn solve_block(
    stencil: &TridiagStencil,
    theta: f64,
    scale: &[f64],
    inner: usize,
    d: &mut [f64],
    cp: &mut [f64],
) -> std::result::Result<(), (usize, usize, f64)> {
    let n = stencil.len();
    let tiny = |m: f64, a: f64, b: f64, c: f64| !(m.abs() > 64.0 * f64::EPSILON * (a.abs() + b.abs() + c.abs()));

    for r in 0..n {
        let (sa, sd, sc) = stencil.coeffs(r);
        for p in 0..inner {
            let idx = r * inner + p;
            let s = theta * scale[idx];
            let a = -s * sa;
            let b = 1.0 - s * sd;
            let c = -s * sc;
            let (m, rhs) = if r == 0 {
                (b, d[idx])
            } else {
                let prev = idx - inner;
                (b - a * cp[prev], d[idx] - a * d[prev])
            };
            if tiny(m, a, b, c) {
                return Err((p, r, m));
            }
            cp[idx] = c / m;
            d[idx] = rhs / m;
        }
    }
    for r in (0..n.saturating_sub(1)).rev() {
        for p in 0..inner {
            let idx = r * inner + p;
            d[idx] -= cp[idx] * d[idx + inner];
        }
    }
    Ok(())
}

/// The directional operators of every active axis.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    ops: Vec<DirectionalOperator>,
    len: usize,
}

impl OperatorSet {
    pub fn build(mesh: &Mesh, phi: &DegeneracyField, edges: [f64; 3]) -> Result<Self> {
        let ops = mesh
            .active_axes()
            .map(|a| DirectionalOperator::build(a, mesh, phi, edges[a.index()]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, len: mesh.len() })
    }

    pub fn get(&self, axis: Axis) -> Option<&DirectionalOperator> {
        self.ops.iter().find(|o| o.axis == axis)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DirectionalOperator> {
        self.ops.iter()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `C v = sum_s M_s v`.
    pub fn apply_sum(&self, v: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; v.len()];
        let mut tmp = vec![0.0; v.len()];
        for op in &self.ops {
            op.apply_into(v, &mut tmp);
            total.iter_mut().zip(&tmp).for_each(|(t, x)| *t += x);
        }
        total
    }

    /// `C v + g(v)` for a precomputed source vector.
    pub fn apply_full_operator(&self, v: &[f64], g_of_v: &[f64]) -> Vec<f64> {
        let mut out = self.apply_sum(v);
        out.iter_mut().zip(g_of_v).for_each(|(o, g)| *o += g);
        out
    }

    /// Applies `prod_s (I - tau/2 M_s)^{-1} (I + tau/2 M_s)` to `v`, sweeping
    /// the directions in `order` (first entry acts first). Inactive axes in
    /// `order` are skipped.
    pub fn apply_product(&self, tau: f64, order: &[Axis], v: &mut Vec<f64>) -> Result<()> {
        let mut tmp = vec![0.0; v.len()];
        for axis in order {
            if let Some(op) = self.get(*axis) {
                op.apply_forward_into(tau, v, &mut tmp);
                op.solve_backward_in_place(tau, &mut tmp)?;
                std::mem::swap(v, &mut tmp);
            }
        }
        Ok(())
    }
}
