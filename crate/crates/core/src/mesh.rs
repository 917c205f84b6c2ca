//! Nonuniform tensor-product grids on the unit cube and the degeneracy
//! weight evaluated at their interior nodes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Spatial direction. `X` is the fastest-varying index of the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// Zero-based position (0, 1, 2).
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// One-based direction number, as used in sweep orders (1, 2, 3).
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(n: usize) -> Option<Axis> {
        match n {
            1 => Some(Axis::X),
            2 => Some(Axis::Y),
            3 => Some(Axis::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// How the interior nodes of one axis are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridKind {
    Uniform,
    /// `x_i = (i / (N + 1))^gamma`
    Graded {
        gamma: f64,
    },
    /// Interior node list, strictly increasing in (0, 1).
    Explicit(Vec<f64>),
}

/// One spatial axis: boundary-inclusive nodes `0 = x_0 < ... < x_{N+1} = 1`
/// and spacings `h_j = x_{j+1} - x_j`, `j = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisGrid {
    nodes: Vec<f64>,
    spacings: Vec<f64>,
}

impl AxisGrid {
    /// Builds an axis with `n` interior nodes. For explicit node lists `n`
    /// must match the list length.
    pub fn new(kind: &GridKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let denom = (n + 1) as f64;
        let interior: Vec<f64> = match kind {
            GridKind::Uniform => (1..=n).map(|i| i as f64 / denom).collect(),
            GridKind::Graded { gamma } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(Error::InvalidGrid(format!("grading exponent must be positive, got {gamma}")));
                }
                (1..=n).map(|i| (i as f64 / denom).powf(*gamma)).collect()
            }
            GridKind::Explicit(list) => {
                if list.len() != n {
                    return Err(Error::InvalidGrid(format!(
                        "explicit node list has {} entries, expected {n}",
                        list.len()
                    )));
                }
                list.clone()
            }
        };
        Self::from_interior(&interior)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(&GridKind::Uniform, n)
    }

    pub fn graded(n: usize, gamma: f64) -> Result<Self> {
        Self::new(&GridKind::Graded { gamma }, n)
    }

    /// Builds an axis from interior node coordinates.
    pub fn from_interior(interior: &[f64]) -> Result<Self> {
        if interior.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut nodes = Vec::with_capacity(interior.len() + 2);
        nodes.push(0.0);
        nodes.extend_from_slice(interior);
        nodes.push(1.0);
        Self::from_nodes(nodes)
    }

    /// Builds an axis from positive spacing weights, rescaled to sum to one.
    pub fn from_spacing_weights(weights: &[f64]) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::EmptyGrid);
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGrid("spacing weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let mut nodes = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        nodes.push(0.0);
        for w in &weights[..weights.len() - 1] {
            acc += w;
            nodes.push(acc / total);
        }
        nodes.push(1.0);
        Self::from_nodes(nodes)
    }

    fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::EmptyGrid);
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node coordinate".into()));
        }
        let spacings: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(j) = spacings.iter().position(|h| !(*h > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "nodes must be strictly increasing in (0, 1); violated between x_{j} = {} and x_{} = {}",
                nodes[j],
                j + 1,
                nodes[j + 1]
            )));
        }
        let total: f64 = spacings.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidGrid(format!("spacings sum to {total}, expected 1")));
        }
        Ok(Self { nodes, spacings })
    }

    /// Number of interior nodes `N`.
    pub fn interior_count(&self) -> usize {
        self.nodes.len() - 2
    }

    /// All `N + 2` nodes including both boundaries.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    /// The `N + 1` spacings `h_0..=h_N`.
    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacings.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacings.iter().copied().fold(0.0, f64::max)
    }
}

/// Tensor-product grid. Inactive axes carry a single degenerate node at
/// coordinate zero and are never swept; this is how 1D and 2D problems are
/// represented.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    axes: [Option<AxisGrid>; 3],
    dims: [usize; 3],
}

impl Mesh {
    pub fn new(x: Option<AxisGrid>, y: Option<AxisGrid>, z: Option<AxisGrid>) -> Result<Self> {
        let axes = [x, y, z];
        if axes.iter().all(Option::is_none) {
            return Err(Error::InvalidGrid("at least one axis must be active".into()));
        }
        let dims = [0, 1, 2].map(|s| axes[s].as_ref().map_or(1, AxisGrid::interior_count));
        Ok(Self { axes, dims })
    }

    /// Same axis grid in all three directions.
    pub fn cube(axis: AxisGrid) -> Self {
        Self::new(Some(axis.clone()), Some(axis.clone()), Some(axis)).expect("active axes")
    }

    /// One-dimensional problem along x.
    pub fn line(axis: AxisGrid) -> Self {
        Self::new(Some(axis), None, None).expect("active axis")
    }

    pub fn axis(&self, axis: Axis) -> Option<&AxisGrid> {
        self.axes[axis.index()].as_ref()
    }

    pub fn is_active(&self, axis: Axis) -> bool {
        self.axes[axis.index()].is_some()
    }

    pub fn active_axes(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|a| self.is_active(*a))
    }

    /// Interior node counts `(N1, N2, N3)`; inactive axes count as one.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Total number of unknowns `N1 * N2 * N3`.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lexicographic index of zero-based interior indices.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`Mesh::index`].
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Coordinate of the `i`-th interior node (zero-based) along `axis`
    /// on the unit interval; zero for inactive axes.
    pub fn coord(&self, axis: Axis, i: usize) -> f64 {
        self.axis(axis).map_or(0.0, |g| g.interior_nodes()[i])
    }

    /// Unit-cube coordinates of an interior node.
    pub fn node_coords(&self, idx: usize) -> [f64; 3] {
        let ijk = self.ijk(idx);
        [0, 1, 2].map(|s| self.coord(Axis::ALL[s], ijk[s]))
    }
}

/// Smallest and largest spacing over all active axes.
pub fn mesh_extrema(mesh: &Mesh) -> (f64, f64) {
    mesh.active_axes()
        .filter_map(|a| mesh.axis(a))
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), g| (lo.min(g.min_spacing()), hi.max(g.max_spacing())))
}

/// User-supplied weight evaluated at physical coordinates `(x, y, z)`.
pub type WeightFn = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;

/// The coefficient `s` multiplying `u_t`, which after the unit-cube transform
/// becomes the nodal weight `phi`.
#[derive(Clone)]
pub enum Degeneracy {
    /// `phi = (a^2 x^2 + b^2 y^2 + c^2 z^2)^(q/2)`, `q` in `[0, 2]`.
    PowerLaw { q: f64 },
    /// `phi = prod over active axes of X^p (L - X)^(1 - p)` with physical
    /// coordinate `X = L x` on an edge of length `L`.
    Beta { p: f64 },
    /// Arbitrary positive weight of the physical coordinates.
    Custom(WeightFn),
}

impl fmt::Debug for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degeneracy::PowerLaw { q } => f.debug_struct("PowerLaw").field("q", q).finish(),
            Degeneracy::Beta { p } => f.debug_struct("Beta").field("p", p).finish(),
            Degeneracy::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Degeneracy {
    /// Weight at unit-cube coordinates `x` for a domain with edges `edges`.
    /// `active` marks which coordinates belong to swept axes.
    pub fn weight(&self, x: [f64; 3], edges: [f64; 3], active: [bool; 3]) -> f64 {
        match self {
            Degeneracy::PowerLaw { q } => {
                if *q == 0.0 {
                    return 1.0;
                }
                let r2: f64 = (0..3).map(|s| (edges[s] * x[s]).powi(2)).sum();
                r2.powf(q / 2.0)
            }
            Degeneracy::Beta { p } => (0..3)
                .filter(|s| active[*s])
                .map(|s| {
                    let big_x = edges[s] * x[s];
                    big_x.powf(*p) * (edges[s] - big_x).powf(1.0 - p)
                })
                .product(),
            Degeneracy::Custom(w) => w([0, 1, 2].map(|s| edges[s] * x[s])),
        }
    }

    /// True when the weight is known to be nondecreasing along every axis
    /// index (the power-law family).
    pub fn axis_monotone(&self) -> bool {
        matches!(self, Degeneracy::PowerLaw { .. })
    }

    pub fn exponent(&self) -> Option<f64> {
        match self {
            Degeneracy::PowerLaw { q } => Some(*q),
            _ => None,
        }
    }
}

/// `phi` at each interior node, plus the values on the three lower
/// boundary faces needed by the grid-regularity scan.
#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyField {
    values: Vec<f64>,
    /// `lower_face[s][idx]`: weight at the node whose `s`-coordinate is the
    /// boundary node 0 and whose other indices match interior node `idx`.
    lower_face: [Vec<f64>; 3],
    q: Option<f64>,
    inv_norm: f64,
    axis_monotone: bool,
}

impl DegeneracyField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Weight at the boundary neighbour (index 0 along `axis`) of a node
    /// whose `axis` index is 0.
    pub fn lower_face(&self, axis: Axis, idx: usize) -> f64 {
        self.lower_face[axis.index()][idx]
    }

    pub fn q(&self) -> Option<f64> {
        self.q
    }

    /// `1 / ||B||_2 = min phi`.
    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }

    pub fn min(&self) -> f64 {
        self.inv_norm
    }

    pub fn axis_monotone(&self) -> bool {
        self.axis_monotone
    }

    /// Uniform weight, handy for tests and frozen-operator studies.
    pub fn constant(mesh: &Mesh, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidInput(format!("degeneracy weight must be positive, got {value}")));
        }
        let n = mesh.len();
        Ok(Self {
            values: vec![value; n],
            lower_face: [vec![value; n], vec![value; n], vec![value; n]],
            q: None,
            inv_norm: value,
            axis_monotone: true,
        })
    }
}

/// Evaluates the degeneracy weight at every interior node.
pub fn eval_degeneracy(mesh: &Mesh, edges: [f64; 3], degeneracy: &Degeneracy) -> Result<DegeneracyField> {
    if edges.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidInput(format!("domain edges must be positive, got {edges:?}")));
    }
    if let Degeneracy::PowerLaw { q } = degeneracy {
        if !(0.0..=2.0).contains(q) {
            return Err(Error::InvalidInput(format!("degeneracy exponent must lie in [0, 2], got {q}")));
        }
    }
    let active = [0, 1, 2].map(|s| mesh.is_active(Axis::ALL[s]));
    let n = mesh.len();
    let mut values = Vec::with_capacity(n);
    for idx in 0..n {
        let w = degeneracy.weight(mesh.node_coords(idx), edges, active);
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidInput(format!(
                "degeneracy weight must be positive at interior nodes; node {idx} has {w}"
            )));
        }
        values.push(w);
    }
    let lower_face = [0, 1, 2].map(|s| {
        (0..n)
            .map(|idx| {
                let mut x = mesh.node_coords(idx);
                x[s] = 0.0;
                degeneracy.weight(x, edges, active)
            })
            .collect::<Vec<_>>()
    });
    let inv_norm = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DegeneracyField {
        values,
        lower_face,
        q: degeneracy.exponent(),
        inv_norm,
        axis_monotone: degeneracy.axis_monotone(),
    })
}
