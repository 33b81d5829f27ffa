//! Discrete domains and the fields that live on them.
//!
//! Every grid is row-major with axis 0 slowest. Physical coordinates are
//! `origin + index * spacing`; all flow math runs in physical units.

mod field;
pub mod io;
mod interp;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use field::{gradient_central, warp_image, DeformationMap, Direction, LandmarkSet, ScalarImage, VectorField};
pub use interp::{sample_linear, Stencil};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Fixed-capacity point; only the first `ndim` entries are meaningful.
pub type Point = [f64; MAX_DIM];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridGeometry {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    #[serde(default)]
    origin: Option<Vec<f64>>,
}

impl TryFrom<GridRepr> for GridGeometry {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        let origin = r.origin.unwrap_or_else(|| vec![0.0; r.dims.len()]);
        GridGeometry::new(r.dims, r.spacing, origin)
    }
}

impl From<GridGeometry> for GridRepr {
    fn from(g: GridGeometry) -> Self {
        GridRepr {
            dims: g.dims,
            spacing: g.spacing,
            origin: Some(g.origin),
        }
    }
}

impl GridGeometry {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let d = dims.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidInput(format!("grid dimension must be 2 or 3, got {d}")));
        }
        if spacing.len() != d || origin.len() != d {
            return Err(Error::InvalidInput(format!(
                "dims/spacing/origin lengths differ: {}/{}/{}",
                d,
                spacing.len(),
                origin.len()
            )));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput(format!("every axis needs at least 2 nodes: {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("spacing must be positive: {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput(format!("origin must be finite: {origin:?}")));
        }
        let mut strides = vec![1; d];
        for a in (0..d - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(GridGeometry {
            dims,
            spacing,
            origin,
            strides,
        })
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), vec![1.0; dims.len()], vec![0.0; dims.len()])
    }

    pub fn with_spacing(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        Self::new(dims.to_vec(), spacing.to_vec(), vec![0.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &GridGeometry) -> bool {
        self.dims == other.dims
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for a in 0..self.ndim() {
            out[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
        out
    }

    pub fn node_position(&self, flat: usize) -> Point {
        let idx = self.multi_index(flat);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.ndim() {
            p[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        p
    }

    pub fn index_to_physical(&self, q: &[f64]) -> Point {
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.ndim() {
            p[a] = self.origin[a] + q[a] * self.spacing[a];
        }
        p
    }

    pub fn physical_to_index(&self, p: &[f64]) -> Point {
        let mut q = [0.0; MAX_DIM];
        for a in 0..self.ndim() {
            q[a] = (p[a] - self.origin[a]) / self.spacing[a];
        }
        q
    }

    /// Index of the node nearest to `p`, clipped to the grid.
    pub fn nearest_node(&self, p: &[f64]) -> [usize; MAX_DIM] {
        let q = self.physical_to_index(p);
        let mut out = [0; MAX_DIM];
        for a in 0..self.ndim() {
            out[a] = q[a].round().clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        out
    }

    /// True when `p` lies in the closed bounding box of the nodes.
    pub fn contains(&self, p: &[f64]) -> bool {
        (0..self.ndim()).all(|a| {
            let lo = self.origin[a];
            let hi = lo + (self.dims[a] - 1) as f64 * self.spacing[a];
            p[a] >= lo - 1e-9 * self.spacing[a] && p[a] <= hi + 1e-9 * self.spacing[a]
        })
    }

    /// Geometry of a 2x box-downsampled grid covering the same physical box.
    pub fn downsampled(&self) -> Result<GridGeometry> {
        let dims: Vec<usize> = self.dims.iter().map(|&n| n.div_ceil(2).max(2)).collect();
        let spacing = self.spacing.iter().map(|s| s * 2.0).collect();
        GridGeometry::new(dims, spacing, self.origin.clone())
    }
}
