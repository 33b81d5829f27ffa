//! Control-point momenta and the velocity fields they generate.
//!
//! A velocity field is
//! `v(x) = sum_j K(x, x_j) m0_j + sum_j sum_i dK/dy^i(x, x_j) m_{i,j}`,
//! i.e. zeroth-order momenta translate the kernel and first-order momenta
//! attach to its partial derivatives.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{GridGeometry, VectorField, MAX_DIM};
use crate::kernels::{support_nodes, KernelSpec};
use crate::{Error, Result};

/// Momenta attached to a fixed list of control points.
///
/// Coefficients are stored flat: `d` zeroth-order components per point,
/// followed by `d * d` first-order components per point (slot-major, so
/// `m_{i,j}` is the d-vector at `first_offset + (j * d + i) * d`).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumSet {
    dim: usize,
    points: Arc<Vec<f64>>,
    coeffs: Vec<f64>,
}

impl MomentumSet {
    pub fn zeros(dim: usize, points: Arc<Vec<f64>>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "point buffer of length {} is not a list of {dim}-vectors",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite control point".into()));
        }
        let n = points.len() / dim;
        Ok(MomentumSet {
            dim,
            points,
            coeffs: vec![0.0; n * dim * (1 + dim)],
        })
    }

    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        Self::zeros(dim, Arc::new(points))
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                self.coeffs.len(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite momentum".into()));
        }
        Ok(MomentumSet {
            dim: self.dim,
            points: Arc::clone(&self.points),
            coeffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn points(&self) -> &Arc<Vec<f64>> {
        &self.points
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn first_offset(&self) -> usize {
        self.num_points() * self.dim
    }

    pub fn m0(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn m0_mut(&mut self, j: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.coeffs[j * d..(j + 1) * d]
    }

    /// First-order momentum of slot `i` (derivative axis) at point `j`.
    pub fn m1(&self, j: usize, i: usize) -> &[f64] {
        let start = self.first_offset() + (j * self.dim + i) * self.dim;
        &self.coeffs[start..start + self.dim]
    }

    pub fn m1_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let start = self.first_offset() + (j * self.dim + i) * self.dim;
        let d = self.dim;
        &mut self.coeffs[start..start + d]
    }

    pub fn zero_first_order(&mut self) {
        let off = self.first_offset();
        self.coeffs[off..].iter_mut().for_each(|c| *c = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> MomentumSet {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= factor);
        out
    }
}

/// Time-discretized momenta: one `MomentumSet` per Euler step.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMomenta {
    steps: Vec<MomentumSet>,
}

impl TimeMomenta {
    pub fn new(steps: Vec<MomentumSet>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidInput("time momenta need at least one step".into()))?;
        for s in &steps[1..] {
            if s.dim != first.dim || !Arc::ptr_eq(&s.points, &first.points) && s.points != first.points {
                return Err(Error::InvalidInput("time steps must share their control points".into()));
            }
        }
        Ok(TimeMomenta { steps })
    }

    pub fn zeros(dim: usize, points: Arc<Vec<f64>>, steps: usize) -> Result<Self> {
        let ms = MomentumSet::zeros(dim, points)?;
        Self::new(vec![ms; steps.max(1)])
    }

    /// The same momenta repeated over `steps` time steps.
    pub fn constant(ms: MomentumSet, steps: usize) -> Result<Self> {
        Self::new(vec![ms; steps.max(1)])
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[MomentumSet] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [MomentumSet] {
        &mut self.steps
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim
    }

    pub fn points(&self) -> &Arc<Vec<f64>> {
        &self.steps[0].points
    }

    /// All coefficients, step-major.
    pub fn flat(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.coeffs.iter().copied()).collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<TimeMomenta> {
        let per = self.steps[0].coeffs.len();
        if flat.len() != per * self.steps.len() {
            return Err(Error::InvalidInput(format!("expected {} coefficients", per * self.steps.len())));
        }
        let steps = self
            .steps
            .iter()
            .zip(flat.chunks(per))
            .map(|(s, c)| s.with_coeffs(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TimeMomenta { steps })
    }

    pub fn is_zero(&self) -> bool {
        self.steps.iter().all(MomentumSet::is_zero)
    }
}

/// Control points on the sublattice of nodes whose indices are multiples of `stride`.
pub fn control_lattice(grid: &GridGeometry, stride: usize) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(Error::InvalidInput("control stride must be positive".into()));
    }
    let d = grid.ndim();
    let mut out = Vec::new();
    for n in 0..grid.len() {
        let idx = grid.multi_index(n);
        if (0..d).all(|a| idx[a].is_multiple_of(stride)) {
            out.extend_from_slice(&grid.node_position(n)[..d]);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    index: usize,
    k: f64,
    dk: [f64; MAX_DIM],
}

/// The linear map momenta -> node velocities for fixed points, kernel and grid,
/// together with its transpose.
#[derive(Clone, Debug)]
pub struct SynthesisOperator {
    grid: GridGeometry,
    dim: usize,
    num_points: usize,
    by_node: Vec<Vec<Entry>>,
    by_point: Vec<Vec<Entry>>,
}

impl SynthesisOperator {
    pub fn new(points: &[f64], spec: &KernelSpec, grid: &GridGeometry) -> Result<Self> {
        spec.validate()?;
        let d = grid.ndim();
        if !points.len().is_multiple_of(d) {
            return Err(Error::InvalidInput("control points do not match grid dimension".into()));
        }
        let num_points = points.len() / d;
        for j in 0..num_points {
            let p = &points[j * d..(j + 1) * d];
            if !grid.contains(p) {
                return Err(Error::Domain(format!("control point {j} at {p:?} outside the grid")));
            }
        }
        let by_point: Vec<Vec<Entry>> = (0..num_points)
            .into_par_iter()
            .map(|j| {
                let y = &points[j * d..(j + 1) * d];
                support_nodes(spec, y, grid)
                    .into_iter()
                    .map(|n| {
                        let x = grid.node_position(n);
                        let (k, dk) = spec.value_and_partials(&x[..d], y);
                        Entry { index: n, k, dk }
                    })
                    .collect()
            })
            .collect();
        let mut by_node: Vec<Vec<Entry>> = vec![Vec::new(); grid.len()];
        for (j, entries) in by_point.iter().enumerate() {
            for e in entries {
                by_node[e.index].push(Entry { index: j, ..*e });
            }
        }
        Ok(SynthesisOperator {
            grid: grid.clone(),
            dim: d,
            num_points,
            by_node,
            by_point,
        })
    }

    pub fn grid(&self) -> &GridGeometry {
        &self.grid
    }

    /// Node velocities, node-major.
    pub fn apply_raw(&self, ms: &MomentumSet) -> Vec<f64> {
        debug_assert_eq!(ms.num_points(), self.num_points);
        let d = self.dim;
        let off = ms.first_offset();
        let c = ms.coeffs();
        let mut out = vec![0.0; self.grid.len() * d];
        out.par_chunks_mut(d).zip(self.by_node.par_iter()).for_each(|(v, entries)| {
            for e in entries {
                let j = e.index;
                for a in 0..d {
                    v[a] += e.k * c[j * d + a];
                }
                for i in 0..d {
                    let base = off + (j * d + i) * d;
                    for a in 0..d {
                        v[a] += e.dk[i] * c[base + a];
                    }
                }
            }
        });
        out
    }

    pub fn apply(&self, ms: &MomentumSet) -> VectorField {
        VectorField::from_raw(self.grid.clone(), self.apply_raw(ms))
    }

    /// Transpose: node covectors -> coefficient gradient (same layout as
    /// `MomentumSet::coeffs`).
    pub fn apply_adjoint(&self, field: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let np = self.num_points;
        let mut g0 = vec![0.0; np * d];
        let mut g1 = vec![0.0; np * d * d];
        g0.par_chunks_mut(d)
            .zip(g1.par_chunks_mut(d * d))
            .zip(self.by_point.par_iter())
            .for_each(|((z, f), entries)| {
                for e in entries {
                    let w = &field[e.index * d..(e.index + 1) * d];
                    for a in 0..d {
                        z[a] += e.k * w[a];
                    }
                    for i in 0..d {
                        for a in 0..d {
                            f[i * d + a] += e.dk[i] * w[a];
                        }
                    }
                }
            });
        g0.extend(g1);
        g0
    }
}

pub fn synth_velocity(ms: &MomentumSet, spec: &KernelSpec, grid: &GridGeometry) -> Result<VectorField> {
    if ms.dim() != grid.ndim() {
        return Err(Error::InvalidInput("momentum and grid dimensions differ".into()));
    }
    Ok(SynthesisOperator::new(ms.points(), spec, grid)?.apply(ms))
}

#[derive(Clone, Copy, Debug)]
struct GramEntry {
    other: usize,
    k: f64,
    mixed: [f64; MAX_DIM],
}

/// Sparse Gram blocks between control points: `K(x_j, x_k)` for the
/// zeroth-order block and `d^2K/dx^i dy^i` for each first-order slot.
#[derive(Clone, Debug)]
pub struct GramOperator {
    dim: usize,
    rows: Vec<Vec<GramEntry>>,
}

impl GramOperator {
    pub fn new(points: &[f64], dim: usize, spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let n = points.len() / dim;
        let cutoff = spec.gram_cutoff();
        // bucket points into cells of the cutoff size
        let mut lo = [f64::INFINITY; MAX_DIM];
        for j in 0..n {
            for a in 0..dim {
                lo[a] = lo[a].min(points[j * dim + a]);
            }
        }
        let cell_of = |p: &[f64]| -> [i64; MAX_DIM] {
            let mut c = [0i64; MAX_DIM];
            for a in 0..dim {
                c[a] = ((p[a] - lo[a]) / cutoff).floor() as i64;
            }
            c
        };
        let mut buckets: std::collections::HashMap<[i64; MAX_DIM], Vec<usize>> = Default::default();
        for j in 0..n {
            buckets.entry(cell_of(&points[j * dim..(j + 1) * dim])).or_default().push(j);
        }
        let rows = (0..n)
            .into_par_iter()
            .map(|j| {
                let x = &points[j * dim..(j + 1) * dim];
                let c = cell_of(x);
                let mut row = Vec::new();
                let reach = 3i64.pow(dim as u32);
                for code in 0..reach {
                    let mut nb = c;
                    let mut r = code;
                    for a in 0..dim {
                        nb[a] += r % 3 - 1;
                        r /= 3;
                    }
                    let Some(list) = buckets.get(&nb) else { continue };
                    for &k in list {
                        let y = &points[k * dim..(k + 1) * dim];
                        if (0..dim).any(|a| (x[a] - y[a]).abs() >= cutoff) {
                            continue;
                        }
                        let mut mixed = [0.0; MAX_DIM];
                        for (i, m) in mixed.iter_mut().enumerate().take(dim) {
                            *m = spec.mixed(i, x, y);
                        }
                        row.push(GramEntry {
                            other: k,
                            k: spec.value(x, y),
                            mixed,
                        });
                    }
                }
                row.sort_by_key(|e| e.other);
                row
            })
            .collect();
        Ok(GramOperator { dim, rows })
    }

    /// `2 * Gram * m` in coefficient layout.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let np = self.rows.len();
        let off = np * d;
        let mut g0 = vec![0.0; np * d];
        let mut g1 = vec![0.0; np * d * d];
        g0.par_chunks_mut(d)
            .zip(g1.par_chunks_mut(d * d))
            .zip(self.rows.par_iter())
            .for_each(|((z, f), row)| {
                for e in row {
                    let k = e.other;
                    for a in 0..d {
                        z[a] += 2.0 * e.k * coeffs[k * d + a];
                    }
                    for i in 0..d {
                        let base = off + (k * d + i) * d;
                        for a in 0..d {
                            f[i * d + a] += 2.0 * e.mixed[i] * coeffs[base + a];
                        }
                    }
                }
            });
        g0.extend(g1);
        g0
    }

    /// The quadratic form `m^T Gram m` summed over orders.
    pub fn energy(&self, coeffs: &[f64]) -> f64 {
        let g = self.apply(coeffs);
        0.5 * g.iter().zip(coeffs).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Sum of squared V-norms of the per-order velocity components.
pub fn v_energy(ms: &MomentumSet, spec: &KernelSpec) -> Result<f64> {
    Ok(GramOperator::new(ms.points(), ms.dim(), spec)?.energy(ms.coeffs()))
}

/// Per-order sparsity weights. Index 0 weights `m0`, index `i` weights
/// first-order slot `i`; missing trailing entries repeat the last one, so
/// `[l0, l1]` applies `l1` to every first-order slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparsityWeights(pub Vec<f64>);

impl SparsityWeights {
    pub fn weight(&self, order: usize) -> f64 {
        match self.0.get(order) {
            Some(&w) => w,
            None => self.0.last().copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("sparsity weights must be >= 0: {:?}", self.0)));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0.0)
    }
}

fn for_each_block(ms: &MomentumSet, mut f: impl FnMut(usize, std::ops::Range<usize>)) {
    let d = ms.dim();
    for j in 0..ms.num_points() {
        f(0, j * d..(j + 1) * d);
    }
    let off = ms.first_offset();
    for j in 0..ms.num_points() {
        for i in 0..d {
            let s = off + (j * d + i) * d;
            f(i + 1, s..s + d);
        }
    }
}

/// Smoothed L1 prior `sum_i l_i sum_j (sqrt(|m_ij|^2 + eps^2) - eps)`.
pub fn sparsity(ms: &MomentumSet, weights: &SparsityWeights, eps: f64) -> Result<f64> {
    weights.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("sparsity smoothing must be positive, got {eps}")));
    }
    let c = ms.coeffs();
    let mut total = 0.0;
    for_each_block(ms, |order, r| {
        let w = weights.weight(order);
        if w != 0.0 {
            let n2: f64 = c[r].iter().map(|v| v * v).sum();
            total += w * ((n2 + eps * eps).sqrt() - eps);
        }
    });
    Ok(total)
}

/// Gradient of [`sparsity`] in coefficient layout.
pub fn sparsity_grad(ms: &MomentumSet, weights: &SparsityWeights, eps: f64) -> Vec<f64> {
    let c = ms.coeffs();
    let mut g = vec![0.0; c.len()];
    for_each_block(ms, |order, r| {
        let w = weights.weight(order);
        if w != 0.0 {
            let n2: f64 = c[r.clone()].iter().map(|v| v * v).sum();
            let s = (n2 + eps * eps).sqrt();
            for t in r {
                g[t] = w * c[t] / s;
            }
        }
    });
    g
}

/// Velocity of the directional-derivative kernel `(sum_i w^i dK/dy^i(x, y)) a`.
pub fn directional_kernel_velocity(
    a: &[f64],
    w: &[f64],
    y: &[f64],
    spec: &KernelSpec,
    grid: &GridGeometry,
) -> Result<VectorField> {
    let d = grid.ndim();
    if a.len() != d || w.len() != d || y.len() != d {
        return Err(Error::InvalidInput("vector dimensions must match the grid".into()));
    }
    let wn: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (wn - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("direction must be a unit vector, |w| = {wn}")));
    }
    let mut data = vec![0.0; grid.len() * d];
    for n in support_nodes(spec, y, grid) {
        let x = grid.node_position(n);
        let (_, dk) = spec.value_and_partials(&x[..d], y);
        let s: f64 = (0..d).map(|i| w[i] * dk[i]).sum();
        for c in 0..d {
            data[n * d + c] = s * a[c];
        }
    }
    Ok(VectorField::from_raw(grid.clone(), data))
}
