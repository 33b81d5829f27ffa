//! Forward and inverse maps from piecewise-constant-in-time velocities,
//! finite-difference Jacobians and zeroth-order particle shooting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{DeformationMap, Direction, GridGeometry, Stencil, MAX_DIM};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::mat::Mat;
use crate::momenta::{SynthesisOperator, TimeMomenta};
use crate::{Error, Result};

/// Maps at times `k/T`, `k = 0..=T`.
#[derive(Clone, Debug)]
pub struct FlowPath {
    pub maps: Vec<DeformationMap>,
    pub inv_maps: Vec<DeformationMap>,
}

impl FlowPath {
    pub fn num_steps(&self) -> usize {
        self.maps.len() - 1
    }

    pub fn forward(&self) -> &DeformationMap {
        self.maps.last().expect("flow path has at least one map")
    }

    pub fn inverse(&self) -> &DeformationMap {
        self.inv_maps.last().expect("flow path has at least one map")
    }
}

/// One explicit Euler step of forward targets: `phi + dt * v(phi)`.
pub(crate) fn euler_step(grid: &GridGeometry, targets: &[f64], vel: &[f64], dt: f64) -> Vec<f64> {
    let d = grid.ndim();
    let mut out = targets.to_vec();
    out.par_chunks_mut(d).for_each(|p| {
        let v = Stencil::new(grid, p).vector(vel, d);
        for a in 0..d {
            p[a] += dt * v[a];
        }
    });
    out
}

/// One semi-Lagrangian step on inverse displacements:
/// `u'(x) = -dt v(x) + u(x - dt v(x))`.
pub(crate) fn semi_lagrangian_step(grid: &GridGeometry, disp: &[f64], vel: &[f64], dt: f64) -> Vec<f64> {
    let d = grid.ndim();
    let mut out = vec![0.0; disp.len()];
    out.par_chunks_mut(d).enumerate().for_each(|(n, u)| {
        let x = grid.node_position(n);
        let v = &vel[n * d..(n + 1) * d];
        let mut y = [0.0; MAX_DIM];
        for a in 0..d {
            y[a] = x[a] - dt * v[a];
        }
        let s = Stencil::new(grid, &y[..d]).vector(disp, d);
        for a in 0..d {
            u[a] = s[a] - dt * v[a];
        }
    });
    out
}

fn first_non_finite(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

pub fn integrate(tm: &TimeMomenta, spec: &KernelSpec, grid: &GridGeometry) -> Result<FlowPath> {
    if tm.dim() != grid.ndim() {
        return Err(Error::GeometryMismatch(format!(
            "momenta are {}-D but the grid is {}-D",
            tm.dim(),
            grid.ndim()
        )));
    }
    let op = SynthesisOperator::new(tm.points(), spec, grid)?;
    integrate_with(tm, &op)
}

pub(crate) fn integrate_with(tm: &TimeMomenta, op: &SynthesisOperator) -> Result<FlowPath> {
    let grid = op.grid();
    let t = tm.num_steps();
    let dt = 1.0 / t as f64;
    let mut maps = vec![DeformationMap::identity(grid.clone(), Direction::Forward)];
    let mut inv_maps = vec![DeformationMap::identity(grid.clone(), Direction::Inverse)];
    let mut disp = vec![0.0; grid.len() * grid.ndim()];
    for (k, ms) in tm.steps().iter().enumerate() {
        let vel = op.apply_raw(ms);
        if first_non_finite(&vel) {
            return Err(Error::Divergence { step: k });
        }
        let fwd = euler_step(grid, maps[k].targets(), &vel, dt);
        disp = semi_lagrangian_step(grid, &disp, &vel, dt);
        if first_non_finite(&fwd) || first_non_finite(&disp) {
            return Err(Error::Divergence { step: k });
        }
        maps.push(DeformationMap::new(grid.clone(), fwd, Direction::Forward)?);
        inv_maps.push(DeformationMap::from_displacements(grid.clone(), &disp, Direction::Inverse));
    }
    Ok(FlowPath { maps, inv_maps })
}

/// Central-difference Jacobian `J[a][b] = d map_a / d x_b`.
pub fn jacobian_fd(map: &DeformationMap, x: &[f64], h: f64) -> Result<Mat> {
    let g = map.geometry();
    let d = g.ndim();
    if x.len() != d {
        return Err(Error::InvalidInput(format!("point has {} coordinates, grid is {d}-D", x.len())));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    for a in 0..d {
        let lo = g.origin()[a];
        let hi = lo + (g.dims()[a] - 1) as f64 * g.spacing()[a];
        if x[a] - h < lo - 1e-9 || x[a] + h > hi + 1e-9 {
            return Err(Error::Domain(format!("point {x:?} is within {h} of the boundary on axis {a}")));
        }
    }
    let mut jac = Mat::zeros(d);
    let mut p = [0.0; MAX_DIM];
    p[..d].copy_from_slice(x);
    for b in 0..d {
        p[b] = x[b] + h;
        let fp = map.apply(&p[..d]);
        p[b] = x[b] - h;
        let fm = map.apply(&p[..d]);
        p[b] = x[b];
        for a in 0..d {
            jac.set(a, b, (fp[a] - fm[a]) / (2.0 * h));
        }
    }
    Ok(jac)
}

/// Smallest central-difference Jacobian determinant over interior nodes.
pub fn min_jacobian_det(map: &DeformationMap) -> f64 {
    let g = map.geometry();
    let d = g.ndim();
    (0..g.len())
        .into_par_iter()
        .filter(|&n| {
            let idx = g.multi_index(n);
            (0..d).all(|a| idx[a] > 0 && idx[a] + 1 < g.dims()[a])
        })
        .map(|n| {
            let mut jac = Mat::zeros(d);
            for b in 0..d {
                let s = g.strides()[b];
                let h = g.spacing()[b];
                let fp = map.target(n + s);
                let fm = map.target(n - s);
                for a in 0..d {
                    jac.set(a, b, (fp[a] - fm[a]) / (2.0 * h));
                }
            }
            jac.det()
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub positions: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
    pub time: f64,
}

impl ParticleState {
    pub fn new(positions: Vec<Vec<f64>>, momenta: Vec<Vec<f64>>) -> Result<Self> {
        let s = ParticleState {
            positions,
            momenta,
            time: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.momenta.len() {
            return Err(Error::InvalidInput(format!(
                "{} positions but {} momenta",
                self.positions.len(),
                self.momenta.len()
            )));
        }
        let d = self.positions.first().map_or(0, Vec::len);
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidInput("particles need 1..=3 coordinates".into()));
        }
        for (p, m) in self.positions.iter().zip(&self.momenta) {
            if p.len() != d || m.len() != d {
                return Err(Error::InvalidInput("particle dimensions differ".into()));
            }
            if p.iter().chain(m).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite particle state".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    /// Velocity of the kernel-smoothed momenta at `x`.
    pub fn velocity(&self, spec: &KernelSpec, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; x.len()];
        for (p, m) in self.positions.iter().zip(&self.momenta) {
            let k = spec.value(x, p);
            for a in 0..v.len() {
                v[a] += k * m[a];
            }
        }
        v
    }

    /// `||v||_V^2 = sum_jk K(x_j, x_k) m_j . m_k`.
    pub fn energy(&self, spec: &KernelSpec) -> f64 {
        let mut e = 0.0;
        for (pj, mj) in self.positions.iter().zip(&self.momenta) {
            for (pk, mk) in self.positions.iter().zip(&self.momenta) {
                e += spec.value(pj, pk) * dot(mj, mk);
            }
        }
        e
    }

    pub fn total_momentum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        for m in &self.momenta {
            for a in 0..s.len() {
                s[a] += m[a];
            }
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Explicit Euler trajectory of point-supported zeroth-order EPDiff over
/// `[0, 1]`, returning `steps + 1` states.
pub fn shoot_particles(init: &ParticleState, spec: &KernelSpec, steps: usize) -> Result<Vec<ParticleState>> {
    spec.validate()?;
    if spec.family != KernelFamily::Gaussian {
        return Err(Error::UnsupportedKernel(
            "particle shooting needs a smooth kernel; use gaussian".into(),
        ));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one time step".into()));
    }
    init.validate()?;
    let dt = 1.0 / steps as f64;
    let d = init.dim();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(init.clone());
    for k in 0..steps {
        let cur = &out[k];
        let n = cur.positions.len();
        let mut next = cur.clone();
        for j in 0..n {
            let xj = &cur.positions[j];
            let mj = &cur.momenta[j];
            let v = cur.velocity(spec, xj);
            // grad_x K(x_j, x_k) is minus the partial in the second argument.
            let mut mdot = vec![0.0; d];
            for l in 0..n {
                let w = dot(&cur.momenta[l], mj);
                for a in 0..d {
                    mdot[a] += spec.partial(a, xj, &cur.positions[l]) * w;
                }
            }
            for a in 0..d {
                next.positions[j][a] += dt * v[a];
                next.momenta[j][a] += dt * mdot[a];
            }
        }
        next.time = (k + 1) as f64 * dt;
        if next.positions.iter().chain(&next.momenta).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        out.push(next);
    }
    Ok(out)
}

/// Max over `region` nodes of `|inv(fwd(x)) - x|` in voxel units.
pub fn inverse_consistency_error(fp: &FlowPath, region: impl Fn(usize) -> bool + Sync) -> f64 {
    let fwd = fp.forward();
    let inv = fp.inverse();
    let g = fwd.geometry();
    let d = g.ndim();
    (0..g.len())
        .into_par_iter()
        .filter(|&n| region(n))
        .map(|n| {
            let x = g.node_position(n);
            let back = inv.apply(fwd.target(n));
            (0..d)
                .map(|a| ((back[a] - x[a]) / g.spacing()[a]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .reduce(|| 0.0, f64::max)
}
