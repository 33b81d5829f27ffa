//! Switching boundaries, crossing detection, saltation matrices and
//! fundamental solution matrices of piecewise-affine velocity fields.
//!
//! This is an analysis toolkit: the registration pipeline does not route
//! its gradients through it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{DeformationMap, Direction, Stencil, VectorField, MAX_DIM};
use crate::mat::Mat;
use crate::{Error, Result};

/// Threshold on `|H|` for crossing localisation and degeneracy.
pub const CROSSING_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchingBoundary {
    /// `H(t, x) = n.x - (offset + rate t)`.
    MovingHyperplane {
        normal: Vec<f64>,
        offset: f64,
        #[serde(default)]
        rate: f64,
    },
    /// `H(t, x) = |x - center| - radius`.
    StaticCircle { center: Vec<f64>, radius: f64 },
}

impl SwitchingBoundary {
    pub fn hyperplane(normal: Vec<f64>, offset: f64, rate: f64) -> Result<Self> {
        let b = SwitchingBoundary::MovingHyperplane { normal, offset, rate };
        b.validate()?;
        Ok(b)
    }

    pub fn circle(center: Vec<f64>, radius: f64) -> Result<Self> {
        let b = SwitchingBoundary::StaticCircle { center, radius };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SwitchingBoundary::MovingHyperplane { normal, offset, rate } => {
                let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                if normal.is_empty() || normal.len() > MAX_DIM || (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!("hyperplane normal {normal:?} is not a unit vector")));
                }
                if !offset.is_finite() || !rate.is_finite() {
                    return Err(Error::InvalidInput("non-finite hyperplane offset".into()));
                }
            }
            SwitchingBoundary::StaticCircle { center, radius } => {
                if center.is_empty() || center.len() > MAX_DIM || center.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("bad circle center {center:?}")));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidInput(format!("circle radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SwitchingBoundary::MovingHyperplane { normal, .. } => normal.len(),
            SwitchingBoundary::StaticCircle { center, .. } => center.len(),
        }
    }

    pub fn h(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            SwitchingBoundary::MovingHyperplane { normal, offset, rate } => {
                dot(normal, x) - (offset + rate * t)
            }
            SwitchingBoundary::StaticCircle { center, radius } => dist(x, center) - radius,
        }
    }

    /// Unit normal `grad_x H` at `x`.
    pub fn normal(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SwitchingBoundary::MovingHyperplane { normal, .. } => normal.clone(),
            SwitchingBoundary::StaticCircle { center, .. } => {
                let r = dist(x, center);
                x.iter().zip(center).map(|(a, c)| (a - c) / r).collect()
            }
        }
    }

    /// Partial time derivative of `H`.
    pub fn dh_dt(&self) -> f64 {
        match self {
            SwitchingBoundary::MovingHyperplane { rate, .. } => -rate,
            SwitchingBoundary::StaticCircle { .. } => 0.0,
        }
    }

    fn side(&self, t: f64, x: &[f64]) -> i8 {
        if self.h(t, x) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn lerp(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
}

/// Bisection for the sign change of `H` along the straight segment; returns
/// the segment fraction.
fn bisect(b: &SwitchingBoundary, ta: f64, xa: &[f64], tb: f64, xb: &[f64]) -> f64 {
    let f = |s: f64| b.h(ta + s * (tb - ta), &lerp(xa, xb, s));
    let sa = f(0.0) >= 0.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() < CROSSING_TOL || hi - lo < 1e-16 {
            return mid;
        }
        if (v >= 0.0) == sa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Crossing of `b` along the straight segment from `(ta, xa)` to `(tb, xb)`.
pub fn detect_crossing(
    xa: &[f64],
    xb: &[f64],
    ta: f64,
    tb: f64,
    b: &SwitchingBoundary,
) -> Result<Option<(f64, Vec<f64>)>> {
    if tb <= ta {
        return Err(Error::InvalidInput(format!("segment times must increase, got {ta} -> {tb}")));
    }
    if xa.len() != b.dim() || xb.len() != b.dim() {
        return Err(Error::InvalidInput("segment and boundary dimensions differ".into()));
    }
    let (ha, hb) = (b.h(ta, xa), b.h(tb, xb));
    if ha.abs() < CROSSING_TOL && hb.abs() < CROSSING_TOL {
        return Err(Error::DegenerateCrossing { t: ta });
    }
    if (ha >= 0.0) == (hb >= 0.0) {
        return Ok(None);
    }
    let s = bisect(b, ta, xa, tb, xb);
    Ok(Some((ta + s * (tb - ta), lerp(xa, xb, s))))
}

pub fn saltation_transversal(v_minus: &[f64], v_plus: &[f64], n: &[f64], dh_dt: f64) -> Result<Mat> {
    let d = n.len();
    if d == 0 || d > MAX_DIM || v_minus.len() != d || v_plus.len() != d {
        return Err(Error::InvalidInput("saltation vectors must share a dimension of 1..=3".into()));
    }
    let denom = dot(n, v_minus) + dh_dt;
    if denom.abs() <= CROSSING_TOL {
        return Err(Error::TangentialCrossing { denominator: denom });
    }
    let jump: Vec<f64> = v_plus.iter().zip(v_minus).map(|(p, m)| p - m).collect();
    Ok(Mat::identity(d) + Mat::outer(&jump, n).scale(1.0 / denom))
}

pub fn saltation_sliding(n: &[f64]) -> Result<Mat> {
    let d = n.len();
    let norm = dot(n, n).sqrt();
    if d == 0 || d > MAX_DIM || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("sliding normal {n:?} is not a unit vector")));
    }
    Ok(Mat::identity(d) - Mat::outer(n, n))
}

/// One affine piece `v(x) = A x + b`, active where the boundary signs match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldPiece {
    /// Required side per boundary: +1, -1, or 0 for either. Missing trailing
    /// entries mean either.
    #[serde(default)]
    pub signs: Vec<i8>,
    #[serde(default)]
    pub matrix: Option<Mat>,
    pub offset: Vec<f64>,
    /// Trajectories entering this piece slide along the boundary just crossed.
    #[serde(default)]
    pub sliding: bool,
}

impl FieldPiece {
    pub fn constant(signs: Vec<i8>, offset: Vec<f64>) -> Self {
        FieldPiece {
            signs,
            matrix: None,
            offset,
            sliding: false,
        }
    }

    pub fn linear(signs: Vec<i8>, matrix: Mat) -> Self {
        let d = matrix.size();
        FieldPiece {
            signs,
            matrix: Some(matrix),
            offset: vec![0.0; d],
            sliding: false,
        }
    }

    fn jacobian(&self) -> Mat {
        self.matrix.unwrap_or_else(|| Mat::zeros(self.offset.len()))
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.offset.clone();
        if let Some(a) = &self.matrix {
            let ax = a.mul_vec(x);
            for (vi, axi) in v.iter_mut().zip(ax) {
                *vi += axi;
            }
        }
        v
    }

    fn matches(&self, sides: &[i8]) -> bool {
        self.signs.iter().zip(sides).all(|(&want, &s)| want == 0 || want == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseField {
    pub pieces: Vec<FieldPiece>,
}

impl PiecewiseField {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::InvalidInput("field has no pieces".into()));
        }
        for (i, p) in self.pieces.iter().enumerate() {
            let bad_matrix = p.matrix.is_some_and(|m| m.size() != dim || !m.is_finite());
            if p.offset.len() != dim || bad_matrix || p.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("field piece {i} does not match dimension {dim}")));
            }
            if p.signs.iter().any(|s| !matches!(s, -1..=1)) {
                return Err(Error::InvalidInput(format!("field piece {i} has signs outside -1, 0, 1")));
            }
        }
        Ok(())
    }

    fn piece(&self, sides: &[i8]) -> Result<&FieldPiece> {
        self.pieces
            .iter()
            .find(|p| p.matches(sides))
            .ok_or_else(|| Error::Domain(format!("no field piece for boundary sides {sides:?}")))
    }

    /// Adds `eps * h` to every piece.
    pub fn perturbed(&self, h: &FieldPiece, eps: f64) -> PiecewiseField {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let d = p.offset.len();
                let matrix = match (p.matrix, h.matrix) {
                    (None, None) => None,
                    (a, b) => Some(a.unwrap_or(Mat::zeros(d)) + b.unwrap_or(Mat::zeros(d)).scale(eps)),
                };
                FieldPiece {
                    matrix,
                    offset: p.offset.iter().zip(&h.offset).map(|(a, b)| a + eps * b).collect(),
                    ..p.clone()
                }
            })
            .collect();
        PiecewiseField { pieces }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub x: Vec<f64>,
    pub boundary: usize,
    pub saltation: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundamentalMatrix {
    pub value: Mat,
    pub crossings: Vec<Crossing>,
    /// Trajectory endpoint at the final time.
    pub endpoint: Vec<f64>,
}

/// Integration settings for [`fundamental_matrix`].
#[derive(Clone, Copy, Debug)]
pub struct Integration {
    pub t0: f64,
    pub dt: f64,
}

impl Default for Integration {
    fn default() -> Self {
        Integration { t0: 0.0, dt: 1e-4 }
    }
}

struct Tracker<'a> {
    field: &'a PiecewiseField,
    boundaries: &'a [SwitchingBoundary],
    sides: Vec<i8>,
    sliding_on: Option<usize>,
    t: f64,
    x: Vec<f64>,
    f: Mat,
    /// Velocity sensitivity and its source, when requested.
    sens: Option<(Vec<f64>, &'a FieldPiece)>,
    crossings: Vec<Crossing>,
}

impl Tracker<'_> {
    fn velocity(&self, piece: &FieldPiece, x: &[f64]) -> Vec<f64> {
        let mut v = piece.eval(x);
        if let Some(i) = self.sliding_on {
            let b = &self.boundaries[i];
            let n = b.normal(x);
            let c = dot(&n, &v) + b.dh_dt();
            for (vi, ni) in v.iter_mut().zip(&n) {
                *vi -= c * ni;
            }
        }
        v
    }

    fn dv(&self, piece: &FieldPiece) -> Mat {
        let a = piece.jacobian();
        match self.sliding_on {
            Some(i) => saltation_sliding(&self.boundaries[i].normal(&self.x)).map_or(a, |p| p * a),
            None => a,
        }
    }

    /// Advances the state by `h` inside one piece.
    fn advance(&mut self, piece: &FieldPiece, h: f64) {
        let v = self.velocity(piece, &self.x);
        let a = self.dv(piece);
        self.f = self.f + (a * self.f).scale(h);
        if let Some((s, src)) = &mut self.sens {
            let as_ = a.mul_vec(s);
            let hv = src.eval(&self.x);
            for i in 0..s.len() {
                s[i] += h * (as_[i] + hv[i]);
            }
        }
        for (xi, vi) in self.x.iter_mut().zip(&v) {
            *xi += h * vi;
        }
        self.t += h;
    }

    fn step(&mut self, mut h: f64) -> Result<()> {
        while h > 0.0 {
            let piece = self.field.piece(&self.sides)?;
            let v = self.velocity(piece, &self.x);
            let xe: Vec<f64> = self.x.iter().zip(&v).map(|(x, v)| x + h * v).collect();
            let te = self.t + h;
            // Earliest boundary whose side changes over the step.
            let mut first: Option<(f64, usize)> = None;
            for (i, b) in self.boundaries.iter().enumerate() {
                if Some(i) == self.sliding_on || b.side(te, &xe) == self.sides[i] {
                    continue;
                }
                let (ha, hb) = (b.h(self.t, &self.x), b.h(te, &xe));
                if ha.abs() < CROSSING_TOL && hb.abs() < CROSSING_TOL {
                    return Err(Error::DegenerateCrossing { t: self.t });
                }
                let s = bisect(b, self.t, &self.x, te, &xe);
                if first.is_none_or(|(best, _)| s < best) {
                    first = Some((s, i));
                }
            }
            let Some((s, i)) = first else {
                self.advance(piece, h);
                return Ok(());
            };
            self.advance(piece, s * h);
            h -= s * h;
            let b = &self.boundaries[i];
            let v_minus = self.velocity(piece, &self.x);
            let mut sides = self.sides.clone();
            sides[i] = -sides[i];
            let next = self.field.piece(&sides)?;
            let n = b.normal(&self.x);
            let salt = if next.sliding {
                saltation_sliding(&n)?
            } else {
                let saved = self.sliding_on.take();
                let v_plus = self.velocity(next, &self.x);
                self.sliding_on = saved;
                saltation_transversal(&v_minus, &v_plus, &n, b.dh_dt())?
            };
            self.f = salt * self.f;
            if let Some((sv, _)) = &mut self.sens {
                let n = sv.len();
                let m = salt.mul_vec(sv);
                sv.copy_from_slice(&m[..n]);
            }
            self.sides = sides;
            self.sliding_on = next.sliding.then_some(i);
            self.crossings.push(Crossing {
                t: self.t,
                x: self.x.clone(),
                boundary: i,
                saltation: salt,
            });
            if !self.f.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: self.crossings.len() });
            }
        }
        Ok(())
    }
}

fn run_tracker<'a>(
    field: &'a PiecewiseField,
    boundaries: &'a [SwitchingBoundary],
    x0: &[f64],
    t: f64,
    cfg: Integration,
    sens: Option<&'a FieldPiece>,
) -> Result<Tracker<'a>> {
    let d = x0.len();
    if d == 0 || d > MAX_DIM || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("bad start point {x0:?}")));
    }
    field.validate(d)?;
    for b in boundaries {
        b.validate()?;
        if b.dim() != d {
            return Err(Error::InvalidInput("boundary dimension differs from the start point".into()));
        }
    }
    if let Some(h) = sens {
        PiecewiseField { pieces: vec![h.clone()] }.validate(d)?;
    }
    if !(cfg.dt > 0.0) || t < cfg.t0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need dt > 0 and t >= t0, got dt {} on [{}, {t}]",
            cfg.dt, cfg.t0
        )));
    }
    let mut tr = Tracker {
        field,
        boundaries,
        sides: boundaries.iter().map(|b| b.side(cfg.t0, x0)).collect(),
        sliding_on: None,
        t: cfg.t0,
        x: x0.to_vec(),
        f: Mat::identity(d),
        sens: sens.map(|h| (vec![0.0; d], h)),
        crossings: Vec::new(),
    };
    let n = ((t - cfg.t0) / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    for k in 0..n {
        let target = (cfg.t0 + (k + 1) as f64 * cfg.dt).min(t);
        let h = target - tr.t;
        tr.step(h)?;
        tr.t = target;
        if !tr.f.is_finite() || tr.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
    }
    Ok(tr)
}

/// Joint Euler integration of the trajectory from `x0` at `cfg.t0` and its
/// variational equation up to time `t`, with saltation at each crossing.
pub fn fundamental_matrix(
    field: &PiecewiseField,
    x0: &[f64],
    t: f64,
    boundaries: &[SwitchingBoundary],
    cfg: Integration,
) -> Result<FundamentalMatrix> {
    let tr = run_tracker(field, boundaries, x0, t, cfg, None)?;
    Ok(FundamentalMatrix {
        value: tr.f,
        crossings: tr.crossings,
        endpoint: tr.x,
    })
}

/// Trajectory endpoint only.
pub fn flow_endpoint(
    field: &PiecewiseField,
    x0: &[f64],
    t: f64,
    boundaries: &[SwitchingBoundary],
    cfg: Integration,
) -> Result<Vec<f64>> {
    Ok(fundamental_matrix(field, x0, t, boundaries, cfg)?.endpoint)
}

/// Directional derivative of the endpoint with respect to adding `h` to
/// every piece, propagated through the saltation jumps.
pub fn velocity_sensitivity(
    field: &PiecewiseField,
    x0: &[f64],
    t: f64,
    boundaries: &[SwitchingBoundary],
    h: &FieldPiece,
    cfg: Integration,
) -> Result<Vec<f64>> {
    let tr = run_tracker(field, boundaries, x0, t, cfg, Some(h))?;
    Ok(tr.sens.map(|(s, _)| s).unwrap_or_default())
}

/// Central-difference Jacobian of the integrated flow map at `x0`.
pub fn flow_jacobian_fd(
    field: &PiecewiseField,
    x0: &[f64],
    t: f64,
    boundaries: &[SwitchingBoundary],
    cfg: Integration,
    eps: f64,
) -> Result<Mat> {
    let d = x0.len();
    let mut jac = Mat::zeros(d);
    for b in 0..d {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[b] += eps;
        xm[b] -= eps;
        let fp = flow_endpoint(field, &xp, t, boundaries, cfg)?;
        let fm = flow_endpoint(field, &xm, t, boundaries, cfg)?;
        for a in 0..d {
            jac.set(a, b, (fp[a] - fm[a]) / (2.0 * eps));
        }
    }
    Ok(jac)
}

/// Relative Frobenius error `|a - b| / |b|`.
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    (*a - *b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Jacobian of a map: one matrix everywhere, or one per node.
#[derive(Clone, Debug)]
pub enum JacobianField {
    Uniform(Mat),
    PerNode(Vec<Mat>),
}

fn invert_at(map: &DeformationMap, x: &[f64]) -> Vec<f64> {
    // Fixed point of y = x - u(y); converges when the displacement is a contraction.
    let d = x.len();
    let mut y = x.to_vec();
    for _ in 0..200 {
        let fy = map.apply(&y);
        let mut delta = 0.0;
        for a in 0..d {
            let next = y[a] - (fy[a] - x[a]);
            delta += (next - y[a]).abs();
            y[a] = next;
        }
        if delta < 1e-12 {
            break;
        }
    }
    y
}

/// `(D phi v) o phi^{-1}` at every node, with linear interpolation.
///
/// An inverse-direction map is used as `phi^{-1}` directly; a forward map is
/// inverted pointwise by fixed-point iteration.
pub fn adjoint_transport(dphi: &JacobianField, phi: &DeformationMap, v: &VectorField) -> Result<VectorField> {
    let g = v.geometry();
    if !g.same_shape(phi.geometry()) {
        return Err(Error::GeometryMismatch("map and field grids differ".into()));
    }
    let d = g.ndim();
    if let JacobianField::PerNode(ms) = dphi {
        if ms.len() != g.len() || ms.iter().any(|m| m.size() != d) {
            return Err(Error::GeometryMismatch("one d x d Jacobian per node required".into()));
        }
    }
    if let JacobianField::Uniform(m) = dphi {
        if m.size() != d {
            return Err(Error::GeometryMismatch("Jacobian size differs from the grid dimension".into()));
        }
    }
    let mut out = vec![0.0; g.len() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(n, o)| {
        let x = g.node_position(n);
        let y = match phi.direction() {
            Direction::Inverse => phi.target(n).to_vec(),
            Direction::Forward => invert_at(phi, &x[..d]),
        };
        let st = Stencil::new(g, &y);
        let vy = st.vector(v.data(), d);
        let jac = match dphi {
            JacobianField::Uniform(m) => *m,
            JacobianField::PerNode(ms) => {
                let mut m = Mat::zeros(d);
                for c in 0..st.corners {
                    m = m + ms[st.nodes[c]].scale(st.weights[c]);
                }
                m
            }
        };
        o.copy_from_slice(&jac.mul_vec(&vy[..d])[..d]);
    });
    VectorField::new(g.clone(), out)
}

/// A `nonsmooth-check` scenario document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub boundaries: Vec<SwitchingBoundary>,
    pub field: PiecewiseField,
    pub x0: Vec<f64>,
    pub t: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_fd_eps")]
    pub fd_eps: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Expected fundamental matrix, for regression.
    #[serde(default)]
    pub expected: Option<Mat>,
}

fn default_dt() -> f64 {
    1e-4
}

fn default_fd_eps() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub matrix: Mat,
    pub endpoint: Vec<f64>,
    pub crossings: Vec<Crossing>,
    pub fd_matrix: Mat,
    pub fd_relative_error: f64,
    pub expected_relative_error: Option<f64>,
    pub pass: bool,
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport> {
    let cfg = Integration { t0: sc.t0, dt: sc.dt };
    let fm = fundamental_matrix(&sc.field, &sc.x0, sc.t, &sc.boundaries, cfg)?;
    let fd = flow_jacobian_fd(&sc.field, &sc.x0, sc.t, &sc.boundaries, cfg, sc.fd_eps)?;
    let fd_err = relative_error(&fm.value, &fd);
    let exp_err = match &sc.expected {
        Some(e) if e.size() != fm.value.size() => {
            return Err(Error::InvalidInput("expected matrix has the wrong size".into()))
        }
        Some(e) => Some(relative_error(&fm.value, e)),
        None => None,
    };
    let pass = fd_err <= sc.tolerance && exp_err.is_none_or(|e| e <= sc.tolerance);
    Ok(ScenarioReport {
        matrix: fm.value,
        endpoint: fm.endpoint,
        crossings: fm.crossings,
        fd_matrix: fd,
        fd_relative_error: fd_err,
        expected_relative_error: exp_err,
        pass,
    })
}
