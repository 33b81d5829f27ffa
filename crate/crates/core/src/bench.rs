//! Synthetic generators, landmark and sharpness metrics, momentum demos,
//! experiment orchestration and DIR-Lab ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::flow::{integrate, inverse_consistency_error, min_jacobian_det, FlowPath};
use crate::geometry::io::{read_landmarks, read_pgm, read_raw16, write_map_json, write_pgm};
use crate::geometry::{
    warp_image, DeformationMap, Direction, GridGeometry, LandmarkSet, ScalarImage, MAX_DIM,
};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::mat::Mat;
use crate::momenta::{MomentumSet, SparsityWeights, TimeMomenta};
use crate::registration::{optimize, ssd, EnergyTerms, Orders, RegistrationConfig, RegistrationResult};
use crate::{Error, Result};

/// Bright and dark intensities of the synthetic images.
pub const FOREGROUND: f64 = 255.0;

/// Separable Gaussian blur with renormalised weights at the border.
pub fn gaussian_blur(img: &ScalarImage, sigma: f64) -> Result<ScalarImage> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let g = img.geometry().clone();
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut vals = img.values().to_vec();
    for a in 0..g.ndim() {
        let s = g.strides()[a];
        let n = g.dims()[a] as isize;
        let src = vals.clone();
        for (node, out) in vals.iter_mut().enumerate() {
            let i = g.multi_index(node)[a] as isize;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, w) in (-radius..=radius).zip(&weights) {
                let j = i + k;
                if (0..n).contains(&j) {
                    let other = (node as isize + k * s as isize) as usize;
                    acc += w * src[other];
                    wsum += w;
                }
            }
            *out = acc / wsum;
        }
    }
    ScalarImage::new(g, vals)
}

/// A generated template/reference pair with its analytic maps.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub template: ScalarImage,
    pub reference: ScalarImage,
    pub forward: DeformationMap,
    /// Reference space to template space; `reference ~ warp(template, inverse)`.
    pub inverse: DeformationMap,
    pub template_landmarks: Option<LandmarkSet>,
    pub reference_landmarks: Option<LandmarkSet>,
}

/// Rows `< size/2` belong to the upper region.
pub fn rectangle_interface(size: usize) -> f64 {
    size as f64 / 2.0 - 0.5
}

/// Centred rectangle whose upper half slides `+shift` columns and lower half
/// `-shift` columns. Axis 0 is rows, axis 1 columns.
pub fn gen_rectangle(size: usize, shift: f64, blur: bool) -> Result<SyntheticPair> {
    if size < 8 {
        return Err(Error::InvalidInput(format!("rectangle size must be >= 8, got {size}")));
    }
    if !(shift.abs() < size as f64 / 4.0) {
        return Err(Error::InvalidInput(format!("shift {shift} must be below size/4")));
    }
    let g = GridGeometry::unit(&[size, size])?;
    let q = size as f64 / 4.0;
    let inside = |r: f64, c: f64| r >= q && r < 3.0 * q && c >= q && c < 3.0 * q;
    let iface = rectangle_interface(size);
    let side = move |r: f64| if r < iface { 1.0 } else { -1.0 };
    let level = |b: bool| if b { FOREGROUND } else { 0.0 };
    let mut template = ScalarImage::from_fn(g.clone(), |p| level(inside(p[0], p[1])))?;
    let mut reference = ScalarImage::from_fn(g.clone(), |p| level(inside(p[0], p[1] - side(p[0]) * shift)))?;
    if blur {
        template = gaussian_blur(&template, 1.0)?;
        reference = gaussian_blur(&reference, 1.0)?;
    }
    let forward = DeformationMap::from_fn(g.clone(), Direction::Forward, |p| [p[0], p[1] + side(p[0]) * shift, 0.0])?;
    let inverse = DeformationMap::from_fn(g, Direction::Inverse, |p| [p[0], p[1] - side(p[0]) * shift, 0.0])?;
    let half = (size / 2) as f64;
    let mut tpl = Vec::new();
    let mut refl = Vec::new();
    for row in [half - 5.0, half + 5.0] {
        for k in 0..10 {
            let col = (q + 2.0 + k as f64 * (2.0 * q - 4.0) / 9.0).round();
            tpl.push(vec![row, col]);
            refl.push(vec![row, col + side(row) * shift]);
        }
    }
    Ok(SyntheticPair {
        template,
        reference,
        forward,
        inverse,
        template_landmarks: Some(LandmarkSet::new(tpl, 0)?),
        reference_landmarks: Some(LandmarkSet::new(refl, 0)?),
    })
}

/// Centre, inner (interface) radius and outer radius of the wheel.
pub fn wheel_geometry(size: usize) -> ([f64; 2], f64, f64) {
    let c = (size as f64 - 1.0) / 2.0;
    let s = size as f64 / 64.0;
    ([c, c], 14.0 * s, 28.0 * s)
}

fn rotate(p: &[f64], c: [f64; 2], deg: f64) -> [f64; 3] {
    let (s, co) = deg.to_radians().sin_cos();
    let (y, x) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + co * y + s * x, c[1] - s * y + co * x, 0.0]
}

/// Spoked wheel; the inner disk rotates by `+angle`, the rest by `-angle`.
pub fn gen_wheel(size: usize, angle_deg: f64, blur: bool) -> Result<SyntheticPair> {
    if size < 16 {
        return Err(Error::InvalidInput(format!("wheel size must be >= 16, got {size}")));
    }
    if !(0.0..45.0).contains(&angle_deg) {
        return Err(Error::InvalidInput(format!("angle {angle_deg} must lie in [0, 45)")));
    }
    let g = GridGeometry::unit(&[size, size])?;
    let (c, r_in, r_out) = wheel_geometry(size);
    let pattern = move |p: &[f64]| {
        let (y, x) = (p[0] - c[0], p[1] - c[1]);
        let r = (x * x + y * y).sqrt();
        if r > r_out || r < 2.0 {
            return 0.0;
        }
        let theta = y.atan2(x).rem_euclid(std::f64::consts::TAU);
        if ((8.0 * theta / std::f64::consts::PI) as usize).is_multiple_of(2) {
            FOREGROUND
        } else {
            0.25 * FOREGROUND
        }
    };
    let radius = move |p: &[f64]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
    let inv = move |p: &[f64]| rotate(p, c, if radius(p) < r_in { -angle_deg } else { angle_deg });
    let fwd = move |p: &[f64]| rotate(p, c, if radius(p) < r_in { angle_deg } else { -angle_deg });
    let mut template = ScalarImage::from_fn(g.clone(), |p| pattern(p))?;
    let mut reference = ScalarImage::from_fn(g.clone(), |p| pattern(&inv(p)))?;
    if blur {
        template = gaussian_blur(&template, 1.0)?;
        reference = gaussian_blur(&reference, 1.0)?;
    }
    Ok(SyntheticPair {
        template,
        reference,
        forward: DeformationMap::from_fn(g.clone(), Direction::Forward, |p| fwd(p))?,
        inverse: DeformationMap::from_fn(g, Direction::Inverse, |p| inv(p))?,
        template_landmarks: None,
        reference_landmarks: None,
    })
}

/// Mean over landmark pairs of `|spacing * (map(p_ref) - p_tpl)|`, in mm.
///
/// Landmarks are voxel indices in grid-axis order; `map` must take reference
/// space to template space.
pub fn tre(
    ref_lms: &LandmarkSet,
    tpl_lms: &LandmarkSet,
    spacing: &[f64],
    map: Option<&DeformationMap>,
) -> Result<f64> {
    if ref_lms.len() != tpl_lms.len() {
        return Err(Error::CountMismatch(format!(
            "{} reference landmarks vs {} template landmarks",
            ref_lms.len(),
            tpl_lms.len()
        )));
    }
    if ref_lms.is_empty() {
        return Err(Error::CountMismatch("no landmarks".into()));
    }
    let rp = ref_lms.zero_based();
    let tp = tpl_lms.zero_based();
    let d = rp[0].len();
    if spacing.len() != d || tp[0].len() != d {
        return Err(Error::InvalidInput(format!("spacing has {} entries, landmarks are {d}-D", spacing.len())));
    }
    if let Some(m) = map {
        if m.direction() != Direction::Inverse {
            return Err(Error::ContractViolation("tre needs a reference-to-template (inverse) map".into()));
        }
        if m.geometry().ndim() != d {
            return Err(Error::GeometryMismatch("map and landmark dimensions differ".into()));
        }
    }
    let mut total = 0.0;
    for (r, t) in rp.iter().zip(&tp) {
        let mapped: Vec<f64> = match map {
            None => r.clone(),
            Some(m) => {
                let g = m.geometry();
                let phys = g.index_to_physical(r);
                let q = m.apply(&phys[..d]);
                g.physical_to_index(&q[..d])[..d].to_vec()
            }
        };
        let dist2: f64 = (0..d).map(|a| (spacing[a] * (mapped[a] - t[a])).powi(2)).sum();
        total += dist2.sqrt();
    }
    Ok(total / rp.len() as f64)
}

/// Mean tangential displacement per row in `[pos - 8, pos + 8]`, averaged
/// over the central half of the tangential axis.
pub fn tangential_profile(map: &DeformationMap, interface_axis: usize, interface_pos: f64) -> Result<Vec<(usize, f64)>> {
    let g = map.geometry();
    if g.ndim() != 2 || interface_axis > 1 {
        return Err(Error::InvalidInput("transition width needs a 2D map and axis 0 or 1".into()));
    }
    let tang = 1 - interface_axis;
    let n_rows = g.dims()[interface_axis];
    let n_cols = g.dims()[tang];
    let band = n_cols / 4..(3 * n_cols).div_ceil(4);
    let disp = map.displacements();
    let rows: Vec<usize> = (0..n_rows)
        .filter(|&r| (r as f64 - interface_pos).abs() <= TRANSITION_HALF_WINDOW)
        .collect();
    if rows.len() < 7 {
        return Err(Error::UndefinedMetric("interface window has fewer than 7 rows".into()));
    }
    Ok(rows
        .into_iter()
        .map(|r| {
            let mean = band
                .clone()
                .map(|c| {
                    let mut idx = [0usize; 2];
                    idx[interface_axis] = r;
                    idx[tang] = c;
                    disp[g.flat_index(&idx) * 2 + tang]
                })
                .sum::<f64>()
                / band.len() as f64;
            (r, mean)
        })
        .collect())
}

const TRANSITION_HALF_WINDOW: f64 = 8.0;

/// Rows over which the mean tangential displacement moves from 10% to 90% of
/// its plateau-to-plateau range across the interface.
pub fn transition_width(map: &DeformationMap, interface_axis: usize, interface_pos: f64) -> Result<f64> {
    let prof = tangential_profile(map, interface_axis, interface_pos)?;
    let k = prof.len();
    let lo = prof[..3].iter().map(|p| p.1).sum::<f64>() / 3.0;
    let hi = prof[k - 3..].iter().map(|p| p.1).sum::<f64>() / 3.0;
    let range = hi - lo;
    if range.abs() < 0.5 {
        return Err(Error::UndefinedMetric(format!(
            "plateau difference {range:.3} px is below 0.5 px"
        )));
    }
    let norm: Vec<f64> = prof.iter().map(|p| (p.1 - lo) / range).collect();
    let first_hi = norm
        .iter()
        .position(|&s| s >= 0.9)
        .ok_or_else(|| Error::UndefinedMetric("profile never reaches 90%".into()))?;
    let last_lo = norm[..first_hi]
        .iter()
        .rposition(|&s| s < 0.1)
        .ok_or_else(|| Error::UndefinedMetric("profile starts above 10%".into()))?;
    Ok((prof[first_hi].0 - prof[last_lo].0) as f64)
}

/// Sliding signature across the line `axis = pos` (node index units): the
/// tangential displacement has opposite signs one row either side and does
/// not shrink toward the line.
pub fn sign_flip_across_line(map: &DeformationMap, axis: usize, pos: usize) -> Result<bool> {
    let prof = tangential_profile(map, axis, pos as f64)?;
    let at = |r: isize| {
        prof.iter()
            .find(|p| p.0 as isize == pos as isize + r)
            .map(|p| p.1)
            .ok_or_else(|| Error::UndefinedMetric("line too close to the border".into()))
    };
    let (m1, p1, m2, p2) = (at(-1)?, at(1)?, at(-2)?, at(2)?);
    Ok(m1 * p1 < 0.0 && m1.abs() >= m2.abs() && p1.abs() >= p2.abs())
}

/// Mean tangential displacement (counter-clockwise positive in the
/// row/column plane) on the circle of radius `r`.
pub fn mean_tangential_on_circle(map: &DeformationMap, center: [f64; 2], r: f64) -> f64 {
    let n = 128;
    (0..n)
        .map(|k| {
            let th = k as f64 * std::f64::consts::TAU / n as f64;
            let p = [center[0] + r * th.sin(), center[1] + r * th.cos()];
            let q = map.apply(&p);
            let t = [th.cos(), -th.sin()];
            (q[0] - p[0]) * t[0] + (q[1] - p[1]) * t[1]
        })
        .sum::<f64>()
        / n as f64
}

/// Sign flip of the tangential displacement across a ring interface: the
/// means one unit inside and outside have opposite signs and each reaches
/// half of the expected rotation magnitude `r sin(angle)`.
pub fn ring_sign_flip(map: &DeformationMap, center: [f64; 2], radius: f64, angle_deg: f64) -> (bool, f64, f64) {
    let s = angle_deg.to_radians().sin();
    let t_in = mean_tangential_on_circle(map, center, radius - 1.0);
    let t_out = mean_tangential_on_circle(map, center, radius + 1.0);
    let ok = t_in * t_out < 0.0 && t_in.abs() >= 0.5 * (radius - 1.0) * s && t_out.abs() >= 0.5 * (radius + 1.0) * s;
    (ok, t_in, t_out)
}

/// Line pattern warped by an inverse map.
pub fn deformed_grid_image(inverse: &DeformationMap, every: usize) -> Result<ScalarImage> {
    let g = inverse.geometry().clone();
    let every = every.max(2);
    let pattern = ScalarImage::from_fn(g.clone(), |p| {
        let q = g.physical_to_index(&p[..g.ndim()]);
        let on = (0..g.ndim()).any(|a| (q[a].round() as usize).is_multiple_of(every));
        if on {
            FOREGROUND
        } else {
            0.0
        }
    })?;
    warp_image(&pattern, inverse)
}

/// Displacement magnitude scaled linearly to `[0, 255]`; returns the image
/// and the displacement (physical units) represented by one grey level.
pub fn magnitude_image(map: &DeformationMap) -> Result<(ScalarImage, f64)> {
    let g = map.geometry().clone();
    let d = g.ndim();
    let disp = map.displacements();
    let mags: Vec<f64> = disp.chunks(d).map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    let per_level = max / 255.0;
    let vals = if max > 0.0 { mags.iter().map(|m| m / per_level).collect() } else { mags };
    Ok((ScalarImage::new(g, vals)?, per_level))
}

/// Central slice along axis 0 of a 3D image; 2D images pass through.
pub fn central_slice(img: &ScalarImage) -> Result<ScalarImage> {
    let g = img.geometry();
    match g.ndim() {
        2 => Ok(img.clone()),
        3 => {
            let k = g.dims()[0] / 2;
            let plane = g.dims()[1] * g.dims()[2];
            let sg = GridGeometry::new(
                g.dims()[1..].to_vec(),
                g.spacing()[1..].to_vec(),
                g.origin()[1..].to_vec(),
            )?;
            ScalarImage::new(sg, img.values()[k * plane..(k + 1) * plane].to_vec())
        }
        _ => Err(Error::InvalidInput("only 2D and 3D images have slices".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    Fig1a,
    Fig1b,
    Fig1c,
}

impl std::str::FromStr for DemoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1a" => Ok(DemoKind::Fig1a),
            "fig1b" => Ok(DemoKind::Fig1b),
            "fig1c" => Ok(DemoKind::Fig1c),
            other => Err(Error::InvalidInput(format!("unknown demo {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoOutput {
    pub kind: DemoKind,
    pub flow: FlowPath,
    pub grid_image: ScalarImage,
    /// Momentum vector `a` and, for first-order demos, the derivative axis.
    pub momentum: [f64; 2],
    pub axis: Option<usize>,
    pub center: usize,
}

pub const DEMO_SIZE: usize = 33;

/// Integrates a single momentum at the grid centre: gaussian zeroth order
/// (fig1a), gaussian first order (fig1b) or wendland first order (fig1c).
/// First-order demos attach the momentum along columns to the row derivative,
/// so the line `row = centre` is the kink line.
pub fn demo_momentum(kind: DemoKind, magnitude: f64) -> Result<DemoOutput> {
    let g = GridGeometry::unit(&[DEMO_SIZE, DEMO_SIZE])?;
    let c = DEMO_SIZE / 2;
    let (family, first) = match kind {
        DemoKind::Fig1a => (KernelFamily::Gaussian, false),
        DemoKind::Fig1b => (KernelFamily::Gaussian, true),
        DemoKind::Fig1c => (KernelFamily::WendlandC0Mult, true),
    };
    let spec = KernelSpec {
        family,
        scale: 6.0,
        window: 2 * c + 1,
        kink_width: None,
    };
    let mut ms = MomentumSet::zeros(2, Arc::new(vec![c as f64, c as f64]))?;
    let a = if first { [0.0, magnitude] } else { [0.6 * magnitude, 0.8 * magnitude] };
    if first {
        ms.m1_mut(0, 0).copy_from_slice(&a);
    } else {
        ms.m0_mut(0).copy_from_slice(&a);
    }
    let flow = integrate(&TimeMomenta::constant(ms, 10)?, &spec, &g)?;
    let grid_image = deformed_grid_image(flow.inverse(), 4)?;
    Ok(DemoOutput {
        kind,
        flow,
        grid_image,
        momentum: a,
        axis: first.then_some(0),
        center: c,
    })
}

/// Smallest cosine between displacement and `dir` over nodes with `|u| > tol`.
pub fn min_direction_cosine(map: &DeformationMap, dir: &[f64], tol: f64) -> f64 {
    let d = map.geometry().ndim();
    let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    map.displacements()
        .chunks(d)
        .filter_map(|u| {
            let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            (un > tol).then(|| u.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / (un * dn))
        })
        .fold(1.0, f64::min)
}

/// Largest finite-difference velocity-gradient entry of a demo's first step.
pub fn max_displacement_gradient(map: &DeformationMap) -> f64 {
    let g = map.geometry();
    let d = g.ndim();
    let disp = map.displacements();
    let mut best: f64 = 0.0;
    for n in 0..g.len() {
        let idx = g.multi_index(n);
        for b in 0..d {
            if idx[b] + 1 < g.dims()[b] {
                let m = n + g.strides()[b];
                for a in 0..d {
                    best = best.max(((disp[m * d + a] - disp[n * d + a]) / g.spacing()[b]).abs());
                }
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gaussian,
    WendlandZeroth,
    WendlandBoth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gaussian => "gaussian",
            Method::WendlandZeroth => "wendland_zeroth",
            Method::WendlandBoth => "wendland_both",
        }
    }

    pub fn family(self) -> KernelFamily {
        match self {
            Method::Gaussian => KernelFamily::Gaussian,
            _ => KernelFamily::WendlandC0Mult,
        }
    }

    pub fn orders(self) -> Orders {
        match self {
            Method::WendlandBoth => Orders::ZerothAndFirst,
            _ => Orders::ZerothOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Rectangle {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_shift")]
        shift: f64,
        #[serde(default = "default_true")]
        blur: bool,
    },
    Wheel {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_angle")]
        angle: f64,
        #[serde(default = "default_true")]
        blur: bool,
    },
    /// Template and reference image files (PGM, or raw int16 with a
    /// `.json` sidecar), with optional landmark files.
    Files {
        template: PathBuf,
        reference: PathBuf,
        #[serde(default)]
        template_landmarks: Option<PathBuf>,
        #[serde(default)]
        reference_landmarks: Option<PathBuf>,
        #[serde(default)]
        landmark_index_base: u8,
    },
    /// DIR-Lab case with T00 as template and T50 as reference. Without a
    /// crop the experiment must opt into full-resolution 3D.
    Dirlab {
        root: PathBuf,
        case: usize,
        #[serde(default)]
        crop: Option<usize>,
    },
}

fn default_size() -> usize {
    64
}

fn default_shift() -> f64 {
    5.0
}

fn default_angle() -> f64 {
    5.0
}

fn default_true() -> bool {
    true
}

/// Per-method tweaks on top of the shared configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodOverride {
    #[serde(default)]
    pub reg_weight: Option<f64>,
    #[serde(default)]
    pub lambda: Option<SparsityWeights>,
    #[serde(default)]
    pub max_iters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub generator: Generator,
    /// Shared configuration; kernel family and orders are set per method.
    pub config: RegistrationConfig,
    pub output: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub overrides: BTreeMap<Method, MethodOverride>,
    #[serde(default)]
    pub full3d: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("experiment lists no methods".into()));
        }
        self.config.validate()
    }

    pub fn method_config(&self, m: Method) -> RegistrationConfig {
        let mut cfg = self.config.clone();
        cfg.kernel.family = m.family();
        cfg.orders = m.orders();
        if let Some(o) = self.overrides.get(&m) {
            if let Some(w) = o.reg_weight {
                cfg.reg_weight = w;
            }
            if let Some(l) = &o.lambda {
                cfg.lambda = l.clone();
            }
            if let Some(it) = o.max_iters {
                cfg.max_iters = it;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub ssd_after: f64,
    pub tre_after_mm: Option<f64>,
    /// `None` when the metric is undefined or not applicable.
    pub transition_width_rows: Option<f64>,
    pub jacobian_min: f64,
    /// Inverse consistency over nodes away from active first-order points.
    pub inverse_consistency_px: f64,
    pub inverse_consistency_nodes: usize,
    pub jacobian_min_homogeneous: f64,
    /// Rectangle: sign flip across the interface. Wheel: across the ring.
    pub sign_flip: Option<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
    pub final_energy: EnergyTerms,
    pub kernel: KernelSpec,
    pub magnitude_per_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub ssd_before: f64,
    pub tre_before_mm: Option<f64>,
    pub methods: BTreeMap<String, MethodReport>,
}

struct Loaded {
    pair: SyntheticPair,
    interface: Option<(usize, f64)>,
    ring: Option<([f64; 2], f64, f64)>,
}

/// Reads a PGM, or raw int16 with a `.json` sidecar next to it.
pub fn load_image(path: &Path) -> Result<ScalarImage> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        read_pgm(path)
    } else {
        read_raw16(path, path.with_extension("json"))
    }
}

fn load(gen: &Generator, full3d: bool) -> Result<Loaded> {
    match gen {
        Generator::Dirlab { root, case, crop } => {
            if crop.is_none() && !full3d {
                return Err(Error::InvalidInput(
                    "full-resolution DIR-Lab registration needs full3d; set a crop for smoke runs".into(),
                ));
            }
            Ok(Loaded {
                pair: dirlab_pair(root, *case, *crop)?,
                interface: None,
                ring: None,
            })
        }
        Generator::Rectangle { size, shift, blur } => Ok(Loaded {
            pair: gen_rectangle(*size, *shift, *blur)?,
            interface: Some((0, rectangle_interface(*size))),
            ring: None,
        }),
        Generator::Wheel { size, angle, blur } => {
            let (c, r, _) = wheel_geometry(*size);
            Ok(Loaded {
                pair: gen_wheel(*size, *angle, *blur)?,
                interface: None,
                ring: Some((c, r, *angle)),
            })
        }
        Generator::Files {
            template,
            reference,
            template_landmarks,
            reference_landmarks,
            landmark_index_base,
        } => {
            let t = load_image(template)?;
            let r = load_image(reference)?;
            let dims = t.geometry().dims().to_vec();
            let lm = |p: &Option<PathBuf>| -> Result<Option<LandmarkSet>> {
                p.as_ref()
                    .map(|p| read_landmarks(p, *landmark_index_base, Some(&dims)))
                    .transpose()
            };
            let g = t.geometry().clone();
            Ok(Loaded {
                pair: SyntheticPair {
                    forward: DeformationMap::identity(g.clone(), Direction::Forward),
                    inverse: DeformationMap::identity(g, Direction::Inverse),
                    template_landmarks: lm(template_landmarks)?,
                    reference_landmarks: lm(reference_landmarks)?,
                    template: t,
                    reference: r,
                },
                interface: None,
                ring: None,
            })
        }
    }
}

/// Nodes at Chebyshev distance `>= scale` from every first-order control
/// point whose momentum exceeds 1% of the largest one.
pub fn homogeneous_region(res: &RegistrationResult, grid: &GridGeometry) -> Vec<bool> {
    let d = grid.ndim();
    let tm = &res.momenta;
    let np = tm.points().len() / d;
    let mut norms = vec![0.0f64; np];
    for ms in tm.steps() {
        for (j, nrm) in norms.iter_mut().enumerate() {
            let s: f64 = (0..d).map(|i| ms.m1(j, i).iter().map(|v| v * v).sum::<f64>()).sum();
            *nrm = nrm.max(s.sqrt());
        }
    }
    let max = norms.iter().copied().fold(0.0, f64::max);
    let active: Vec<&[f64]> = (0..np)
        .filter(|&j| max > 0.0 && norms[j] > 1e-2 * max)
        .map(|j| &tm.points()[j * d..(j + 1) * d])
        .collect();
    let scale = res.kernel.scale;
    (0..grid.len())
        .map(|n| {
            let x = grid.node_position(n);
            active
                .iter()
                .all(|p| (0..d).map(|a| (x[a] - p[a]).abs()).fold(0.0, f64::max) >= scale)
        })
        .collect()
}

fn trace_csv(trace: &[EnergyTerms]) -> String {
    let mut s = String::from("iter,E_S,E_R,sparsity,total\n");
    for (i, e) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{:e},{:e},{:e},{:e}\n", e.e_s, e.e_r, e.sparsity, e.total));
    }
    s
}

/// Files and directories created by an experiment, removed again on failure.
#[derive(Default)]
struct Artifacts {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Artifacts {
    fn dir(&mut self, p: &Path) -> Result<()> {
        if !p.exists() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
            self.dirs.push(p.to_path_buf());
        }
        Ok(())
    }

    fn write(&mut self, p: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.files.push(p);
        Ok(())
    }

    fn pgm(&mut self, p: PathBuf, img: &ScalarImage) -> Result<()> {
        write_pgm(&central_slice(img)?, &p)?;
        self.files.push(p);
        Ok(())
    }

    fn cleanup(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Registers the pair with one method and derives its metrics.
pub fn evaluate_method(
    pair: &SyntheticPair,
    cfg: &RegistrationConfig,
    interface: Option<(usize, f64)>,
    ring: Option<([f64; 2], f64, f64)>,
) -> Result<(RegistrationResult, MethodReport)> {
    let res = optimize(cfg, &pair.template, &pair.reference)?;
    let g = pair.template.geometry();
    let ssd_after = ssd(&res.warped, &pair.reference)?;
    let tre_after = match (&pair.reference_landmarks, &pair.template_landmarks) {
        (Some(r), Some(t)) => Some(tre(r, t, g.spacing(), Some(res.flow.inverse()))?),
        _ => None,
    };
    let fwd = res.flow.forward();
    let width = match interface {
        Some((axis, pos)) if g.ndim() == 2 => transition_width(fwd, axis, pos).ok(),
        _ => None,
    };
    let sign_flip = match (interface, ring) {
        (Some((axis, pos)), _) if g.ndim() == 2 => sign_flip_across_line(fwd, axis, pos.ceil() as usize).ok(),
        (_, Some((c, r, angle))) => Some(ring_sign_flip(fwd, c, r, angle).0),
        _ => None,
    };
    let region = homogeneous_region(&res, g);
    let ic = inverse_consistency_error(&res.flow, |n| region[n]);
    let jac_h = homogeneous_min_det(fwd, &region);
    let (_, per_level) = magnitude_image(fwd)?;
    let report = MethodReport {
        ssd_after,
        tre_after_mm: tre_after,
        transition_width_rows: width,
        jacobian_min: min_jacobian_det(fwd),
        inverse_consistency_px: ic,
        inverse_consistency_nodes: region.iter().filter(|&&b| b).count(),
        jacobian_min_homogeneous: jac_h,
        sign_flip,
        iterations: res.iterations_used,
        converged: res.converged,
        stagnated: res.stagnated,
        final_energy: *res.energy_trace.last().expect("trace has the initial entry"),
        kernel: res.kernel,
        magnitude_per_level: per_level,
    };
    Ok((res, report))
}

/// Smallest central-difference Jacobian determinant over interior region nodes.
pub fn homogeneous_min_det(map: &DeformationMap, region: &[bool]) -> f64 {
    let g = map.geometry();
    let d = g.ndim();
    let mut best = f64::INFINITY;
    for n in 0..g.len() {
        if !region[n] {
            continue;
        }
        let idx = g.multi_index(n);
        if !(0..d).all(|a| idx[a] > 0 && idx[a] + 1 < g.dims()[a]) {
            continue;
        }
        let mut jac = Mat::zeros(d);
        for b in 0..d {
            let s = g.strides()[b];
            let (fp, fm) = (map.target(n + s), map.target(n - s));
            for a in 0..d {
                jac.set(a, b, (fp[a] - fm[a]) / (2.0 * g.spacing()[b]));
            }
        }
        best = best.min(jac.det());
    }
    best
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsReport> {
    spec.validate()?;
    let mut art = Artifacts::default();
    let out = run_inner(spec, &mut art);
    if out.is_err() {
        art.cleanup();
    }
    out
}

fn run_inner(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<MetricsReport> {
    let loaded = load(&spec.generator, spec.full3d)?;
    let pair = &loaded.pair;
    art.dir(&spec.output)?;
    let g = pair.template.geometry();
    let tre_before = match (&pair.reference_landmarks, &pair.template_landmarks) {
        (Some(r), Some(t)) => Some(tre(r, t, g.spacing(), None)?),
        _ => None,
    };
    let mut report = MetricsReport {
        name: spec.name.clone(),
        ssd_before: ssd(&pair.template, &pair.reference)?,
        tre_before_mm: tre_before,
        methods: BTreeMap::new(),
    };
    art.pgm(spec.output.join("template.pgm"), &pair.template)?;
    art.pgm(spec.output.join("reference.pgm"), &pair.reference)?;
    for &m in &spec.methods {
        let cfg = spec.method_config(m);
        let (res, mr) = evaluate_method(pair, &cfg, loaded.interface, loaded.ring)?;
        write_method_artifacts(art, &spec.output.join(m.name()), &res)?;
        report.methods.insert(m.name().to_string(), mr);
    }
    art.write(spec.output.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

fn write_method_artifacts(art: &mut Artifacts, dir: &Path, res: &RegistrationResult) -> Result<()> {
    art.dir(dir)?;
    art.pgm(dir.join("warped.pgm"), &res.warped)?;
    art.pgm(dir.join("magnitude.pgm"), &magnitude_image(res.flow.forward())?.0)?;
    art.pgm(dir.join("grid.pgm"), &deformed_grid_image(res.flow.inverse(), 4)?)?;
    art.write(dir.join("trace.csv"), trace_csv(&res.energy_trace).as_bytes())?;
    let map = dir.join("inverse_map.json");
    write_map_json(res.flow.inverse(), &map)?;
    art.files.push(map);
    Ok(())
}

/// Registers one image pair and writes warped, magnitude and grid images,
/// the energy trace, the inverse map and `report.json` into `out`.
pub fn register_to_dir(
    template: &ScalarImage,
    reference: &ScalarImage,
    cfg: &RegistrationConfig,
    out: &Path,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut art = Artifacts::default();
    let run = |art: &mut Artifacts| -> Result<MetricsReport> {
        let pair = SyntheticPair {
            forward: DeformationMap::identity(template.geometry().clone(), Direction::Forward),
            inverse: DeformationMap::identity(template.geometry().clone(), Direction::Inverse),
            template: template.clone(),
            reference: reference.clone(),
            template_landmarks: None,
            reference_landmarks: None,
        };
        let (res, mr) = evaluate_method(&pair, cfg, None, None)?;
        art.dir(out)?;
        write_method_artifacts(art, out, &res)?;
        let mut report = MetricsReport {
            name: "register".into(),
            ssd_before: ssd(template, reference)?,
            tre_before_mm: None,
            methods: BTreeMap::new(),
        };
        report.methods.insert(method_label(cfg), mr);
        art.write(out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(report)
    };
    let out = run(&mut art);
    if out.is_err() {
        art.cleanup();
    }
    out
}

fn method_label(cfg: &RegistrationConfig) -> String {
    match (cfg.kernel.family, cfg.orders) {
        (KernelFamily::Gaussian, Orders::ZerothOnly) => "gaussian".into(),
        (KernelFamily::Gaussian, Orders::ZerothAndFirst) => "gaussian_both".into(),
        (KernelFamily::WendlandC0Mult, Orders::ZerothOnly) => "wendland_zeroth".into(),
        (KernelFamily::WendlandC0Mult, Orders::ZerothAndFirst) => "wendland_both".into(),
    }
}

/// Voxel spacing (x, y, z) in mm of the ten DIR-Lab 4DCT cases.
pub const DIRLAB_SPACING: [[f64; 3]; 10] = [
    [0.97, 0.97, 2.5],
    [1.16, 1.16, 2.5],
    [1.15, 1.15, 2.5],
    [1.13, 1.13, 2.5],
    [1.10, 1.10, 2.5],
    [0.97, 0.97, 2.5],
    [0.97, 0.97, 2.5],
    [0.97, 0.97, 2.5],
    [0.97, 0.97, 2.5],
    [0.97, 0.97, 2.5],
];

/// Volume size (x, y, z) of the DIR-Lab cases.
pub const DIRLAB_DIMS: [[usize; 3]; 10] = [
    [256, 256, 94],
    [256, 256, 112],
    [256, 256, 104],
    [256, 256, 99],
    [256, 256, 106],
    [512, 512, 128],
    [512, 512, 136],
    [512, 512, 128],
    [512, 512, 128],
    [512, 512, 120],
];

/// First file (in sorted path order) under `root` whose lowercased name
/// satisfies `pred`.
fn find_file(root: &Path, pred: &dyn Fn(&str) -> bool) -> Option<PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .find(|e| e.file_name().to_str().is_some_and(|n| pred(&n.to_ascii_lowercase())))
        .map(|e| e.into_path())
}

fn case_prefix_matches(name: &str, case: usize) -> bool {
    name.starts_with(&format!("case{case}_"))
}

/// Extreme-phase (T00, T50) landmark files of a DIR-Lab case under `root`.
pub fn dirlab_landmark_files(root: &Path, case: usize) -> Result<(PathBuf, PathBuf)> {
    let find = |phase: &str| {
        let phase = phase.to_string();
        find_file(root, &|n: &str| {
            case_prefix_matches(n, case) && n.contains("300") && n.contains(&phase) && n.ends_with(".txt")
        })
        .ok_or_else(|| Error::InvalidInput(format!("no {phase} landmark file for case {case} under {}", root.display())))
    };
    Ok((find("t00")?, find("t50")?))
}

/// Before-registration TRE of one DIR-Lab case (identity map).
pub fn dirlab_tre_before(root: &Path, case: usize) -> Result<f64> {
    if !(1..=10).contains(&case) {
        return Err(Error::InvalidInput(format!("DIR-Lab case must be 1..=10, got {case}")));
    }
    let (t00, t50) = dirlab_landmark_files(root, case)?;
    let a = read_landmarks(t00, 1, None)?;
    let b = read_landmarks(t50, 1, None)?;
    tre(&a, &b, &DIRLAB_SPACING[case - 1], None)
}

/// Reads a DIR-Lab `.img` volume (little-endian int16, x fastest) as a
/// grid with axes (z, y, x).
pub fn dirlab_volume(root: &Path, case: usize, phase: &str) -> Result<ScalarImage> {
    let phase = phase.to_ascii_lowercase();
    let path = find_file(root, &|n: &str| case_prefix_matches(n, case) && n.contains(&phase) && n.ends_with(".img"))
        .ok_or_else(|| Error::InvalidInput(format!("no {phase} image for case {case}")))?;
    let [nx, ny, nz] = DIRLAB_DIMS[case - 1];
    let [sx, sy, sz] = DIRLAB_SPACING[case - 1];
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != nx * ny * nz * 2 {
        return Err(Error::format(&path, format!("byte {}", bytes.len()), "unexpected DIR-Lab volume size"));
    }
    let vals = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect();
    ScalarImage::new(GridGeometry::with_spacing(&[nz, ny, nx], &[sz, sy, sx])?, vals)
}

/// DIR-Lab T00/T50 pair on a (z, y, x) grid, with landmarks converted to
/// zero-based (z, y, x) indices. A crop keeps the centred `edge`-cube and
/// only the landmark pairs that fall inside it.
pub fn dirlab_pair(root: &Path, case: usize, crop: Option<usize>) -> Result<SyntheticPair> {
    if !(1..=10).contains(&case) {
        return Err(Error::InvalidInput(format!("DIR-Lab case must be 1..=10, got {case}")));
    }
    let mut template = dirlab_volume(root, case, "t00")?;
    let mut reference = dirlab_volume(root, case, "t50")?;
    let (t00, t50) = dirlab_landmark_files(root, case)?;
    let flip = |l: LandmarkSet| -> Vec<Vec<f64>> { l.zero_based().into_iter().map(|p| p.into_iter().rev().collect()).collect() };
    let mut tpl = flip(read_landmarks(t00, 1, None)?);
    let mut refl = flip(read_landmarks(t50, 1, None)?);
    if let Some(edge) = crop {
        let start = crop_start(template.geometry(), edge);
        let dims: Vec<usize> = template.geometry().dims().iter().map(|&n| n.min(edge)).collect();
        template = crop_center(&template, edge)?;
        reference = crop_center(&reference, edge)?;
        let shift = |p: &Vec<f64>| -> Vec<f64> { p.iter().zip(&start).map(|(v, s)| v - *s as f64).collect() };
        let inside = |p: &[f64]| p.iter().zip(&dims).all(|(v, &n)| *v >= 0.0 && *v <= (n - 1) as f64);
        let (t, r): (Vec<_>, Vec<_>) = tpl
            .iter()
            .map(shift)
            .zip(refl.iter().map(shift))
            .filter(|(a, b)| inside(a) && inside(b))
            .unzip();
        tpl = t;
        refl = r;
    }
    let g = template.geometry().clone();
    let lm = |v: Vec<Vec<f64>>| if v.is_empty() { Ok(None) } else { LandmarkSet::new(v, 0).map(Some) };
    Ok(SyntheticPair {
        forward: DeformationMap::identity(g.clone(), Direction::Forward),
        inverse: DeformationMap::identity(g, Direction::Inverse),
        template_landmarks: lm(tpl)?,
        reference_landmarks: lm(refl)?,
        template,
        reference,
    })
}

fn crop_start(g: &GridGeometry, edge: usize) -> Vec<usize> {
    g.dims().iter().map(|&n| (n - n.min(edge)) / 2).collect()
}

/// Centred sub-volume of at most `edge` nodes per axis.
pub fn crop_center(img: &ScalarImage, edge: usize) -> Result<ScalarImage> {
    let g = img.geometry();
    let d = g.ndim();
    let dims: Vec<usize> = g.dims().iter().map(|&n| n.min(edge)).collect();
    let start = crop_start(g, edge);
    let origin: Vec<f64> = (0..d).map(|a| g.origin()[a] + start[a] as f64 * g.spacing()[a]).collect();
    let cg = GridGeometry::new(dims.clone(), g.spacing().to_vec(), origin)?;
    let vals = (0..cg.len())
        .map(|n| {
            let idx = cg.multi_index(n);
            let mut fi = [0usize; MAX_DIM];
            for a in 0..d {
                fi[a] = idx[a] + start[a];
            }
            img.values()[g.flat_index(&fi[..d])]
        })
        .collect();
    ScalarImage::new(cg, vals)
}
