//! Scalar reproducing kernels `K(x, y)` and their derivatives.
//!
//! Partial derivatives are taken with respect to the *second* argument `y`,
//! the control-point location a first-order momentum is attached to.

use serde::{Deserialize, Serialize};

use crate::geometry::{GridGeometry, MAX_DIM};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-|x-y|^2 / s^2)`
    Gaussian,
    /// `prod_i ((1 - |x^i - y^i| / s)_+)^2`
    WendlandC0Mult,
}

/// Kernel family, physical scale and discrete evaluation window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: f64,
    /// Odd node count per axis of the evaluation footprint.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Length over which the coincident-point mass of the Wendland mixed
    /// derivative is spread; `None` means `scale / 2`.
    #[serde(default)]
    pub kink_width: Option<f64>,
}

fn default_window() -> usize {
    9
}

/// Gaussian Gram entries below `exp(-GAUSS_CUTOFF_SQ)` are dropped.
const GAUSS_CUTOFF_SQ: f64 = 40.0;

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64, window: usize) -> Result<Self> {
        let spec = KernelSpec {
            family,
            scale,
            window,
            kink_width: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `scale = 4 * min(spacing)`, window 9.
    pub fn default_for(family: KernelFamily, grid: &GridGeometry) -> Self {
        KernelSpec {
            family,
            scale: 4.0 * grid.min_spacing(),
            window: 9,
            kink_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel scale must be positive, got {}", self.scale)));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("kernel window must be odd and >= 3, got {}", self.window)));
        }
        if let Some(w) = self.kink_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("kink width must be positive, got {w}")));
            }
        }
        Ok(())
    }

    pub fn is_compact(&self) -> bool {
        self.family == KernelFamily::WendlandC0Mult
    }

    /// Per-axis offset beyond which Gram entries are treated as zero.
    pub fn gram_cutoff(&self) -> f64 {
        match self.family {
            KernelFamily::WendlandC0Mult => self.scale,
            KernelFamily::Gaussian => self.scale * GAUSS_CUTOFF_SQ.sqrt(),
        }
    }

    /// Finite value of the 1D Wendland mixed derivative at coincident points.
    ///
    /// Away from the kink the mixed derivative is `-2/s^2`; at the kink it
    /// carries a Dirac of mass `4/s`. Spreading that mass over `kink_width`
    /// gives `-2/s^2 + 4/(s * kink_width)`.
    pub fn wendland_kink_value(&self) -> f64 {
        let s = self.scale;
        let w = self.kink_width.unwrap_or(0.5 * s);
        -2.0 / (s * s) + 4.0 / (s * w)
    }

    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Gaussian => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 / (self.scale * self.scale)).exp()
            }
            KernelFamily::WendlandC0Mult => x.iter().zip(y).map(|(a, b)| wendland_1d(a - b, self.scale)).product(),
        }
    }

    /// `dK/dy^i`.
    #[inline]
    pub fn partial(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let s2 = self.scale * self.scale;
                self.value(x, y) * 2.0 * (x[i] - y[i]) / s2
            }
            KernelFamily::WendlandC0Mult => {
                let mut out = wendland_1d_dy(x[i] - y[i], self.scale);
                for a in 0..x.len() {
                    if a != i {
                        out *= wendland_1d(x[a] - y[a], self.scale);
                    }
                }
                out
            }
        }
    }

    /// `d^2 K / dx^i dy^i`.
    #[inline]
    pub fn mixed(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let s2 = self.scale * self.scale;
                let r = x[i] - y[i];
                self.value(x, y) * (2.0 / s2 - 4.0 * r * r / (s2 * s2))
            }
            KernelFamily::WendlandC0Mult => {
                let r = x[i] - y[i];
                let s = self.scale;
                let mut out = if r.abs() >= s {
                    0.0
                } else if r == 0.0 {
                    self.wendland_kink_value()
                } else {
                    -2.0 / (s * s)
                };
                for a in 0..x.len() {
                    if a != i {
                        out *= wendland_1d(x[a] - y[a], s);
                    }
                }
                out
            }
        }
    }

    /// Value and all partials `dK/dy^i` in one pass.
    #[inline]
    pub fn value_and_partials(&self, x: &[f64], y: &[f64]) -> (f64, [f64; MAX_DIM]) {
        let d = x.len();
        let mut dk = [0.0; MAX_DIM];
        match self.family {
            KernelFamily::Gaussian => {
                let s2 = self.scale * self.scale;
                let k = self.value(x, y);
                for i in 0..d {
                    dk[i] = k * 2.0 * (x[i] - y[i]) / s2;
                }
                (k, dk)
            }
            KernelFamily::WendlandC0Mult => {
                let mut f = [0.0; MAX_DIM];
                let mut df = [0.0; MAX_DIM];
                for a in 0..d {
                    let r = x[a] - y[a];
                    f[a] = wendland_1d(r, self.scale);
                    df[a] = wendland_1d_dy(r, self.scale);
                }
                let k = f[..d].iter().product();
                for i in 0..d {
                    let mut p = df[i];
                    for a in 0..d {
                        if a != i {
                            p *= f[a];
                        }
                    }
                    dk[i] = p;
                }
                (k, dk)
            }
        }
    }
}

#[inline]
fn wendland_1d(r: f64, s: f64) -> f64 {
    let t = 1.0 - r.abs() / s;
    if t > 0.0 {
        t * t
    } else {
        0.0
    }
}

/// d/dy of `((1 - |x-y|/s)_+)^2` with `r = x - y`; zero on the kink.
#[inline]
fn wendland_1d_dy(r: f64, s: f64) -> f64 {
    let t = 1.0 - r.abs() / s;
    if t <= 0.0 || r == 0.0 {
        0.0
    } else {
        2.0 * t * r.signum() / s
    }
}

fn check_points(x: &[f64], y: &[f64], axis: Option<usize>) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput(format!("point dimensions differ: {} vs {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite kernel argument".into()));
    }
    if let Some(i) = axis {
        if i >= x.len() {
            return Err(Error::InvalidInput(format!("axis {i} out of range for dimension {}", x.len())));
        }
    }
    Ok(())
}

pub fn eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_points(x, y, None)?;
    Ok(spec.value(x, y))
}

pub fn eval_partial(spec: &KernelSpec, i: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    check_points(x, y, Some(i))?;
    Ok(spec.partial(i, x, y))
}

pub fn eval_mixed(spec: &KernelSpec, i: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    check_points(x, y, Some(i))?;
    Ok(spec.mixed(i, x, y))
}

/// Flat indices of the window block around the node nearest `center`,
/// clipped to the grid. Wendland footprints are further restricted to the
/// exact support; Gaussian footprints are truncated to the window.
pub fn support_nodes(spec: &KernelSpec, center: &[f64], grid: &GridGeometry) -> Vec<usize> {
    let d = grid.ndim();
    let half = (spec.window / 2) as isize;
    let c = grid.nearest_node(center);
    let mut lo = [0usize; MAX_DIM];
    let mut hi = [0usize; MAX_DIM];
    for a in 0..d {
        lo[a] = (c[a] as isize - half).max(0) as usize;
        hi[a] = ((c[a] as isize + half) as usize).min(grid.dims()[a] - 1);
    }
    let mut out = Vec::new();
    let mut idx = lo;
    'outer: loop {
        let flat = grid.flat_index(&idx[..d]);
        let keep = match spec.family {
            KernelFamily::Gaussian => true,
            KernelFamily::WendlandC0Mult => {
                let p = grid.node_position(flat);
                (0..d).all(|a| (p[a] - center[a]).abs() < spec.scale)
            }
        };
        if keep {
            out.push(flat);
        }
        for a in (0..d).rev() {
            if idx[a] < hi[a] {
                idx[a] += 1;
                continue 'outer;
            }
            idx[a] = lo[a];
        }
        break;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn wend(s: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::WendlandC0Mult, s, 9).unwrap()
    }

    fn gauss(s: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Gaussian, s, 9).unwrap()
    }

    #[test]
    fn identity_value_is_one() {
        for spec in [wend(2.0), gauss(1.5)] {
            assert_eq!(eval(&spec, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn wendland_closed_forms() {
        let s = 2.0;
        let k = wend(s);
        assert_eq!(eval(&k, &[0.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert_eq!(eval(&k, &[0.0, 0.0], &[1.0, -1.0]).unwrap(), 0.0625);
        // 1D partial at x = 0, y = s/2 is -1/s
        assert!((eval_partial(&k, 0, &[0.0], &[1.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(eval_partial(&k, 0, &[0.4, 0.0], &[0.4, 1.0]).unwrap(), 0.0);
        assert_eq!(eval_mixed(&k, 0, &[0.0], &[2.5]).unwrap(), 0.0);
        assert_eq!(eval_mixed(&k, 1, &[0.0, 0.0], &[0.5, 2.0]).unwrap(), 0.0);
        assert!((eval_mixed(&k, 0, &[0.0], &[1.0]).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn wendland_kink_convention() {
        let mut k = wend(2.0);
        // default spread over s/2: -2/s^2 + 8/s^2
        assert!((eval_mixed(&k, 0, &[1.0], &[1.0]).unwrap() - 6.0 / 4.0).abs() < 1e-15);
        // spread over the full scale recovers 2/s^2
        k.kink_width = Some(2.0);
        assert!((eval_mixed(&k, 0, &[1.0], &[1.0]).unwrap() - 2.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_closed_forms() {
        let k = gauss(1.0);
        assert_eq!(eval_partial(&k, 0, &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((eval_mixed(&k, 0, &[0.0], &[0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_mixed_matches_second_differences() {
        let k = gauss(1.0);
        let h = 1e-4;
        let f = |x: f64, y: f64| k.value(&[x], &[y]);
        let fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        assert!((fd - 2.0).abs() < 1e-6, "{fd}");
    }

    #[test]
    fn partial_matches_central_differences() {
        let s = 1.7;
        let k = wend(s);
        let h = 1e-6 * s;
        let fd = (k.value(&[0.0], &[s / 2.0 + h]) - k.value(&[0.0], &[s / 2.0 - h])) / (2.0 * h);
        assert!((fd - k.partial(0, &[0.0], &[s / 2.0])).abs() < 1e-8);
        assert!((fd + 1.0 / s).abs() < 1e-8);
    }

    #[test]
    fn mixed_matches_nested_differences_off_kink() {
        let s = 1.3;
        let k = wend(s);
        let (x, y) = ([0.0, 0.2], [0.5 * s, -0.1]);
        let h = 1e-4 * s;
        let at = |dx: f64, dy: f64| k.value(&[x[0] + dx, x[1]], &[y[0] + dy, y[1]]);
        let fd = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
        let exact = k.mixed(0, &x, &y);
        assert!(((fd - exact) / exact).abs() < 1e-5, "{fd} vs {exact}");
    }

    #[test]
    fn value_and_partials_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for spec in [wend(2.0), gauss(2.0)] {
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (v, dk) = spec.value_and_partials(&x, &y);
                assert!((v - spec.value(&x, &y)).abs() < 1e-15);
                for i in 0..3 {
                    assert!((dk[i] - spec.partial(i, &x, &y)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(eval(&wend(1.0), &[0.0, 1.0], &[0.0]).is_err());
        assert!(eval_partial(&wend(1.0), 2, &[0.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, 1.0, 4).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0.0, 5).is_err());
    }

    #[test]
    fn support_window_sizes() {
        let g = GridGeometry::unit(&[32, 32]).unwrap();
        let gk = gauss(4.0);
        assert_eq!(support_nodes(&gk, &[15.0, 16.0], &g).len(), 81);
        // corner: clipped to a 5x5 block
        assert_eq!(support_nodes(&gk, &[0.0, 0.0], &g).len(), 25);
        // wendland of scale 4 keeps |offset| < 4 -> 7x7
        assert_eq!(support_nodes(&wend(4.0), &[15.0, 16.0], &g).len(), 49);
        assert_eq!(support_nodes(&wend(0.7), &[15.0, 16.0], &g), vec![g.flat_index(&[15, 16])]);
    }
}
