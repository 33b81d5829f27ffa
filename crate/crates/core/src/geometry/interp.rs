use super::{GridGeometry, ScalarImage, MAX_DIM};
use crate::{Error, Result};

const MAX_CORNERS: usize = 1 << MAX_DIM;

/// Multilinear interpolation stencil at one physical point.
///
/// Coordinates outside the node bounding box are clamped to the boundary
/// face first; along a clamped axis the position derivative is zero.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub corners: usize,
    pub nodes: [usize; MAX_CORNERS],
    pub weights: [f64; MAX_CORNERS],
    /// d weight / d position (physical units), per corner per axis.
    pub dweights: [[f64; MAX_DIM]; MAX_CORNERS],
}

impl Stencil {
    /// The point must be finite; callers at API boundaries check this.
    pub fn new(geom: &GridGeometry, p: &[f64]) -> Stencil {
        let d = geom.ndim();
        let dims = geom.dims();
        let mut lo = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        let mut dfrac = [0.0; MAX_DIM];
        for a in 0..d {
            let q = (p[a] - geom.origin()[a]) / geom.spacing()[a];
            let maxq = (dims[a] - 1) as f64;
            let (qc, inside) = if q < 0.0 {
                (0.0, false)
            } else if q > maxq {
                (maxq, false)
            } else {
                (q, true)
            };
            let i0 = (qc.floor() as usize).min(dims[a] - 2);
            lo[a] = i0;
            frac[a] = qc - i0 as f64;
            dfrac[a] = if inside { 1.0 / geom.spacing()[a] } else { 0.0 };
        }
        let corners = 1 << d;
        let strides = geom.strides();
        let mut s = Stencil {
            corners,
            nodes: [0; MAX_CORNERS],
            weights: [0.0; MAX_CORNERS],
            dweights: [[0.0; MAX_DIM]; MAX_CORNERS],
        };
        for c in 0..corners {
            let mut node = 0;
            let mut w = 1.0;
            let mut factors = [0.0; MAX_DIM];
            for a in 0..d {
                let hi = (c >> (d - 1 - a)) & 1 == 1;
                node += (lo[a] + hi as usize) * strides[a];
                factors[a] = if hi { frac[a] } else { 1.0 - frac[a] };
                w *= factors[a];
            }
            s.nodes[c] = node;
            s.weights[c] = w;
            for a in 0..d {
                let hi = (c >> (d - 1 - a)) & 1 == 1;
                let mut dw = if hi { dfrac[a] } else { -dfrac[a] };
                for b in 0..d {
                    if b != a {
                        dw *= factors[b];
                    }
                }
                s.dweights[c][a] = dw;
            }
        }
        s
    }

    #[inline]
    pub fn scalar(&self, values: &[f64]) -> f64 {
        (0..self.corners).map(|c| self.weights[c] * values[self.nodes[c]]).sum()
    }

    /// Gradient of the interpolant with respect to the sample position.
    #[inline]
    pub fn scalar_grad(&self, values: &[f64], d: usize) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for c in 0..self.corners {
            let v = values[self.nodes[c]];
            for a in 0..d {
                g[a] += self.dweights[c][a] * v;
            }
        }
        g
    }

    /// Interpolates a node-major vector field with `d` components per node.
    #[inline]
    pub fn vector(&self, data: &[f64], d: usize) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        for c in 0..self.corners {
            let base = self.nodes[c] * d;
            for a in 0..d {
                out[a] += self.weights[c] * data[base + a];
            }
        }
        out
    }

    /// Jacobian of the interpolated vector field: `out[comp][axis]`.
    #[inline]
    pub fn vector_jacobian(&self, data: &[f64], d: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for c in 0..self.corners {
            let base = self.nodes[c] * d;
            for comp in 0..d {
                let v = data[base + comp];
                for a in 0..d {
                    out[comp][a] += self.dweights[c][a] * v;
                }
            }
        }
        out
    }
}

/// Multilinear interpolation of `img` at physical point `p`, clamped to the domain.
pub fn sample_linear(img: &ScalarImage, p: &[f64]) -> Result<f64> {
    let d = img.geometry().ndim();
    if p.len() != d {
        return Err(Error::InvalidInput(format!("point has {} coordinates, grid has {d}", p.len())));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample point {p:?}")));
    }
    Ok(Stencil::new(img.geometry(), p).scalar(img.values()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ScalarImage {
        let g = GridGeometry::new(vec![4, 5], vec![2.0, 1.0], vec![1.0, 0.0]).unwrap();
        let vals = (0..g.len())
            .map(|n| {
                let p = g.node_position(n);
                3.0 * p[0] - 2.0 * p[1] + 1.0
            })
            .collect();
        ScalarImage::new(g, vals).unwrap()
    }

    #[test]
    fn exact_at_nodes() {
        let img = ramp();
        for n in 0..img.geometry().len() {
            let p = img.geometry().node_position(n);
            assert_eq!(sample_linear(&img, &p[..2]).unwrap(), img.values()[n]);
        }
    }

    #[test]
    fn midpoint_is_average() {
        let g = GridGeometry::unit(&[2, 2]).unwrap();
        let img = ScalarImage::new(g, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(sample_linear(&img, &[0.0, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn clamps_outside() {
        let img = ramp();
        let g = img.geometry().clone();
        let corner = img.values()[g.flat_index(&[3, 4])];
        // 3 voxels beyond the far corner
        let p = [1.0 + 3.0 * 2.0 + 6.0, 4.0 + 3.0];
        assert_eq!(sample_linear(&img, &p).unwrap(), corner);
        let edge = img.values()[g.flat_index(&[0, 2])];
        assert_eq!(sample_linear(&img, &[1.0 - 6.0, 2.0]).unwrap(), edge);
    }

    #[test]
    fn affine_exact_inside_with_gradient() {
        let img = ramp();
        for &(x, y) in &[(1.3, 0.2), (6.9, 3.99), (4.0, 2.5)] {
            let s = Stencil::new(img.geometry(), &[x, y]);
            assert!((s.scalar(img.values()) - (3.0 * x - 2.0 * y + 1.0)).abs() < 1e-12);
            let g = s.scalar_grad(img.values(), 2);
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(sample_linear(&ramp(), &[f64::NAN, 0.0]).is_err());
        assert!(sample_linear(&ramp(), &[0.0]).is_err());
    }
}
