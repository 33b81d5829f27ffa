use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridGeometry, Point, Stencil, MAX_DIM};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl ScalarImage {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::InvalidInput(format!(
                "image has {} values, grid has {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite image value at node {i}")));
        }
        Ok(ScalarImage { geometry, values })
    }

    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        let n = geometry.len();
        ScalarImage {
            geometry,
            values: vec![value; n],
        }
    }

    /// Builds an image from a function of the physical node position.
    pub fn from_fn(geometry: GridGeometry, f: impl Fn(&Point) -> f64 + Sync) -> Result<Self> {
        let values = (0..geometry.len())
            .into_par_iter()
            .map(|n| f(&geometry.node_position(n)))
            .collect();
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs_diff(&self, other: &ScalarImage) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// 2x box downsampling (each coarse node averages up to 2^d fine nodes).
    pub fn downsample(&self) -> Result<ScalarImage> {
        let coarse = self.geometry.downsampled()?;
        let d = coarse.ndim();
        let fine = &self.geometry;
        let values = (0..coarse.len())
            .map(|n| {
                let idx = coarse.multi_index(n);
                let mut sum = 0.0;
                let mut count = 0.0;
                for c in 0..(1usize << d) {
                    let mut fi = [0usize; MAX_DIM];
                    let mut ok = true;
                    for a in 0..d {
                        fi[a] = 2 * idx[a] + ((c >> a) & 1);
                        ok &= fi[a] < fine.dims()[a];
                    }
                    if ok {
                        sum += self.values[fine.flat_index(&fi[..d])];
                        count += 1.0;
                    }
                }
                sum / count
            })
            .collect();
        ScalarImage::new(coarse, values)
    }
}

/// A d-vector per node, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    geometry: GridGeometry,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(geometry: GridGeometry, data: Vec<f64>) -> Result<Self> {
        let want = geometry.len() * geometry.ndim();
        if data.len() != want {
            return Err(Error::InvalidInput(format!(
                "vector field has {} components, expected {want}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite vector component at node {}",
                i / geometry.ndim()
            )));
        }
        Ok(VectorField { geometry, data })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        let n = geometry.len() * geometry.ndim();
        VectorField {
            geometry,
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(geometry: GridGeometry, f: impl Fn(&Point) -> Point + Sync) -> Result<Self> {
        let d = geometry.ndim();
        let data = (0..geometry.len())
            .into_par_iter()
            .flat_map_iter(|n| {
                let v = f(&geometry.node_position(n));
                v.into_iter().take(d)
            })
            .collect();
        Self::new(geometry, data)
    }

    pub(crate) fn from_raw(geometry: GridGeometry, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), geometry.len() * geometry.ndim());
        VectorField { geometry, data }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, node: usize) -> &[f64] {
        let d = self.geometry.ndim();
        &self.data[node * d..(node + 1) * d]
    }

    /// Linear interpolation at a physical point (clamped).
    pub fn sample(&self, p: &[f64]) -> Point {
        Stencil::new(&self.geometry, p).vector(&self.data, self.geometry.ndim())
    }

    pub fn max_norm(&self) -> f64 {
        let d = self.geometry.ndim();
        self.data
            .chunks(d)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Maps every node to a physical position.
///
/// Off-node evaluation interpolates the displacement `target - node`, so
/// translations are reproduced exactly everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap {
    geometry: GridGeometry,
    targets: Vec<f64>,
    direction: Direction,
}

impl DeformationMap {
    pub fn identity(geometry: GridGeometry, direction: Direction) -> Self {
        let d = geometry.ndim();
        let targets = (0..geometry.len())
            .flat_map(|n| {
                let p = geometry.node_position(n);
                p.into_iter().take(d)
            })
            .collect();
        DeformationMap {
            geometry,
            targets,
            direction,
        }
    }

    pub fn new(geometry: GridGeometry, targets: Vec<f64>, direction: Direction) -> Result<Self> {
        let want = geometry.len() * geometry.ndim();
        if targets.len() != want {
            return Err(Error::InvalidInput(format!(
                "map has {} target components, expected {want}",
                targets.len()
            )));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite map target at node {}",
                i / geometry.ndim()
            )));
        }
        Ok(DeformationMap {
            geometry,
            targets,
            direction,
        })
    }

    /// Builds a map from a function of the node position.
    pub fn from_fn(geometry: GridGeometry, direction: Direction, f: impl Fn(&Point) -> Point + Sync) -> Result<Self> {
        let d = geometry.ndim();
        let targets = (0..geometry.len())
            .into_par_iter()
            .flat_map_iter(|n| f(&geometry.node_position(n)).into_iter().take(d))
            .collect();
        Self::new(geometry, targets, direction)
    }

    pub(crate) fn from_displacements(geometry: GridGeometry, disp: &[f64], direction: Direction) -> Self {
        let d = geometry.ndim();
        let mut targets = disp.to_vec();
        for n in 0..geometry.len() {
            let p = geometry.node_position(n);
            for a in 0..d {
                targets[n * d + a] += p[a];
            }
        }
        DeformationMap {
            geometry,
            targets,
            direction,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target(&self, node: usize) -> &[f64] {
        let d = self.geometry.ndim();
        &self.targets[node * d..(node + 1) * d]
    }

    /// Node-major displacement `target - node`.
    pub fn displacements(&self) -> Vec<f64> {
        let d = self.geometry.ndim();
        let mut out = self.targets.clone();
        for n in 0..self.geometry.len() {
            let p = self.geometry.node_position(n);
            for a in 0..d {
                out[n * d + a] -= p[a];
            }
        }
        out
    }

    pub fn displacement_field(&self) -> VectorField {
        VectorField::from_raw(self.geometry.clone(), self.displacements())
    }

    /// Evaluates the map at an arbitrary physical point.
    pub fn apply(&self, p: &[f64]) -> Point {
        let d = self.geometry.ndim();
        let s = Stencil::new(&self.geometry, p);
        let mut out = [0.0; MAX_DIM];
        for c in 0..s.corners {
            let node = s.nodes[c];
            let pos = self.geometry.node_position(node);
            for a in 0..d {
                out[a] += s.weights[c] * (self.targets[node * d + a] - pos[a]);
            }
        }
        for a in 0..d {
            out[a] += p[a];
        }
        out
    }
}

/// Landmark coordinates in voxel-index units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Vec<f64>>,
    /// 0 or 1.
    pub index_base: u8,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec<f64>>, index_base: u8) -> Result<Self> {
        if index_base > 1 {
            return Err(Error::InvalidInput(format!("index base must be 0 or 1, got {index_base}")));
        }
        if let Some(d) = points.first().map(Vec::len) {
            if points.iter().any(|p| p.len() != d) {
                return Err(Error::InvalidInput("landmarks have mixed dimensions".into()));
            }
        }
        Ok(LandmarkSet { points, index_base })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points shifted to 0-based indices.
    pub fn zero_based(&self) -> Vec<Vec<f64>> {
        let off = self.index_base as f64;
        self.points.iter().map(|p| p.iter().map(|v| v - off).collect()).collect()
    }

    /// Checks every 0-based point lies inside `[0, dims-1]`.
    pub fn check_bounds(&self, dims: &[usize]) -> Result<()> {
        for (i, p) in self.zero_based().iter().enumerate() {
            if p.len() != dims.len() {
                return Err(Error::InvalidInput(format!("landmark {i} has {} coordinates", p.len())));
            }
            for (a, &v) in p.iter().enumerate() {
                if !(v >= 0.0 && v <= (dims[a] - 1) as f64) {
                    return Err(Error::InvalidInput(format!("landmark {i} axis {a} = {v} outside [0, {}]", dims[a] - 1)));
                }
            }
        }
        Ok(())
    }
}

/// `output(x) = img(inv_map(x))` for every node x.
pub fn warp_image(img: &ScalarImage, inv_map: &DeformationMap) -> Result<ScalarImage> {
    if inv_map.direction() != Direction::Inverse {
        return Err(Error::ContractViolation("warp_image needs an inverse-direction map".into()));
    }
    if !img.geometry().same_shape(inv_map.geometry()) {
        return Err(Error::GeometryMismatch(format!(
            "image dims {:?} vs map dims {:?}",
            img.geometry().dims(),
            inv_map.geometry().dims()
        )));
    }
    let d = img.geometry().ndim();
    let values = (0..inv_map.geometry().len())
        .into_par_iter()
        .map(|n| {
            let t = inv_map.target(n);
            Stencil::new(img.geometry(), &t[..d]).scalar(img.values())
        })
        .collect();
    ScalarImage::new(inv_map.geometry().clone(), values)
}

/// Central differences inside, one-sided at the boundary, in physical units.
pub fn gradient_central(img: &ScalarImage) -> VectorField {
    let g = img.geometry();
    let d = g.ndim();
    let vals = img.values();
    let data = (0..g.len())
        .into_par_iter()
        .flat_map_iter(|n| {
            let idx = g.multi_index(n);
            let mut out = [0.0; MAX_DIM];
            for a in 0..d {
                let s = g.strides()[a];
                let h = g.spacing()[a];
                let i = idx[a];
                out[a] = if i == 0 {
                    (vals[n + s] - vals[n]) / h
                } else if i == g.dims()[a] - 1 {
                    (vals[n] - vals[n - s]) / h
                } else {
                    (vals[n + s] - vals[n - s]) / (2.0 * h)
                };
            }
            out.into_iter().take(d)
        })
        .collect();
    VectorField::from_raw(g.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridGeometry {
        GridGeometry::new(vec![6, 7], vec![1.0, 0.5], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn identity_warp_is_identity() {
        let g = grid();
        let img = ScalarImage::from_fn(g.clone(), |p| (p[0] * 1.7).sin() + p[1] * p[1]).unwrap();
        let out = warp_image(&img, &DeformationMap::identity(g, Direction::Inverse)).unwrap();
        assert_eq!(out.max_abs_diff(&img), 0.0);
    }

    #[test]
    fn shift_warp_translates() {
        let g = GridGeometry::unit(&[5, 8]).unwrap();
        let img = ScalarImage::from_fn(g.clone(), |p| p[1] * p[1] + 10.0 * p[0]).unwrap();
        // inverse map x -> x - e1 moves content one voxel along axis 1
        let m = DeformationMap::from_fn(g.clone(), Direction::Inverse, |p| [p[0], p[1] - 1.0, 0.0]).unwrap();
        let out = warp_image(&img, &m).unwrap();
        for n in 0..g.len() {
            let idx = g.multi_index(n);
            if idx[1] >= 1 {
                let src = g.flat_index(&[idx[0], idx[1] - 1]);
                assert_eq!(out.values()[n], img.values()[src]);
            }
        }
    }

    #[test]
    fn forward_map_rejected() {
        let g = grid();
        let img = ScalarImage::constant(g.clone(), 1.0);
        let err = warp_image(&img, &DeformationMap::identity(g, Direction::Forward)).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn gradient_constant_and_ramp() {
        let g = grid();
        let c = gradient_central(&ScalarImage::constant(g.clone(), 3.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
        let ramp = ScalarImage::from_fn(g.clone(), |p| 2.0 * p[0] - 4.0 * p[1]).unwrap();
        let gr = gradient_central(&ramp);
        for n in 0..g.len() {
            assert!((gr.get(n)[0] - 2.0).abs() < 1e-12);
            assert!((gr.get(n)[1] + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_stencil_oracle() {
        use rand::{Rng, SeedableRng};
        let g = GridGeometry::new(vec![5, 4, 6], vec![1.0, 2.0, 0.5], vec![0.0; 3]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let img = ScalarImage::new(g.clone(), vals.clone()).unwrap();
        let gr = gradient_central(&img);
        let at = |i: usize, j: usize, k: usize| vals[(i * 4 + j) * 6 + k];
        for i in 0..5 {
            for j in 0..4 {
                for k in 0..6 {
                    let n = (i * 4 + j) * 6 + k;
                    let gi = match i {
                        0 => at(1, j, k) - at(0, j, k),
                        4 => at(4, j, k) - at(3, j, k),
                        _ => (at(i + 1, j, k) - at(i - 1, j, k)) / 2.0,
                    };
                    let gj = match j {
                        0 => (at(i, 1, k) - at(i, 0, k)) / 2.0,
                        3 => (at(i, 3, k) - at(i, 2, k)) / 2.0,
                        _ => (at(i, j + 1, k) - at(i, j - 1, k)) / 4.0,
                    };
                    let gk = match k {
                        0 => (at(i, j, 1) - at(i, j, 0)) / 0.5,
                        5 => (at(i, j, 5) - at(i, j, 4)) / 0.5,
                        _ => (at(i, j, k + 1) - at(i, j, k - 1)) / 1.0,
                    };
                    assert_eq!(gr.get(n), &[gi, gj, gk]);
                }
            }
        }
    }

    #[test]
    fn map_apply_translation_exact_everywhere() {
        let g = grid();
        let m = DeformationMap::from_fn(g, Direction::Forward, |p| [p[0] + 0.3, p[1] - 2.0, 0.0]).unwrap();
        let out = m.apply(&[-4.0, 11.2]);
        assert!((out[0] + 3.7).abs() < 1e-12 && (out[1] - 9.2).abs() < 1e-12);
    }

    #[test]
    fn landmark_bounds() {
        let l = LandmarkSet::new(vec![vec![1.0, 1.0], vec![4.0, 3.0]], 1).unwrap();
        assert!(l.check_bounds(&[4, 3]).is_ok());
        assert!(l.check_bounds(&[3, 3]).is_err());
        assert!(LandmarkSet::new(vec![], 2).is_err());
    }
}
