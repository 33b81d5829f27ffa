//! Small dense square matrices (d <= 3) for Jacobians and saltation factors.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::geometry::MAX_DIM;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    a: [[f64; MAX_DIM]; MAX_DIM],
}

impl Mat {
    pub fn zeros(n: usize) -> Mat {
        assert!(n <= MAX_DIM, "matrix size {n} exceeds {MAX_DIM}");
        Mat {
            n,
            a: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i][i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
        let n = rows.len();
        if n == 0 || n > MAX_DIM || rows.iter().any(|r| r.len() != n) {
            return None;
        }
        let mut m = Mat::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            m.a[i][..n].copy_from_slice(r);
        }
        Some(m)
    }

    /// `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Mat {
        let mut m = Mat::zeros(u.len());
        for i in 0..u.len() {
            for j in 0..u.len() {
                m.a[i][j] = u[i] * v[j];
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i][j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.a[i][..self.n].to_vec()).collect()
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] *= s;
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[j][i];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self.a[i][j] * v[j]).sum();
        }
        out
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        match self.n {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            3 => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
            _ => 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.a[i][j].is_finite()))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.a[i][j] * self.a[i][j])
            .sum::<f64>()
            .sqrt()
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| (self.a[i][j] - other.a[i][j]).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Mat {
    type Output = Mat;

    fn mul(self, rhs: Mat) -> Mat {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = (0..self.n).map(|k| self.a[i][k] * rhs.a[k][j]).sum();
            }
        }
        m
    }
}

impl Add for Mat {
    type Output = Mat;

    fn add(self, rhs: Mat) -> Mat {
        let mut m = self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] += rhs.a[i][j];
            }
        }
        m
    }
}

impl Sub for Mat {
    type Output = Mat;

    fn sub(self, rhs: Mat) -> Mat {
        self + rhs.scale(-1.0)
    }
}

impl Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Mat::from_rows(&rows).ok_or_else(|| serde::de::Error::custom("expected a square matrix of size 1..=3"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_algebra() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Mat::identity(2);
        assert_eq!(a * i, a);
        assert_eq!(a.det(), -2.0);
        assert_eq!(a.transpose().get(0, 1), 3.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0])[..2], [3.0, 7.0]);
        let o = Mat::outer(&[0.0, 2.0], &[1.0, 0.0]);
        assert_eq!((i + o).rows(), vec![vec![1.0, 0.0], vec![2.0, 1.0]]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Mat>(&json).unwrap(), a);
        assert!(Mat::from_rows(&[vec![1.0, 2.0]]).is_none());
    }
}
