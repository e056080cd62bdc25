//! Small banded linear algebra used on the radial grids.
//!
//! The radial operators are at most nine-point stencils, so the inner solves
//! of the entropy minimizer and the flow engine stay O(M).

use crate::error::{LabError, Result};
use nalgebra::DMatrix;

/// Square band matrix with `lower` sub- and `upper` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    // row-major: row i stores columns i-lower ..= i+upper
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, data: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.lower < i || j > i + self.upper {
            return None;
        }
        Some(i * (self.lower + self.upper + 1) + (j + self.lower - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` to entry (i, j). Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside band");
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside band");
        self.data[k] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let lu = BandLu::factor(self)?;
        Ok(lu.solve(b))
    }
}

/// LU factors of a band matrix (row pivoting widens the upper band by `lower`).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    lower: usize,
    width: usize,
    // rows stored densely over columns i-lower ..= i+upper+lower
    rows: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let lower = a.lower;
        let width = 2 * lower + a.upper + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            let lo = i.saturating_sub(lower);
            let hi = (i + a.upper).min(n - 1);
            for j in lo..=hi {
                rows[i * width + (j + lower - i)] = a.get(i, j);
            }
        }
        let at = |i: usize, j: usize| i * width + (j + lower - i);
        let mut piv = vec![0; n];
        let scale = a.data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let last = (k + lower).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for i in k + 1..=last {
                let v = rows[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-15 * scale {
                return Err(LabError::LinearAlgebra(format!("singular band matrix at pivot {k}")));
            }
            piv[k] = p;
            let col_hi = (k + width - lower - 1).min(n - 1);
            if p != k {
                for j in k..=col_hi {
                    let (ik, ip) = (at(k, j), at(p, j));
                    rows.swap(ik, ip);
                }
            }
            let d = rows[at(k, k)];
            for i in k + 1..=last {
                let l = rows[at(i, k)] / d;
                rows[at(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=col_hi {
                        if j + lower >= i {
                            rows[at(i, j)] -= l * rows[at(k, j)];
                        }
                    }
                }
            }
        }
        Ok(Self { n, lower, width, rows, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let lower = self.lower;
        let width = self.width;
        let at = |i: usize, j: usize| i * width + (j + lower - i);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + lower).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.rows[at(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let col_hi = (k + width - lower - 1).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=col_hi {
                s -= self.rows[at(k, j)] * x[j];
            }
            x[k] = s / self.rows[at(k, k)];
        }
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted inner product `sum_i w_i a_i b_i`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_solve_matches_dense() {
        let n = 30;
        let mut a = BandMatrix::zeros(n, 2, 3);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 3).min(n - 1) {
                let v = ((i * 7 + j * 13) % 11) as f64 - 5.0;
                a.set(i, j, if i == j { 0.1 + 0.01 * i as f64 } else { v });
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.solve(&b).unwrap();
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10, "{ri} vs {bi}");
        }
        let dense = a.to_dense().lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for (xi, di) in x.iter().zip(dense.iter()) {
            assert!((xi - di).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_band_matrix_is_reported() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(a.solve(&[1.0; 4]), Err(LabError::LinearAlgebra(_))));
    }
}
