//! Small dense symmetric linear algebra.
//!
//! Every design in this crate has a handful of columns (the scenario bases
//! have two or three), so a plain `Vec<f64>`-backed symmetric matrix with a
//! Cholesky solve is all that is needed.

use crate::error::{Error, Result};

/// Symmetric matrix stored dense in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Rank-one update `self += scale * x xᵀ`.
    #[inline]
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        debug_assert_eq!(x.len(), self.dim);
        for i in 0..self.dim {
            let si = scale * x[i];
            for j in 0..self.dim {
                self.data[i * self.dim + j] += si * x[j];
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Cholesky factor L with `self = L Lᵀ`, or the indices of columns that
    /// make the matrix numerically singular.
    fn cholesky(&self) -> std::result::Result<Vec<f64>, Vec<usize>> {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        let mut bad = Vec::new();
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            // Tolerance relative to the diagonal scale of the input.
            let tol = 1e-12 * self.get(j, j).abs().max(1e-300);
            if d <= tol {
                bad.push(j);
                l[j * n + j] = 0.0;
                continue;
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        if bad.is_empty() {
            Ok(l)
        } else {
            Err(bad)
        }
    }

    /// Solve `self * x = b` by Cholesky. Errors name the collinear columns.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = self
            .cholesky()
            .map_err(|columns| Error::RankDeficient { columns })?;
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[i * n + k] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= l[k * n + i] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        Ok(y)
    }

    /// Inverse via Cholesky; used for the sandwich covariance.
    pub fn inverse(&self) -> Result<SymMat> {
        let n = self.dim;
        let mut inv = SymMat::zeros(n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        // Symmetrize against round-off.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
            }
        }
        Ok(inv)
    }

    /// Quadratic form `cᵀ self c`.
    pub fn quad_form(&self, c: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for j in 0..self.dim {
                row += self.get(i, j) * c[j];
            }
            acc += c[i] * row;
        }
        acc
    }

    /// `self * v`.
    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[inline]
pub fn euclid_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable logistic function.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let mut a = SymMat::zeros(3);
        a.set(0, 0, 4.0);
        a.set(1, 1, 5.0);
        a.set(2, 2, 6.0);
        a.set(0, 1, 1.0);
        a.set(0, 2, 0.5);
        a.set(1, 2, 0.25);
        let x_true = [1.0, -2.0, 3.0];
        let b = a.mat_vec(&x_true);
        let x = a.solve(&b).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_names_column() {
        let mut a = SymMat::zeros(2);
        // Second column is a multiple of the first.
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 1, 4.0);
        match a.solve(&[1.0, 2.0]) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![1]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut a = SymMat::zeros(2);
        a.set(0, 0, 2.0);
        a.set(1, 1, 3.0);
        a.set(0, 1, 0.5);
        let inv = a.inverse().unwrap();
        let prod = [
            a.get(0, 0) * inv.get(0, 0) + a.get(0, 1) * inv.get(1, 0),
            a.get(0, 0) * inv.get(0, 1) + a.get(0, 1) * inv.get(1, 1),
        ];
        assert!((prod[0] - 1.0).abs() < 1e-12);
        assert!(prod[1].abs() < 1e-12);
    }

    #[test]
    fn expit_matches_definition() {
        for &x in &[-30.0, -1.0, 0.0, 2.5, 30.0] {
            let direct = 1.0 / (1.0 + (-x as f64).exp());
            assert!((expit(x) - direct).abs() < 1e-15);
        }
    }
}
