//! Dense square matrices and Cholesky factorisation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "{n}x{n} matrix needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, eps: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += eps;
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = A`, stored densely row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    /// Returns `None` if a non-positive pivot is met.
    pub fn factor(a: &SquareMatrix) -> Option<Cholesky> {
        let n = a.n;
        let mut l = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let (li, lj) = (i * n, j * n);
                let dot: f64 = l.data[li..li + j]
                    .iter()
                    .zip(&l.data[lj..lj + j])
                    .map(|(x, y)| x * y)
                    .sum();
                let s = a.data[li + j] - dot;
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l.data[li + i] = s.sqrt();
                } else {
                    l.data[li + j] = s / l.data[lj + j];
                }
            }
        }
        Some(Cholesky { l })
    }

    pub fn n(&self) -> usize {
        self.l.n
    }

    pub fn lower(&self) -> &SquareMatrix {
        &self.l
    }

    /// In place: `b <- L⁻¹ b`.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.l.n;
        for i in 0..n {
            let row = &self.l.data[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l.data[i * n + i];
        }
    }

    /// In place: `b <- L⁻ᵀ b`.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.l.n;
        for i in (0..n).rev() {
            b[i] /= self.l.data[i * n + i];
            let bi = b[i];
            for (k, bk) in b.iter_mut().enumerate().take(i) {
                *bk -= self.l.data[i * n + k] * bi;
            }
        }
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        (0..n)
            .map(|i| {
                self.l.data[i * n..i * n + i + 1]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.l.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = self.l.row(i)[..=j]
                    .iter()
                    .zip(&self.l.row(j)[..=j])
                    .map(|(a, b)| a * b)
                    .sum();
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}
