//! Small dense column-major matrix used for dictionaries.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    /// Column-major storage.
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// # Panics
    /// If the columns do not all have the same length.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Self {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            assert_eq!(c.len(), rows, "ragged columns");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.column(j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (col, &coef) in self.columns().zip(v) {
            if coef != 0.0 {
                for (o, c) in out.iter_mut().zip(col) {
                    *o += coef * c;
                }
            }
        }
        out
    }

    /// `selfᵀ * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        self.columns().map(|col| dot(col, v)).collect()
    }

    /// `selfᵀ * self`, symmetric `cols × cols`.
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = dot(self.column(i), self.column(j));
                g.data[j * p + i] = v;
                g.data[i * p + j] = v;
            }
        }
        g
    }

    /// Largest eigenvalue of a symmetric positive semidefinite matrix by
    /// power iteration, to `rel_tol` relative change.
    pub fn largest_eigenvalue(&self, rel_tol: f64, max_iter: usize) -> f64 {
        let n = self.cols;
        if n == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let norm = norm2(&v);
        v.iter_mut().for_each(|x| *x /= norm);
        let mut est = 0.0;
        for _ in 0..max_iter {
            let w = self.mul_vec(&v);
            let next = dot(&v, &w);
            let wn = norm2(&w);
            if wn == 0.0 {
                return 0.0;
            }
            v = w.into_iter().map(|x| x / wn).collect();
            if (next - est).abs() <= rel_tol * next.abs() {
                return next.max(wn);
            }
            est = next;
        }
        est
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
