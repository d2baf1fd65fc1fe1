//! Compressed-row sparse matrices with the operations assembly and the
//! iterative solvers need. Column indices are sorted within each row and the
//! sparsity pattern is fixed at construction, so accumulation is a binary
//! search plus an add.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an all-zero matrix from per-row column lists; columns are
    /// sorted and deduplicated.
    pub fn from_pattern(n: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.vals.copy_from_slice(diag);
        m
    }

    /// Dense constructor for tests and small dense workloads; entries with
    /// magnitude 0 are kept to preserve a full pattern.
    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in a {
            assert_eq!(row.len(), n);
            for (j, &v) in row.iter().enumerate() {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Adds `v` to entry (i, j); the position must exist in the pattern.
    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let idx = self.cols[lo..hi]
            .binary_search(&j)
            .unwrap_or_else(|_| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.vals[lo + idx] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals.iter()) {
                s += v * x[*c];
            }
            y[i] = s;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n];
        for &c in &self.cols {
            counts[c] += 1;
        }
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        row_ptr.push(0);
        for i in 0..self.n {
            row_ptr.push(row_ptr[i] + counts[i]);
        }
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = row_ptr.clone();
        for i in 0..self.n {
            let (rc, rv) = self.row(i);
            for (c, v) in rc.iter().zip(rv.iter()) {
                let dst = next[*c];
                cols[dst] = i;
                vals[dst] = *v;
                next[*c] += 1;
            }
        }
        // rows come out sorted because the outer loop visits rows in order
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// `self += s * other`; both matrices must share the same pattern.
    pub fn add_scaled(&mut self, s: f64, other: &CsrMatrix) {
        assert_eq!(self.row_ptr, other.row_ptr);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.vals.iter_mut().zip(other.vals.iter()) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        for v in m.vals.iter_mut() {
            *v *= s;
        }
        m
    }

    pub fn zero_like(&self) -> CsrMatrix {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v = 0.0);
        m
    }

    /// max_i sum_j |a_ij|
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute asymmetry max |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals.iter()) {
                worst = worst.max((v - self.get(*c, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals.iter()) {
                d[i][*c] = *v;
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// One forward Gauss-Seidel substitution `z = (D + L)^{-1} r` in
    /// ascending row order. Fails if a diagonal entry is missing or zero.
    pub fn gauss_seidel_forward(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut s = r[i];
            let mut diag = 0.0;
            for (c, v) in cols.iter().zip(vals.iter()) {
                if *c < i {
                    s -= v * z[*c];
                } else if *c == i {
                    diag = *v;
                }
            }
            if diag == 0.0 {
                return Err(Error::Preconditioner(format!(
                    "zero diagonal entry in row {i}"
                )));
            }
            z[i] = s / diag;
        }
        Ok(())
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn to_matrix_market(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.n, self.n, self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals.iter()) {
                let _ = writeln!(out, "{} {} {:.17e}", i + 1, c + 1, v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        let mut m = CsrMatrix::from_pattern(
            3,
            vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]],
        );
        m.add_to(0, 0, 2.0);
        m.add_to(0, 1, -1.0);
        m.add_to(1, 0, -1.0);
        m.add_to(1, 1, 2.0);
        m.add_to(1, 2, -1.0);
        m.add_to(2, 1, -1.0);
        m.add_to(2, 2, 2.0);
        m
    }

    #[test]
    fn matvec_and_transpose() {
        let m = sample();
        let y = m.matvec_alloc(&[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![0.0, 0.0, 4.0]);
        let t = m.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), t.get(j, i));
            }
        }
        assert_eq!(m.asymmetry(), 0.0);
    }

    #[test]
    fn gauss_seidel_lower_solve() {
        let m = sample();
        let mut z = vec![0.0; 3];
        m.gauss_seidel_forward(&[2.0, 1.0, 4.0], &mut z).unwrap();
        // forward substitution with (D + L)
        assert!((z[0] - 1.0).abs() < 1e-15);
        assert!((z[1] - 1.0).abs() < 1e-15);
        assert!((z[2] - 2.5).abs() < 1e-15);

        let bad = CsrMatrix::from_pattern(2, vec![vec![0], vec![0]]);
        let mut z = vec![0.0; 2];
        assert!(matches!(
            bad.gauss_seidel_forward(&[1.0, 1.0], &mut z),
            Err(Error::Preconditioner(_))
        ));
    }

    #[test]
    fn matrix_market_roundtrip() {
        let m = sample();
        let text = m.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
        let mut lines = text.lines().skip(1);
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(header, vec![3, 3, 7]);
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let i: usize = parts[0].parse::<usize>().unwrap() - 1;
            let j: usize = parts[1].parse::<usize>().unwrap() - 1;
            let v: f64 = parts[2].parse().unwrap();
            assert_eq!(v, m.get(i, j));
        }
    }
}
