//! Small dense matrices and a banded LU solver.
//!
//! The species count is small (a handful), so per-cell matrices are plain
//! row-major `Vec<f64>`. The Newton systems of the stepper are banded once
//! unknowns are ordered cell-major, which is what [`BandedMatrix`] exploits.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

/// Row-major dense square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data must hold n*n entries");
        Self { n, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += aik * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len());
        (0..self.n).map(|i| (0..self.n).map(|j| self[(i, j)] * x[j]).sum()).collect()
    }

    /// `zᵀ M z`.
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        let mz = self.mul_vec(z);
        z.iter().zip(&mz).map(|(a, b)| a * b).sum()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinalgError {
    /// Zero pivot encountered at the given elimination step.
    Singular(usize),
    DimensionMismatch,
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::Singular(k) => write!(f, "matrix is singular (zero pivot at row {k})"),
            LinalgError::DimensionMismatch => f.write_str("dimension mismatch"),
        }
    }
}

impl core::error::Error for LinalgError {}

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage keeps `kl` extra super-diagonals so that LU with partial
/// pivoting can fill in without reallocating. Row `r` stores columns
/// `r - kl ..= r + kl + ku`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.kl + self.ku);
        row * self.width + (col + self.kl - row)
    }

    /// Whether `(row, col)` lies inside the declared band.
    #[inline]
    pub fn in_band(&self, row: usize, col: usize) -> bool {
        row < self.n && col < self.n && col + self.kl >= row && col <= row + self.ku
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col + self.kl < row || col > row + self.kl + self.ku || row >= self.n || col >= self.n {
            0.0
        } else {
            self.data[self.slot(row, col)]
        }
    }

    /// Adds `v` to entry `(row, col)`. Panics when the entry is outside the band.
    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        assert!(self.in_band(row, col), "entry ({row}, {col}) outside band");
        let s = self.slot(row, col);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (r, yr) in y.iter_mut().enumerate() {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            *yr = (lo..=hi).map(|c| self.data[self.slot(r, c)] * x[c]).sum();
        }
        y
    }

    /// Solves `A x = b` in place by LU factorization with partial pivoting.
    /// The matrix is overwritten by its factors.
    pub fn solve_in_place(&mut self, b: &mut [f64]) -> Result<(), LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch);
        }
        let (kl, ku) = (self.kl, self.ku);
        let mut scale = 0.0_f64;
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        let tiny = scale * f64::EPSILON * 1e-3;

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in (k + 1)..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= tiny || best == 0.0 {
                return Err(LinalgError::Singular(k));
            }
            let last_col = (k + kl + ku).min(n - 1);
            if piv != k {
                for c in k..=last_col {
                    let (s1, s2) = (self.slot(k, c), self.slot(piv, c));
                    self.data.swap(s1, s2);
                }
                b.swap(k, piv);
            }
            let pivot = self.data[self.slot(k, k)];
            for r in (k + 1)..=last_row {
                let s = self.slot(r, k);
                let factor = self.data[s] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.data[s] = 0.0;
                for c in (k + 1)..=last_col {
                    let src = self.data[self.slot(k, c)];
                    if src != 0.0 {
                        let dst = self.slot(r, c);
                        self.data[dst] -= factor * src;
                    }
                }
                b[r] -= factor * b[k];
            }
        }

        for k in (0..n).rev() {
            let last_col = (k + kl + ku).min(n - 1);
            let mut acc = b[k];
            for c in (k + 1)..=last_col {
                acc -= self.data[self.slot(k, c)] * b[c];
            }
            b[k] = acc / self.data[self.slot(k, k)];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_of(b: &BandedMatrix) -> std::vec::Vec<std::vec::Vec<f64>> {
        (0..b.dim()).map(|r| (0..b.dim()).map(|c| b.get(r, c)).collect()).collect()
    }

    #[test]
    fn banded_solve_matches_dense_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (40, 3, 3), (37, 5, 2), (20, 0, 4)] {
            let mut a = BandedMatrix::zeros(n, kl, ku);
            for r in 0..n {
                for c in 0..n {
                    if a.in_band(r, c) {
                        a.add(r, c, rng.gen_range(-1.0..1.0));
                    }
                }
            }
            let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut b = a.mul_vec(&x_true);
            let dense = dense_of(&a);
            a.solve_in_place(&mut b).unwrap();
            // residual against the untouched dense copy
            for r in 0..n {
                let ax: f64 = (0..n).map(|c| dense[r][c] * b[c]).sum();
                let rhs: f64 = (0..n).map(|c| dense[r][c] * x_true[c]).sum();
                assert!((ax - rhs).abs() < 1e-9, "n={n} row {r}: {ax} vs {rhs}");
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut a = BandedMatrix::zeros(2, 1, 1);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        let mut b = vec![3.0, 4.0];
        a.solve_in_place(&mut b).unwrap();
        assert_eq!(b, vec![4.0, 3.0]);
    }

    #[test]
    fn singular_is_reported() {
        let mut a = BandedMatrix::zeros(3, 1, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        let mut b = vec![1.0; 3];
        assert_eq!(a.solve_in_place(&mut b), Err(LinalgError::Singular(2)));
    }

    #[test]
    fn dense_quadratic_form() {
        let m = DenseMatrix::from_rows(2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.quadratic_form(&[1.0, 1.0]), 10.0);
        let id = DenseMatrix::diagonal(&[1.0, 1.0]);
        assert_eq!(m.mul(&id), m);
    }
}
