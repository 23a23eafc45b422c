//! Dense two-phase tableau simplex for small linear programs.
//!
//! Solves `min cᵀx  s.t.  A x = b, x ≥ 0`. Bland's rule is used for both
//! entering and leaving variables, so the method terminates on degenerate
//! problems. Problem sizes here are a few dozen variables at most.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    DimensionMismatch,
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpError::Infeasible => f.write_str("linear program is infeasible"),
            LpError::Unbounded => f.write_str("linear program is unbounded"),
            LpError::DimensionMismatch => f.write_str("linear program dimensions do not match"),
        }
    }
}

impl core::error::Error for LpError {}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    rows: usize,
    cols: usize,
    // (rows + 1) x (cols + 1); last row is the reduced-cost row, last column the rhs
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.at(pr, pc);
        for c in 0..w {
            *self.at_mut(pr, c) /= p;
        }
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.at(r, pc);
            if f == 0.0 {
                continue;
            }
            for c in 0..w {
                let v = self.at(pr, c);
                *self.at_mut(r, c) -= f * v;
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on columns `0..active_cols` of the current
    /// objective row. Returns `Err(Unbounded)` when a ray is found.
    fn iterate(&mut self, active_cols: usize) -> Result<(), LpError> {
        let max_iter = 50 * (self.rows + self.cols + 10);
        for _ in 0..max_iter {
            // Bland: smallest index with negative reduced cost enters
            let entering = (0..active_cols).find(|&c| self.at(self.rows, c) < -PIVOT_TOL);
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((ratio, r)),
                        Some((br, brow)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[r] < self.basis[brow]) {
                                Some((ratio, r))
                            } else {
                                Some((br, brow))
                            }
                        }
                    };
                }
            }
            let Some((_, pr)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(pr, pc);
        }
        // Bland's rule cannot cycle; hitting the cap means numerical trouble.
        Err(LpError::Unbounded)
    }
}

/// Minimizes `cᵀx` subject to `A x = b`, `x ≥ 0`, with `A` given row-major
/// as `m` rows of `c.len()` entries.
pub fn solve_standard_form(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpError> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(LpError::DimensionMismatch);
    }
    // columns: n structural, m artificial
    let cols = n + m;
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    for (r, row) in a.iter().enumerate() {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in row.iter().enumerate() {
            t[r * w + j] = sign * v;
        }
        t[r * w + n + r] = 1.0;
        t[r * w + cols] = sign * b[r];
    }
    let mut tab = Tableau { rows: m, cols, t, basis: (n..n + m).collect() };

    // phase 1 objective: sum of artificials, expressed in non-basic terms
    for c_idx in 0..w {
        let s: f64 = (0..m).map(|r| tab.at(r, c_idx)).sum();
        *tab.at_mut(m, c_idx) = if (n..n + m).contains(&c_idx) { 0.0 } else { -s };
    }
    tab.iterate(cols)?;
    let infeas = -tab.at(m, cols);
    if infeas > FEAS_TOL * (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
        return Err(LpError::Infeasible);
    }

    // drive remaining artificials out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(pc) = (0..n).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                tab.pivot(r, pc);
            }
            // otherwise the row is redundant; the artificial stays at zero
        }
    }

    // phase 2: forbid artificial columns from entering
    for c_idx in 0..w {
        *tab.at_mut(m, c_idx) = if c_idx < n { c[c_idx] } else { 0.0 };
    }
    for r in 0..m {
        let bc = tab.basis[r];
        let cost = if bc < n { c[bc] } else { 0.0 };
        if cost != 0.0 {
            for c_idx in 0..w {
                let v = tab.at(r, c_idx);
                *tab.at_mut(m, c_idx) -= cost * v;
            }
        }
    }
    tab.iterate(n)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y  s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  → (2, 6), 36
        let c = [-3.0, -5.0, 0.0, 0.0, 0.0];
        let a = vec![vec![1.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 1.0, 0.0], vec![3.0, 2.0, 0.0, 0.0, 1.0]];
        let sol = solve_standard_form(&c, &a, &[4.0, 12.0, 18.0]).unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x + y = -1 with x, y ≥ 0
        let r = solve_standard_form(&[1.0, 1.0], &[vec![1.0, 1.0]], &[-1.0]);
        assert_eq!(r.unwrap_err(), LpError::Infeasible);
        // min -x  s.t. x - y = 0
        let r = solve_standard_form(&[-1.0, 0.0], &[vec![1.0, -1.0]], &[0.0]);
        assert_eq!(r.unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let a = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let sol = solve_standard_form(&[1.0, 2.0], &a, &[1.0, 2.0]).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }
}
