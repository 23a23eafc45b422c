//! Diffusion coefficients of the SKT system and their structural certificates.
//!
//! Three sufficient conditions for the entropy structure are decided here:
//!
//! - detailed balance: `π_i a_ij = π_j a_ji` for some `π > 0`;
//! - the weak cross-diffusion test `4 a_ii > Σ_j (√a_ij − √a_ji)²`;
//! - the logarithmic-entropy margin
//!   `κ(π) = min_i (8 π_i a_ii − Σ_{j≠i} π_j a_ji) > 0`, searched for with a
//!   linear program over the simplex `Σ π = 1`.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::DenseMatrix;
use crate::lp::{self, LpError};
use crate::math;

/// Lower bound on each `π_i` inside the max-κ linear program.
pub const PI_MIN: f64 = 1e-9;
/// Lower bound on each `μ_i`; keeps `ε A⁰` from vanishing for diagonal `a`.
pub const MU_FLOOR: f64 = 1e-8;
/// Default absolute tolerance for the detailed-balance residual (after `Σπ = 1`).
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;
/// An LP optimum `t*` counts as positive only above this value.
pub const KAPPA_FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum CoeffError {
    EmptySystem,
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// A coefficient was negative, NaN or infinite.
    InvalidCoefficient {
        what: &'static str,
        index: usize,
        value: f64,
    },
    NonPositiveWeight {
        index: usize,
        value: f64,
    },
    NonPositiveTolerance(f64),
    /// `η₀` needs `a_i0 > 0` for every species.
    Eta0Undefined {
        species: usize,
    },
    NonPositiveInput {
        index: usize,
        value: f64,
    },
    /// `μ_i` is below `Σ_{j≠i}(a_ij + a_ji)/2`.
    MuTooSmall {
        species: usize,
        mu: f64,
        required: f64,
    },
}

impl fmt::Display for CoeffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoeffError::EmptySystem => f.write_str("species count must be at least 1"),
            CoeffError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            CoeffError::InvalidCoefficient { what, index, value } => {
                write!(f, "coefficient {what}[{index}] = {value} must be finite and nonnegative")
            }
            CoeffError::NonPositiveWeight { index, value } => {
                write!(f, "weight pi[{index}] = {value} must be positive")
            }
            CoeffError::NonPositiveTolerance(t) => write!(f, "tolerance {t} must be positive"),
            CoeffError::Eta0Undefined { species } => {
                write!(f, "eta0 undefined: requires a_i0 > 0 (species {species})")
            }
            CoeffError::NonPositiveInput { index, value } => {
                write!(f, "input {index} = {value} must be positive")
            }
            CoeffError::MuTooSmall { species, mu, required } => {
                write!(f, "mu[{species}] = {mu} is below the required {required}")
            }
        }
    }
}

impl core::error::Error for CoeffError {}

/// Diffusion data `(a_ij)`, `(a_i0)` of an `n`-species system.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    n: usize,
    a: DenseMatrix,
    a0: Vec<f64>,
}

impl CoefficientSet {
    /// Builds a coefficient set from a row-major `n × n` matrix and `a0`.
    pub fn new(a: Vec<f64>, a0: Vec<f64>) -> Result<Self, CoeffError> {
        let n = a0.len();
        if n == 0 {
            return Err(CoeffError::EmptySystem);
        }
        if a.len() != n * n {
            return Err(CoeffError::DimensionMismatch { expected: n * n, found: a.len() });
        }
        for (index, &value) in a.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoeffError::InvalidCoefficient { what: "a", index, value });
            }
        }
        for (index, &value) in a0.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoeffError::InvalidCoefficient { what: "a0", index, value });
            }
        }
        Ok(Self { n, a: DenseMatrix::from_rows(n, a), a0 })
    }

    /// The three-species cyclic example `a_13 = a_21 = a_32 = 1`,
    /// `a_12 = a_23 = a_31 = 0`, with the given diagonal and linear diffusion.
    pub fn cyclic3(diag: [f64; 3], a0: [f64; 3]) -> Result<Self, CoeffError> {
        #[rustfmt::skip]
        let a = vec![
            diag[0], 0.0,     1.0,
            1.0,     diag[1], 0.0,
            0.0,     1.0,     diag[2],
        ];
        Self::new(a, a0.to_vec())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// `a_ij`.
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[(i, j)]
    }

    /// `a_i0`.
    #[inline]
    pub fn a0(&self, i: usize) -> f64 {
        self.a0[i]
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn linear_diffusion(&self) -> &[f64] {
        &self.a0
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.a(i, j) == self.a(j, i)))
    }
}

/// Entropy-structure certificate: weights `π`, regularization weights `μ`,
/// and the resulting margin `κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyWeights {
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub kappa: f64,
}

impl EntropyWeights {
    /// Pairs `π` with `coeffs`, using [`mu_defaults`] and recomputing `κ`.
    pub fn for_coefficients(coeffs: &CoefficientSet, pi: Vec<f64>) -> Result<Self, CoeffError> {
        let kappa = kappa(coeffs, &pi)?;
        Ok(Self { mu: mu_defaults(coeffs), pi, kappa })
    }

    /// Checks the invariants of the weights against `coeffs`.
    pub fn validate(&self, coeffs: &CoefficientSet) -> Result<(), CoeffError> {
        check_pi(coeffs, &self.pi)?;
        if self.mu.len() != coeffs.n() {
            return Err(CoeffError::DimensionMismatch { expected: coeffs.n(), found: self.mu.len() });
        }
        for (i, &mu) in self.mu.iter().enumerate() {
            let required = mu_requirement(coeffs, i);
            if !(mu >= required) || mu <= 0.0 {
                return Err(CoeffError::MuTooSmall { species: i, mu, required });
            }
        }
        Ok(())
    }
}

fn check_pi(coeffs: &CoefficientSet, pi: &[f64]) -> Result<(), CoeffError> {
    if pi.len() != coeffs.n() {
        return Err(CoeffError::DimensionMismatch { expected: coeffs.n(), found: pi.len() });
    }
    for (index, &value) in pi.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CoeffError::NonPositiveWeight { index, value });
        }
    }
    Ok(())
}

/// `8 π_i a_ii − Σ_{j≠i} π_j a_ji` for one species.
fn kappa_row(coeffs: &CoefficientSet, pi: &[f64], i: usize) -> f64 {
    let cross: f64 = (0..coeffs.n()).filter(|&j| j != i).map(|j| pi[j] * coeffs.a(j, i)).sum();
    8.0 * pi[i] * coeffs.a(i, i) - cross
}

/// `κ = min_i (8 π_i a_ii − Σ_{j≠i} π_j a_ji)`.
pub fn kappa(coeffs: &CoefficientSet, pi: &[f64]) -> Result<f64, CoeffError> {
    check_pi(coeffs, pi)?;
    Ok((0..coeffs.n()).map(|i| kappa_row(coeffs, pi, i)).fold(f64::INFINITY, f64::min))
}

/// Searches for `π > 0` with `π_i a_ij = π_j a_ji`.
///
/// Ratios are propagated along the undirected graph of nonzero couplings,
/// one connected component at a time (each component rooted at weight 1),
/// then normalized to `Σπ = 1`. A one-way coupling (`a_ij > 0 = a_ji`) or an
/// inconsistent cycle means no such `π` exists.
pub fn check_detailed_balance(coeffs: &CoefficientSet, tol: f64) -> Result<Option<Vec<f64>>, CoeffError> {
    if !(tol > 0.0) {
        return Err(CoeffError::NonPositiveTolerance(tol));
    }
    let n = coeffs.n();
    let mut pi = vec![0.0_f64; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        pi[root] = 1.0;
        queue.push_back(root);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (aij, aji) = (coeffs.a(i, j), coeffs.a(j, i));
                if aij == 0.0 && aji == 0.0 {
                    continue;
                }
                if aij == 0.0 || aji == 0.0 {
                    return Ok(None);
                }
                if !seen[j] {
                    seen[j] = true;
                    pi[j] = pi[i] * aij / aji;
                    queue.push_back(j);
                }
            }
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    // cycle consistency shows up as a nonzero residual
    let residual = detailed_balance_residual(coeffs, &pi);
    Ok((residual <= tol).then_some(pi))
}

/// `max_{i,j} |π_i a_ij − π_j a_ji|`.
pub fn detailed_balance_residual(coeffs: &CoefficientSet, pi: &[f64]) -> f64 {
    let n = coeffs.n();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((pi[i] * coeffs.a(i, j) - pi[j] * coeffs.a(j, i)).abs());
        }
    }
    worst
}

/// `4 a_ii > Σ_j (√a_ij − √a_ji)²` for every `i`.
pub fn check_wcd(coeffs: &CoefficientSet) -> bool {
    let n = coeffs.n();
    (0..n).all(|i| {
        let s: f64 = (0..n)
            .map(|j| {
                let d = math::sqrt(coeffs.a(i, j)) - math::sqrt(coeffs.a(j, i));
                d * d
            })
            .sum();
        4.0 * coeffs.a(i, i) > s
    })
}

/// Optimum of the max-κ linear program.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxKappa {
    pub pi: Vec<f64>,
    /// LP optimum `t*` (under `Σπ = 1`, `π ≥ PI_MIN`).
    pub t: f64,
}

/// Solves `max t` s.t. `8 π_i a_ii − Σ_{j≠i} π_j a_ji ≥ t`, `Σπ = 1`,
/// `π_i ≥ PI_MIN`.
pub fn max_kappa_lp(coeffs: &CoefficientSet) -> MaxKappa {
    let n = coeffs.n();
    // variables: p_0..p_{n-1} (π = PI_MIN + p), t⁺, t⁻, slack_0..slack_{n-1}
    let nv = 2 * n + 2;
    let (tp, tm) = (n, n + 1);
    let mut c = vec![0.0; nv];
    c[tp] = -1.0;
    c[tm] = 1.0;
    let mut rows = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    for i in 0..n {
        // t − 8 a_ii π_i + Σ_{j≠i} a_ji π_j + s_i = 0
        let mut row = vec![0.0; nv];
        row[tp] = 1.0;
        row[tm] = -1.0;
        let mut b = 0.0;
        for j in 0..n {
            let coef = if j == i { -8.0 * coeffs.a(i, i) } else { coeffs.a(j, i) };
            row[j] = coef;
            b -= coef * PI_MIN;
        }
        row[2 + n + i] = 1.0;
        rows.push(row);
        rhs.push(b);
    }
    let mut sum_row = vec![0.0; nv];
    sum_row[..n].iter_mut().for_each(|v| *v = 1.0);
    rows.push(sum_row);
    rhs.push(1.0 - n as f64 * PI_MIN);

    match lp::solve_standard_form(&c, &rows, &rhs) {
        Ok(sol) => {
            let pi: Vec<f64> = sol.x[..n].iter().map(|p| PI_MIN + p).collect();
            MaxKappa { t: -sol.objective, pi }
        }
        // the feasible set is a nonempty bounded simplex; keep a safe fallback
        Err(LpError::Infeasible | LpError::Unbounded | LpError::DimensionMismatch) => {
            let pi = vec![1.0 / n as f64; n];
            let t = (0..n).map(|i| kappa_row(coeffs, &pi, i)).fold(f64::INFINITY, f64::min);
            MaxKappa { pi, t }
        }
    }
}

/// Weights maximizing `κ` over the simplex; `None` when the optimum is not positive.
pub fn find_pi_max_kappa(coeffs: &CoefficientSet) -> Option<EntropyWeights> {
    let MaxKappa { pi, t } = max_kappa_lp(coeffs);
    if t <= KAPPA_FEASIBILITY_TOL {
        return None;
    }
    let kappa = (0..coeffs.n()).map(|i| kappa_row(coeffs, &pi, i)).fold(f64::INFINITY, f64::min);
    Some(EntropyWeights { mu: mu_defaults(coeffs), pi, kappa })
}

/// Closed-form weights for the cyclic three-species matrix:
/// `π₁ = 1`, `π₂ = (8a₁₁ + 1/(64 a₂₂ a₃₃))/2`, `π₃ = (8π₂a₂₂ + 1/(8a₃₃))/2`.
/// Present exactly when `a₁₁a₂₂a₃₃ > 8⁻³`.
pub fn cyclic3_pi(a11: f64, a22: f64, a33: f64) -> Result<Option<[f64; 3]>, CoeffError> {
    for (index, value) in [a11, a22, a33].into_iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CoeffError::NonPositiveInput { index, value });
        }
    }
    if !(512.0 * a11 * a22 * a33 > 1.0) {
        return Ok(None);
    }
    let pi2 = 0.5 * (8.0 * a11 + 1.0 / (64.0 * a22 * a33));
    let pi3 = 0.5 * (8.0 * pi2 * a22 + 1.0 / (8.0 * a33));
    Ok(Some([1.0, pi2, pi3]))
}

fn mu_requirement(coeffs: &CoefficientSet, i: usize) -> f64 {
    let s: f64 = (0..coeffs.n()).filter(|&j| j != i).map(|j| coeffs.a(i, j) + coeffs.a(j, i)).sum();
    0.5 * s
}

/// `μ_i = max(Σ_{j≠i}(a_ij + a_ji)/2, MU_FLOOR)`.
pub fn mu_defaults(coeffs: &CoefficientSet) -> Vec<f64> {
    (0..coeffs.n()).map(|i| mu_requirement(coeffs, i).max(MU_FLOOR)).collect()
}

/// `η₀ = min_i a_i0 / Σ_j a_ij (1 + δ_ij)`.
///
/// A species whose row of `a` vanishes puts no constraint on the shift; if
/// every row vanishes the result is `f64::INFINITY` (unbounded).
pub fn eta0(coeffs: &CoefficientSet) -> Result<f64, CoeffError> {
    let n = coeffs.n();
    if let Some(species) = (0..n).find(|&i| coeffs.a0(i) <= 0.0) {
        return Err(CoeffError::Eta0Undefined { species });
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let denom: f64 = (0..n).map(|j| coeffs.a(i, j) * if i == j { 2.0 } else { 1.0 }).sum();
        if denom > 0.0 {
            best = best.min(coeffs.a0(i) / denom);
        }
    }
    Ok(best)
}
