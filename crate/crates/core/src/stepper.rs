//! Regularized implicit Euler scheme in entropy variables.
//!
//! Each step finds cell values `w` of the entropy variable such that, with
//! `u = (h′_ε)⁻¹(w)`,
//!
//! ```text
//!   (u − u_prev)/τ = div_h(A_ε(u)∇_h u) − δ(−Δ_h w + w)
//! ```
//!
//! with zero flux through the boundary for both operators. Because `u` is
//! recovered from `w`, every accepted state is strictly positive. The
//! nonlinear system is solved by damped Newton with an analytic Jacobian;
//! unknowns are ordered cell-major, which makes the Jacobian banded.
//!
//! Summation by parts plus convexity of `h_ε` give the discrete entropy
//! inequality
//!
//! ```text
//!   ∫h_ε(u) + τ·D + δτ·(‖∇_h w‖² + ‖w‖²) ≤ ∫h_ε(u_prev),
//!   D = Σ_faces |f|·Δx · ∇_h w · F,
//! ```
//!
//! which [`verify_entropy_step`] checks a posteriori.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::coeffmodel::{self, CoefficientSet, EntropyWeights};
use crate::entropy::{
    self, csiszar_kullback_rhs, h_eps_prime_scalar, h_eps_scalar, h_eps_second_scalar, invert_h_eps_prime_scalar,
    EntropyError, RegularizationParams,
};
use crate::grid::{self, Grid, GridError, SpeciesField};
use crate::linalg::{BandedMatrix, DenseMatrix, LinalgError};
use crate::math;

/// Initial data are clamped into `[INITIAL_CLIP, 1/INITIAL_CLIP]`.
pub const INITIAL_CLIP: f64 = 1e-8;
/// Smallest sub-step, relative to the configured `τ`.
pub const TAU_FLOOR_FACTOR: f64 = 1e-8;
/// Tolerance on the dissipation sign, relative to `1 + |∫h_ε|`.
pub const DISSIPATION_TOL: f64 = 1e-12;
/// Tolerance on relative-entropy increase, relative to `1 + H_η`.
pub const REL_ENTROPY_TOL: f64 = 1e-10;

const MAX_HALVINGS: usize = 30;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum StepError {
    InvalidConfig {
        name: &'static str,
        value: f64,
    },
    /// Tied-delta mode (δ = ε) is a one-dimensional scheme.
    ModeNeedsOneDimension,
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    NonPositiveState {
        species: usize,
        cell: usize,
        value: f64,
    },
    NewtonDiverged {
        iters: usize,
        residual: f64,
    },
    LineSearchFailed {
        iter: usize,
        residual: f64,
    },
    NonFinite {
        iter: usize,
    },
    Linalg(LinalgError),
    Grid(GridError),
    Entropy(EntropyError),
    /// The ε list of a de-regularization study is empty, unsorted or nonpositive.
    InvalidEpsList,
    /// Snapshot sequences do not live on the same grid and times.
    TrajectoryMismatch,
}

impl StepError {
    /// Errors after which a smaller time step may succeed.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            StepError::NewtonDiverged { .. }
                | StepError::LineSearchFailed { .. }
                | StepError::NonFinite { .. }
                | StepError::Linalg(_)
        )
    }
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::InvalidConfig { name, value } => write!(f, "invalid scheme setting {name} = {value}"),
            StepError::ModeNeedsOneDimension => f.write_str("tied-delta mode requires a one-dimensional grid"),
            StepError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            StepError::NonPositiveState { species, cell, value } => {
                write!(f, "species {species}, cell {cell}: state {value} must be positive")
            }
            StepError::NewtonDiverged { iters, residual } => {
                write!(f, "Newton did not converge in {iters} iterations (residual {residual:e})")
            }
            StepError::LineSearchFailed { iter, residual } => {
                write!(f, "line search failed at Newton iteration {iter} (residual {residual:e})")
            }
            StepError::NonFinite { iter } => write!(f, "nonfinite value at Newton iteration {iter}"),
            StepError::Linalg(e) => write!(f, "{e}"),
            StepError::Grid(e) => write!(f, "{e}"),
            StepError::Entropy(e) => write!(f, "{e}"),
            StepError::InvalidEpsList => f.write_str("eps list must be nonempty, positive and non-increasing"),
            StepError::TrajectoryMismatch => f.write_str("trajectories are not sampled on the same grid and times"),
        }
    }
}

impl core::error::Error for StepError {}

impl From<LinalgError> for StepError {
    fn from(e: LinalgError) -> Self {
        StepError::Linalg(e)
    }
}

impl From<GridError> for StepError {
    fn from(e: GridError) -> Self {
        StepError::Grid(e)
    }
}

impl From<EntropyError> for StepError {
    fn from(e: EntropyError) -> Self {
        StepError::Entropy(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// Bound on `max|R| / max(1, max u_prev)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking factor of the line search.
    pub damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-13, max_iters: 50, damping: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SchemeMode {
    #[default]
    Standard,
    /// One-dimensional simplification with `δ = ε`.
    TiedDelta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyCheckConfig {
    pub enabled: bool,
    /// Allowed excess relative to `1 + |∫h_ε|`.
    pub slack: f64,
}

impl Default for EntropyCheckConfig {
    fn default() -> Self {
        Self { enabled: true, slack: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeConfig {
    pub reg: RegularizationParams,
    pub newton: NewtonConfig,
    pub mode: SchemeMode,
    pub entropy_check: EntropyCheckConfig,
}

impl SchemeConfig {
    pub fn new(reg: RegularizationParams) -> Self {
        Self {
            reg,
            newton: NewtonConfig::default(),
            mode: SchemeMode::Standard,
            entropy_check: EntropyCheckConfig::default(),
        }
    }

    pub fn with_mode(mut self, mode: SchemeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), StepError> {
        self.reg.validate()?;
        if !(self.reg.eps > 0.0) {
            return Err(StepError::InvalidConfig { name: "eps", value: self.reg.eps });
        }
        if !(self.newton.tol > 0.0 && self.newton.tol.is_finite()) {
            return Err(StepError::InvalidConfig { name: "newton.tol", value: self.newton.tol });
        }
        if self.newton.max_iters == 0 {
            return Err(StepError::InvalidConfig { name: "newton.max_iters", value: 0.0 });
        }
        if !(self.newton.damping > 0.0 && self.newton.damping < 1.0) {
            return Err(StepError::InvalidConfig { name: "newton.damping", value: self.newton.damping });
        }
        if !(self.entropy_check.slack >= 0.0 && self.entropy_check.slack.is_finite()) {
            return Err(StepError::InvalidConfig { name: "entropy_check.slack", value: self.entropy_check.slack });
        }
        Ok(())
    }

    /// Parameters actually used: tied-delta mode replaces `δ` by `ε`.
    pub fn effective_reg(&self) -> RegularizationParams {
        let mut r = self.reg;
        if self.mode == SchemeMode::TiedDelta {
            r.delta = r.eps;
        }
        r
    }
}

/// Outcome of [`verify_entropy_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyCheck {
    pub passed: bool,
    /// `∫h_ε(u_prev) + slack − (∫h_ε(u) + τD + δτ·R_δ)`; negative on failure.
    pub margin: f64,
}

/// Duality functionals of one species: `∫|∇ψ|²` with `−Δψ = u − ū`, and
/// `∫u²p(u)` together with its lower bound `a_ii ∫u³`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityRecord {
    pub grad_psi_sq: f64,
    pub cubic: f64,
    pub self_cubic: f64,
    /// Whether `u²p(u) ≥ a_ii u³` held in every cell.
    pub pointwise_ok: bool,
}

/// Relative entropy against the current mean state.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeEntropyRecord {
    pub eta: f64,
    pub means: Vec<f64>,
    pub measure: f64,
    /// `Σ π_i H_i`.
    pub total: f64,
    /// Unweighted per-species `H_i`.
    pub per_species: Vec<f64>,
    /// `‖u_i − ū_i‖_{L¹}`.
    pub l1_distance: Vec<f64>,
    /// Csiszár–Kullback bound on `l1_distance`, per species.
    pub ck_rhs: Vec<f64>,
}

impl RelativeEntropyRecord {
    /// Bound check with a rounding allowance of `1e-12` relative plus
    /// `1e-14·(ū+η)|Ω|` absolute, which only matters at equilibrium.
    pub fn ck_holds(&self) -> bool {
        self.l1_distance
            .iter()
            .zip(&self.ck_rhs)
            .zip(&self.means)
            .all(|((d, r), m)| *d <= r * (1.0 + 1e-12) + 1e-14 * (m + self.eta) * self.measure)
    }
}

/// A-priori-estimate monitors, instantaneous and accumulated over time.
#[derive(Clone, Debug, PartialEq)]
pub struct Monitors {
    pub norms: Vec<grid::Norms>,
    pub fisher: Vec<f64>,
    pub duality: Vec<DualityRecord>,
    /// `∫₀ᵗ∫ u_i³`.
    pub l3_cubed_accum: Vec<f64>,
    /// `∫₀ᵗ∫ |∇√u_i|²`.
    pub fisher_accum: Vec<f64>,
    pub grad_psi_accum: Vec<f64>,
    /// `∫₀ᵗ∫ u_i² p_i(u)`.
    pub cubic_accum: Vec<f64>,
    /// `∫₀ᵗ∫ a_ii u_i³`.
    pub self_cubic_accum: Vec<f64>,
    pub relative_entropy: Option<RelativeEntropyRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub tau: f64,
    /// Index of the `τ`-grid time this step lands on, if any.
    pub macro_step: Option<usize>,
    pub entropy_heps: f64,
    /// `D = Σ_faces |f|·Δx·∇_h w·F ≥ 0` in the continuum.
    pub entropy_dissipation: f64,
    /// `δ(‖∇_h w‖² + ‖w‖²)`.
    pub delta_term: f64,
    pub mass: Vec<f64>,
    /// `−δτ∫w_i`.
    pub mass_drift_predicted: Vec<f64>,
    /// `max_i |Δmass_i − predicted_i| / mass_i`.
    pub mass_identity_error: f64,
    pub newton_iters: usize,
    pub newton_residual: f64,
    pub min_density: f64,
    pub entropy_check: Option<EntropyCheck>,
    pub monitors: Option<Monitors>,
}

impl StepReport {
    pub fn dissipation_ok(&self) -> bool {
        self.entropy_dissipation >= -DISSIPATION_TOL * (1.0 + self.entropy_heps.abs())
    }
}

/// Result of one accepted implicit step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: SpeciesField,
    /// Entropy variables, species-major like the field.
    pub w: Vec<f64>,
    pub report: StepReport,
}

// ---------------------------------------------------------------------------
// discrete problem

struct Problem<'a> {
    grid: &'a Grid,
    coeffs: &'a CoefficientSet,
    pi: &'a [f64],
    /// `ε μ_i / π_i`.
    eps_mu_pi: Vec<f64>,
    reg: RegularizationParams,
    n: usize,
    cells: usize,
    vol: f64,
}

impl<'a> Problem<'a> {
    fn new(grid: &'a Grid, coeffs: &'a CoefficientSet, weights: &'a EntropyWeights, reg: RegularizationParams) -> Self {
        let n = coeffs.n();
        Self {
            grid,
            coeffs,
            pi: &weights.pi,
            eps_mu_pi: (0..n).map(|i| reg.eps * weights.mu[i] / weights.pi[i]).collect(),
            reg,
            n,
            cells: grid.total_cells(),
            vol: grid.cell_volume(),
        }
    }

    /// `A_ε` at the arithmetic face mean of cells `l`, `r` (cell-major `u`),
    /// together with the mean and the face gradient.
    fn face_state(
        &self,
        u: &[f64],
        l: usize,
        r: usize,
        spacing: f64,
        a: &mut DenseMatrix,
        mid: &mut [f64],
        g: &mut [f64],
    ) {
        let n = self.n;
        for i in 0..n {
            let (ul, ur) = (u[l * n + i], u[r * n + i]);
            mid[i] = 0.5 * (ul + ur);
            g[i] = (ur - ul) / spacing;
        }
        entropy::fill_diffusion_a(mid, self.coeffs, a);
        for i in 0..n {
            a[(i, i)] += self.eps_mu_pi[i] * mid[i] * mid[i];
        }
    }

    /// Face fluxes, face-major.
    fn fluxes(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut a = DenseMatrix::zeros(n);
        let mut mid = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut out = Vec::with_capacity(self.grid.faces().len() * n);
        for f in self.grid.faces() {
            self.face_state(u, f.left, f.right, f.spacing, &mut a, &mut mid, &mut g);
            for i in 0..n {
                out.push((0..n).map(|j| a[(i, j)] * g[j]).sum());
            }
        }
        out
    }

    /// Residual `u − prev − τ div_h F + δτ(−Δ_h w + w)`, cell-major.
    fn residual(&self, u: &[f64], w: &[f64], prev: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (tau, delta) = (self.reg.tau, self.reg.delta);
        for k in 0..out.len() {
            out[k] = u[k] - prev[k] + delta * tau * w[k];
        }
        let mut a = DenseMatrix::zeros(n);
        let mut mid = vec![0.0; n];
        let mut g = vec![0.0; n];
        for f in self.grid.faces() {
            self.face_state(u, f.left, f.right, f.spacing, &mut a, &mut mid, &mut g);
            let c = tau * f.area / self.vol;
            let d = delta * tau * f.area / (self.vol * f.spacing);
            for i in 0..n {
                let flux: f64 = (0..n).map(|j| a[(i, j)] * g[j]).sum();
                let q = d * (w[f.left * n + i] - w[f.right * n + i]);
                out[f.left * n + i] += -c * flux + q;
                out[f.right * n + i] += c * flux - q;
            }
        }
    }

    fn bandwidth(&self) -> usize {
        self.n * self.grid.cell_bandwidth() + self.n - 1
    }

    /// `∂R/∂w` at `(u, w)`.
    fn jacobian(&self, u: &[f64], jac: &mut BandedMatrix) {
        let n = self.n;
        let (tau, delta, eps) = (self.reg.tau, self.reg.delta, self.reg.eps);
        jac.clear();
        let dudw: Vec<f64> =
            u.iter().enumerate().map(|(k, &uk)| 1.0 / h_eps_second_scalar(uk, self.pi[k % n], eps)).collect();
        for (k, &d) in dudw.iter().enumerate() {
            jac.add(k, k, d + delta * tau);
        }
        let mut a = DenseMatrix::zeros(n);
        let mut mid = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut da = DenseMatrix::zeros(n);
        for f in self.grid.faces() {
            let (l, r) = (f.left, f.right);
            self.face_state(u, l, r, f.spacing, &mut a, &mut mid, &mut g);
            // da[i][k] = Σ_j ∂A_ε,ij/∂u_k · g_j
            for i in 0..n {
                let row: f64 = (0..n).map(|j| self.coeffs.a(i, j) * g[j]).sum();
                for k in 0..n {
                    da[(i, k)] = self.coeffs.a(i, k) * g[i];
                }
                da[(i, i)] += row + 2.0 * self.eps_mu_pi[i] * mid[i] * g[i];
            }
            let c = tau * f.area / self.vol;
            for i in 0..n {
                for k in 0..n {
                    let dl = (0.5 * da[(i, k)] - a[(i, k)] / f.spacing) * dudw[l * n + k];
                    let dr = (0.5 * da[(i, k)] + a[(i, k)] / f.spacing) * dudw[r * n + k];
                    jac.add(l * n + i, l * n + k, -c * dl);
                    jac.add(l * n + i, r * n + k, -c * dr);
                    jac.add(r * n + i, l * n + k, c * dl);
                    jac.add(r * n + i, r * n + k, c * dr);
                }
            }
            if delta > 0.0 {
                let d = delta * tau * f.area / (self.vol * f.spacing);
                for i in 0..n {
                    let (li, ri) = (l * n + i, r * n + i);
                    jac.add(li, li, d);
                    jac.add(li, ri, -d);
                    jac.add(ri, ri, d);
                    jac.add(ri, li, -d);
                }
            }
        }
    }

    fn integral_heps(&self, u: &[f64]) -> f64 {
        let n = self.n;
        u.iter().enumerate().map(|(k, &v)| h_eps_scalar(v, self.pi[k % n], self.reg.eps)).sum::<f64>() * self.vol
    }

    /// `(D, ‖∇_h w‖² + ‖w‖²)`.
    fn dissipation_terms(&self, u: &[f64], w: &[f64]) -> (f64, f64) {
        let n = self.n;
        let fluxes = self.fluxes(u);
        let mut d = 0.0;
        let mut grad_sq = 0.0;
        for (fi, f) in self.grid.faces().iter().enumerate() {
            for i in 0..n {
                let gw = (w[f.right * n + i] - w[f.left * n + i]) / f.spacing;
                d += f.dual_volume() * gw * fluxes[fi * n + i];
                grad_sq += f.dual_volume() * gw * gw;
            }
        }
        let w_sq: f64 = w.iter().map(|v| v * v).sum::<f64>() * self.vol;
        (d, grad_sq + w_sq)
    }
}

/// `(h′_ε)⁻¹(w)` by Newton in `log u` from a nearby guess; falls back to the
/// bracketed solver when the guess is poor.
fn invert_warm(w: f64, pi: f64, eps: f64, guess: f64) -> f64 {
    let mut s = math::ln(guess);
    for _ in 0..12 {
        let g = -pi * math::expm1(-s) + eps * s - w;
        let dg = pi * math::exp(-s) + eps;
        let ds = g / dg;
        if !ds.is_finite() {
            break;
        }
        s -= ds;
        if ds.abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            let u = math::exp(s);
            if u > 0.0 && u.is_finite() {
                return u;
            }
            break;
        }
    }
    invert_h_eps_prime_scalar(w, pi, eps)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn to_cell_major(field: &SpeciesField) -> Vec<f64> {
    let (n, cells) = (field.species_count(), field.grid().total_cells());
    let v = field.values();
    let mut out = vec![0.0; n * cells];
    for i in 0..n {
        for c in 0..cells {
            out[c * n + i] = v[i * cells + c];
        }
    }
    out
}

fn to_species_major(v: &[f64], n: usize, cells: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * cells];
    for c in 0..cells {
        for i in 0..n {
            out[i * cells + c] = v[c * n + i];
        }
    }
    out
}

fn check_inputs(prev: &SpeciesField, coeffs: &CoefficientSet, weights: &EntropyWeights) -> Result<(), StepError> {
    let n = prev.species_count();
    for len in [coeffs.n(), weights.pi.len(), weights.mu.len()] {
        if len != n {
            return Err(StepError::DimensionMismatch { expected: n, found: len });
        }
    }
    let cells = prev.grid().total_cells();
    if let Some(k) = prev.values().iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(StepError::NonPositiveState { species: k / cells, cell: k % cells, value: prev.values()[k] });
    }
    Ok(())
}

/// One implicit step of size `cfg.reg.tau` from `prev`.
///
/// The returned report has `step = 1`, `time = τ`; [`run`] rewrites both.
pub fn implicit_step(
    prev: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    cfg: &SchemeConfig,
) -> Result<StepOutcome, StepError> {
    cfg.validate()?;
    if cfg.mode == SchemeMode::TiedDelta && prev.grid().dim() != 1 {
        return Err(StepError::ModeNeedsOneDimension);
    }
    check_inputs(prev, coeffs, weights)?;
    let reg = cfg.effective_reg();
    let grid = prev.grid();
    let p = Problem::new(grid, coeffs, weights, reg);
    let (n, cells) = (p.n, p.cells);
    let size = n * cells;

    let prev_cm = to_cell_major(prev);
    let scale = max_abs(&prev_cm).max(1.0);
    let mut u = prev_cm.clone();
    let mut w: Vec<f64> = u.iter().enumerate().map(|(k, &v)| h_eps_prime_scalar(v, p.pi[k % n], reg.eps)).collect();
    let mut res = vec![0.0; size];
    p.residual(&u, &w, &prev_cm, &mut res);
    let mut norm = max_abs(&res) / scale;
    if !norm.is_finite() {
        return Err(StepError::NonFinite { iter: 0 });
    }

    let bw = p.bandwidth();
    let mut jac = BandedMatrix::zeros(size, bw, bw);
    let mut dw = vec![0.0; size];
    let mut w_try = vec![0.0; size];
    let mut u_try = vec![0.0; size];
    let mut res_try = vec![0.0; size];
    let mut iters = 0;
    while norm > cfg.newton.tol {
        if iters == cfg.newton.max_iters {
            return Err(StepError::NewtonDiverged { iters, residual: norm });
        }
        iters += 1;
        p.jacobian(&u, &mut jac);
        for k in 0..size {
            dw[k] = -res[k];
        }
        jac.solve_in_place(&mut dw)?;
        if dw.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { iter: iters });
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut finite = true;
            for k in 0..size {
                w_try[k] = w[k] + alpha * dw[k];
                u_try[k] = invert_warm(w_try[k], p.pi[k % n], reg.eps, u[k]);
                finite &= u_try[k] > 0.0 && u_try[k].is_finite();
            }
            if finite {
                p.residual(&u_try, &w_try, &prev_cm, &mut res_try);
                let trial = max_abs(&res_try) / scale;
                if trial.is_finite() && trial <= (1.0 - ARMIJO * alpha) * norm {
                    core::mem::swap(&mut u, &mut u_try);
                    core::mem::swap(&mut w, &mut w_try);
                    core::mem::swap(&mut res, &mut res_try);
                    norm = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= cfg.newton.damping;
        }
        if !accepted {
            return Err(StepError::LineSearchFailed { iter: iters, residual: norm });
        }
    }

    let (dissipation, reg_sq) = p.dissipation_terms(&u, &w);
    let next = SpeciesField::new(grid.clone(), n, to_species_major(&u, n, cells))?;
    let w_sm = to_species_major(&w, n, cells);
    let mass = next.masses();
    let prev_mass = prev.masses();
    let mut predicted = vec![0.0; n];
    let mut mass_err = 0.0f64;
    for i in 0..n {
        predicted[i] = -reg.delta * reg.tau * grid.integrate(&w_sm[i * cells..(i + 1) * cells]);
        let err = (mass[i] - prev_mass[i] - predicted[i]).abs() / prev_mass[i];
        mass_err = mass_err.max(err);
    }
    let report = StepReport {
        step: 1,
        time: reg.tau,
        tau: reg.tau,
        macro_step: None,
        entropy_heps: p.integral_heps(&u),
        entropy_dissipation: dissipation,
        delta_term: reg.delta * reg_sq,
        mass,
        mass_drift_predicted: predicted,
        mass_identity_error: mass_err,
        newton_iters: iters,
        newton_residual: norm,
        min_density: next.min_value(),
        entropy_check: None,
        monitors: None,
    };
    Ok(StepOutcome { next, w: w_sm, report })
}

/// `∫h_ε` of a field.
pub fn integral_heps(u: &SpeciesField, weights: &EntropyWeights, eps: f64) -> f64 {
    let cells = u.grid().total_cells();
    u.values().iter().enumerate().map(|(k, &v)| h_eps_scalar(v, weights.pi[k / cells], eps)).sum::<f64>()
        * u.grid().cell_volume()
}

/// Checks the discrete entropy inequality of one step.
///
/// Both entropy integrals are recomputed from the states; the dissipation
/// and `δ` terms are taken from `report`. `w` is accepted for symmetry with
/// the step output and must match the field size.
pub fn verify_entropy_step(
    prev: &SpeciesField,
    next: &SpeciesField,
    w: &[f64],
    report: &StepReport,
    weights: &EntropyWeights,
    cfg: &SchemeConfig,
) -> EntropyCheck {
    let reg = cfg.effective_reg();
    if w.len() != next.values().len() || prev.values().len() != next.values().len() || next.min_value() <= 0.0 {
        return EntropyCheck { passed: false, margin: f64::NEG_INFINITY };
    }
    let before = integral_heps(prev, weights, reg.eps);
    let after = integral_heps(next, weights, reg.eps);
    let slack = cfg.entropy_check.slack * (1.0 + after.abs());
    let lhs = after + report.tau * report.entropy_dissipation + report.tau * report.delta_term;
    let margin = before + slack - lhs;
    EntropyCheck { passed: margin >= 0.0, margin }
}

/// Duality functionals per species; see [`DualityRecord`].
pub fn duality_monitor(u: &SpeciesField, coeffs: &CoefficientSet) -> Result<Vec<DualityRecord>, StepError> {
    let n = u.species_count();
    if coeffs.n() != n {
        return Err(StepError::DimensionMismatch { expected: n, found: coeffs.n() });
    }
    let grid = u.grid();
    let cells = grid.total_cells();
    let vol = grid.cell_volume();
    let means = u.means();
    let mut records = Vec::with_capacity(n);
    let mut cubic = vec![0.0; n];
    let mut self_cubic = vec![0.0; n];
    let mut ok = vec![true; n];
    for c in 0..cells {
        let cell = u.cell(c);
        let p = entropy::pressure_slice(&cell, coeffs);
        for i in 0..n {
            let lhs = cell[i] * cell[i] * p[i];
            let rhs = coeffs.a(i, i) * cell[i] * cell[i] * cell[i];
            cubic[i] += lhs * vol;
            self_cubic[i] += rhs * vol;
            ok[i] &= lhs >= rhs;
        }
    }
    for i in 0..n {
        let mut rhs: Vec<f64> = u.species(i).iter().map(|v| v - means[i]).collect();
        // near equilibrium the difference is pure cancellation; re-centre it
        let drift = rhs.iter().sum::<f64>() / cells as f64;
        rhs.iter_mut().for_each(|v| *v -= drift);
        let psi = grid.neumann_poisson_solve(&rhs)?;
        let grad_psi_sq = grid
            .faces()
            .iter()
            .map(|f| {
                let d = (psi[f.right] - psi[f.left]) / f.spacing;
                d * d * f.dual_volume()
            })
            .sum();
        records.push(DualityRecord { grad_psi_sq, cubic: cubic[i], self_cubic: self_cubic[i], pointwise_ok: ok[i] });
    }
    Ok(records)
}

/// Relative entropy of `u` against its own mean, with Csiszár–Kullback data.
pub fn relative_entropy_record(
    u: &SpeciesField,
    weights: &EntropyWeights,
    eta: f64,
) -> Result<RelativeEntropyRecord, StepError> {
    let n = u.species_count();
    let grid = u.grid();
    let means = u.means();
    let mut per_species = Vec::with_capacity(n);
    let mut l1 = Vec::with_capacity(n);
    let mut ck = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let values = u.species(i);
        // Jensen makes H_i ≥ 0; clip rounding noise below zero
        let h = entropy::relative_entropy_eta(&[means[i]], &[values], eta, &[1.0], grid.cell_volume())?.max(0.0);
        total += weights.pi[i] * h;
        per_species.push(h);
        l1.push(values.iter().map(|v| (v - means[i]).abs()).sum::<f64>() * grid.cell_volume());
        ck.push(csiszar_kullback_rhs(means[i], eta, h, grid.measure())?);
    }
    Ok(RelativeEntropyRecord { eta, measure: grid.measure(), means, total, per_species, l1_distance: l1, ck_rhs: ck })
}

/// Default shift of the relative-entropy monitor, `min(η₀/2, 0.1)`, when all
/// `a_i0 > 0`.
pub fn default_monitor_eta(coeffs: &CoefficientSet) -> Option<f64> {
    if (0..coeffs.n()).any(|i| coeffs.a0(i) <= 0.0) {
        return None;
    }
    coeffmodel::eta0(coeffs).ok().map(|e0| (0.5 * e0).min(0.1))
}

/// Clamps initial data into `[INITIAL_CLIP, 1/INITIAL_CLIP]` and rescales
/// each species to its original mass.
pub fn regularize_initial(u: &SpeciesField) -> Result<SpeciesField, StepError> {
    let n = u.species_count();
    let cells = u.grid().total_cells();
    let mut values = u.values().to_vec();
    for i in 0..n {
        let slice = &mut values[i * cells..(i + 1) * cells];
        let before: f64 = slice.iter().sum();
        slice.iter_mut().for_each(|v| *v = v.clamp(INITIAL_CLIP, 1.0 / INITIAL_CLIP));
        let after: f64 = slice.iter().sum();
        if before > 0.0 && after != before {
            let s = before / after;
            slice.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(SpeciesField::new(u.grid().clone(), n, values)?)
}

// ---------------------------------------------------------------------------
// time marching

/// Receives every accepted step (and the initial state, as step 0).
pub trait StepSink {
    fn accept(&mut self, report: &StepReport, state: &SpeciesField);
}

impl<F: FnMut(&StepReport, &SpeciesField)> StepSink for F {
    fn accept(&mut self, report: &StepReport, state: &SpeciesField) {
        self(report, state)
    }
}

/// Discards everything.
pub struct NullSink;

impl StepSink for NullSink {
    fn accept(&mut self, _: &StepReport, _: &SpeciesField) {}
}

/// Keeps the states on the `τ`-grid (including time 0).
#[derive(Default)]
pub struct SnapshotSink {
    pub snapshots: Vec<(f64, SpeciesField)>,
}

impl StepSink for SnapshotSink {
    fn accept(&mut self, report: &StepReport, state: &SpeciesField) {
        if report.macro_step.is_some() {
            self.snapshots.push((report.time, state.clone()));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySummary {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_time: f64,
    pub final_state: SpeciesField,
    pub min_tau: f64,
    pub entropy_failures: usize,
    pub min_entropy_margin: f64,
    /// Steps with `D < −1e-12·(1 + |∫h_ε|)`.
    pub dissipation_violations: usize,
    pub max_newton_residual: f64,
    pub max_mass_identity_error: f64,
    /// Steps where `H_η` grew by more than `1e-10·(1 + H_η)`.
    pub rel_entropy_increases: usize,
    pub max_rel_entropy_increase: f64,
    pub ck_violations: usize,
    pub duality_pointwise_ok: bool,
    /// `(∫₀ᵀ∫u_i³)^{1/3}`.
    pub l3_spacetime: Vec<f64>,
    pub fisher_accum: Vec<f64>,
    pub grad_psi_accum: Vec<f64>,
    pub cubic_accum: Vec<f64>,
    pub self_cubic_accum: Vec<f64>,
    pub kappa_nonpositive: bool,
    pub final_report: StepReport,
}

impl TrajectorySummary {
    /// All monitored accumulations are finite.
    pub fn monitors_finite(&self) -> bool {
        [&self.l3_spacetime, &self.fisher_accum, &self.grad_psi_accum, &self.cubic_accum, &self.self_cubic_accum]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunError {
    pub error: StepError,
    pub time: f64,
    pub tau: f64,
    pub accepted_steps: usize,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted at t = {} (tau = {:e}, {} steps accepted): {}",
            self.time, self.tau, self.accepted_steps, self.error
        )
    }
}

impl core::error::Error for RunError {}

struct Accumulators {
    l3: Vec<f64>,
    fisher: Vec<f64>,
    grad_psi: Vec<f64>,
    cubic: Vec<f64>,
    self_cubic: Vec<f64>,
}

impl Accumulators {
    fn new(n: usize) -> Self {
        Self {
            l3: vec![0.0; n],
            fisher: vec![0.0; n],
            grad_psi: vec![0.0; n],
            cubic: vec![0.0; n],
            self_cubic: vec![0.0; n],
        }
    }
}

fn monitors_for(
    u: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eta: Option<f64>,
    dt: f64,
    acc: &mut Accumulators,
) -> Result<Monitors, StepError> {
    let norms = grid::discrete_norms(u);
    let fisher = grid::fisher(u)?;
    let duality = duality_monitor(u, coeffs)?;
    for i in 0..u.species_count() {
        acc.l3[i] += dt * norms[i].l3 * norms[i].l3 * norms[i].l3;
        acc.fisher[i] += dt * fisher[i];
        acc.grad_psi[i] += dt * duality[i].grad_psi_sq;
        acc.cubic[i] += dt * duality[i].cubic;
        acc.self_cubic[i] += dt * duality[i].self_cubic;
    }
    let relative_entropy = match eta {
        Some(e) => Some(relative_entropy_record(u, weights, e)?),
        None => None,
    };
    Ok(Monitors {
        norms,
        fisher,
        duality,
        l3_cubed_accum: acc.l3.clone(),
        fisher_accum: acc.fisher.clone(),
        grad_psi_accum: acc.grad_psi.clone(),
        cubic_accum: acc.cubic.clone(),
        self_cubic_accum: acc.self_cubic.clone(),
        relative_entropy,
    })
}

/// Marches from `initial` to `t_end` on the grid of multiples of `τ`.
///
/// A rejected step is retried with half the step size (down to
/// `TAU_FLOOR_FACTOR·τ`); after each success the step doubles again, capped
/// at `τ`. The initial state, after [`regularize_initial`], is passed to
/// the sink as step 0.
pub fn run(
    initial: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    cfg: &SchemeConfig,
    t_end: f64,
    sink: &mut dyn StepSink,
) -> Result<TrajectorySummary, RunError> {
    let abort =
        |error: StepError, time: f64, tau: f64, accepted_steps: usize| RunError { error, time, tau, accepted_steps };
    let reg = cfg.effective_reg();
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(abort(StepError::InvalidConfig { name: "t_end", value: t_end }, 0.0, reg.tau, 0));
    }
    cfg.validate().map_err(|e| abort(e, 0.0, reg.tau, 0))?;
    let mut state = regularize_initial(initial).map_err(|e| abort(e, 0.0, reg.tau, 0))?;
    check_inputs(&state, coeffs, weights).map_err(|e| abort(e, 0.0, reg.tau, 0))?;
    let n = state.species_count();
    let eta = if reg.eta > 0.0 { Some(reg.eta) } else { default_monitor_eta(coeffs) };
    let mut acc = Accumulators::new(n);

    let initial_monitors =
        monitors_for(&state, coeffs, weights, eta, 0.0, &mut acc).map_err(|e| abort(e, 0.0, reg.tau, 0))?;
    let mut last_report = StepReport {
        step: 0,
        time: 0.0,
        tau: 0.0,
        macro_step: Some(0),
        entropy_heps: integral_heps(&state, weights, reg.eps),
        entropy_dissipation: 0.0,
        delta_term: 0.0,
        mass: state.masses(),
        mass_drift_predicted: vec![0.0; n],
        mass_identity_error: 0.0,
        newton_iters: 0,
        newton_residual: 0.0,
        min_density: state.min_value(),
        entropy_check: None,
        monitors: Some(initial_monitors),
    };
    sink.accept(&last_report, &state);

    let tau0 = reg.tau;
    let tau_min = TAU_FLOOR_FACTOR * tau0;
    let mut summary = TrajectorySummary {
        accepted_steps: 0,
        rejected_steps: 0,
        final_time: 0.0,
        final_state: state.clone(),
        min_tau: tau0,
        entropy_failures: 0,
        min_entropy_margin: f64::INFINITY,
        dissipation_violations: 0,
        max_newton_residual: 0.0,
        max_mass_identity_error: 0.0,
        rel_entropy_increases: 0,
        max_rel_entropy_increase: 0.0,
        ck_violations: 0,
        duality_pointwise_ok: true,
        l3_spacetime: vec![0.0; n],
        fisher_accum: vec![0.0; n],
        grad_psi_accum: vec![0.0; n],
        cubic_accum: vec![0.0; n],
        self_cubic_accum: vec![0.0; n],
        kappa_nonpositive: weights.kappa <= 0.0,
        final_report: last_report.clone(),
    };
    if let Some(rel) = last_report.monitors.as_ref().and_then(|m| m.relative_entropy.as_ref()) {
        if !rel.ck_holds() {
            summary.ck_violations += 1;
        }
    }

    let mut time = 0.0;
    let mut tau = tau0;
    let mut macro_index = 0usize;
    while time < t_end {
        macro_index += 1;
        let target = (macro_index as f64 * tau0).min(t_end);
        while time < target {
            let remaining = target - time;
            let (dt, lands) = if tau >= remaining * (1.0 - 1e-9) { (remaining, true) } else { (tau, false) };
            let mut step_cfg = *cfg;
            step_cfg.reg.tau = dt;
            match implicit_step(&state, coeffs, weights, &step_cfg) {
                Ok(out) => {
                    let StepOutcome { next, w, mut report } = out;
                    time = if lands { target } else { time + dt };
                    summary.accepted_steps += 1;
                    report.step = summary.accepted_steps;
                    report.time = time;
                    report.macro_step = if lands { Some(macro_index) } else { None };
                    if cfg.entropy_check.enabled {
                        let check = verify_entropy_step(&state, &next, &w, &report, weights, &step_cfg);
                        summary.min_entropy_margin = summary.min_entropy_margin.min(check.margin);
                        if !check.passed {
                            summary.entropy_failures += 1;
                        }
                        report.entropy_check = Some(check);
                    }
                    let monitors = monitors_for(&next, coeffs, weights, eta, dt, &mut acc)
                        .map_err(|e| abort(e, time, dt, summary.accepted_steps))?;
                    summary.duality_pointwise_ok &= monitors.duality.iter().all(|d| d.pointwise_ok);
                    if let Some(rel) = &monitors.relative_entropy {
                        if !rel.ck_holds() {
                            summary.ck_violations += 1;
                        }
                        let before =
                            last_report.monitors.as_ref().and_then(|m| m.relative_entropy.as_ref()).map(|r| r.total);
                        if let Some(before) = before {
                            let growth = (rel.total - before) / (1.0 + before);
                            summary.max_rel_entropy_increase = summary.max_rel_entropy_increase.max(growth);
                            if growth > REL_ENTROPY_TOL {
                                summary.rel_entropy_increases += 1;
                            }
                        }
                    }
                    report.monitors = Some(monitors);
                    if !report.dissipation_ok() {
                        summary.dissipation_violations += 1;
                    }
                    summary.max_newton_residual = summary.max_newton_residual.max(report.newton_residual);
                    summary.max_mass_identity_error = summary.max_mass_identity_error.max(report.mass_identity_error);
                    summary.min_tau = summary.min_tau.min(dt);
                    sink.accept(&report, &next);
                    state = next;
                    last_report = report;
                    tau = (2.0 * tau).min(tau0);
                }
                Err(e) if e.is_recoverable() => {
                    summary.rejected_steps += 1;
                    tau = 0.5 * dt;
                    if tau < tau_min {
                        return Err(abort(e, time, tau, summary.accepted_steps));
                    }
                }
                Err(e) => return Err(abort(e, time, dt, summary.accepted_steps)),
            }
        }
    }

    summary.final_time = time;
    summary.final_state = state;
    summary.l3_spacetime = acc.l3.iter().map(|&v| math::cbrt(v)).collect();
    summary.fisher_accum = acc.fisher;
    summary.grad_psi_accum = acc.grad_psi;
    summary.cubic_accum = acc.cubic;
    summary.self_cubic_accum = acc.self_cubic;
    summary.final_report = last_report;
    Ok(summary)
}

/// `‖u − v‖_{L²(Q_T)}` for two trajectories sampled at the same times,
/// using the right-endpoint rule (the first snapshot only anchors time).
pub fn trajectory_l2_distance(a: &[(f64, SpeciesField)], b: &[(f64, SpeciesField)]) -> Result<f64, StepError> {
    if a.len() != b.len() {
        return Err(StepError::TrajectoryMismatch);
    }
    let mut total = 0.0;
    for k in 0..a.len() {
        let ((ta, ua), (tb, ub)) = (&a[k], &b[k]);
        if (ta - tb).abs() > 1e-12 * ta.abs().max(1.0)
            || ua.grid() != ub.grid()
            || ua.values().len() != ub.values().len()
        {
            return Err(StepError::TrajectoryMismatch);
        }
        if k == 0 {
            continue;
        }
        let dt = ta - a[k - 1].0;
        let sq: f64 = ua.values().iter().zip(ub.values()).map(|(x, y)| (x - y) * (x - y)).sum();
        total += dt * sq * ua.grid().cell_volume();
    }
    Ok(math::sqrt(total))
}

/// Scheme configuration of one de-regularization run: `ε` replaced, `δ = ε`.
pub fn dereg_config(cfg: &SchemeConfig, eps: f64) -> SchemeConfig {
    let mut c = *cfg;
    c.reg.eps = eps;
    c.reg.delta = eps;
    c
}

/// Checks that `eps_list` is nonempty, positive and non-increasing.
pub fn validate_eps_list(eps_list: &[f64]) -> Result<(), StepError> {
    if eps_list.is_empty()
        || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite()))
        || eps_list.windows(2).any(|p| p[1] > p[0])
    {
        return Err(StepError::InvalidEpsList);
    }
    Ok(())
}

/// States on the `τ`-grid of one de-regularization run.
pub fn dereg_trajectory(
    initial: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    cfg: &SchemeConfig,
    t_end: f64,
    eps: f64,
) -> Result<Vec<(f64, SpeciesField)>, RunError> {
    let mut sink = SnapshotSink::default();
    run(initial, coeffs, weights, &dereg_config(cfg, eps), t_end, &mut sink)?;
    Ok(sink.snapshots)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeregDistance {
    pub eps_a: f64,
    pub eps_b: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeregTable {
    pub eps: Vec<f64>,
    /// Distances between consecutive entries of `eps`.
    pub distances: Vec<DeregDistance>,
    /// Set when a run failed; distances cover the runs before it.
    pub failure: Option<RunError>,
}

impl DeregTable {
    /// Distances strictly decrease along the list.
    pub fn is_cauchy(&self) -> bool {
        self.failure.is_none() && self.distances.windows(2).all(|p| p[1].distance < p[0].distance)
    }
}

/// Assembles the distance table from per-ε trajectories, in list order.
pub fn dereg_table(
    eps: &[f64],
    runs: Vec<Result<Vec<(f64, SpeciesField)>, RunError>>,
) -> Result<DeregTable, StepError> {
    let mut table = DeregTable { eps: eps.to_vec(), distances: Vec::new(), failure: None };
    let mut previous: Option<(f64, Vec<(f64, SpeciesField)>)> = None;
    for (&e, r) in eps.iter().zip(runs) {
        match r {
            Ok(traj) => {
                if let Some((pe, ptraj)) = &previous {
                    let distance = trajectory_l2_distance(ptraj, &traj)?;
                    table.distances.push(DeregDistance { eps_a: *pe, eps_b: e, distance });
                }
                previous = Some((e, traj));
            }
            Err(err) => {
                table.failure = Some(err);
                break;
            }
        }
    }
    Ok(table)
}

/// Runs the scenario for every `ε` (with `δ = ε`) and tabulates the
/// `L²(Q_T)` distances between consecutive trajectories.
pub fn deregularization_study(
    initial: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    cfg: &SchemeConfig,
    t_end: f64,
    eps_list: &[f64],
) -> Result<DeregTable, StepError> {
    validate_eps_list(eps_list)?;
    let mut runs = Vec::with_capacity(eps_list.len());
    for &e in eps_list {
        let r = dereg_trajectory(initial, coeffs, weights, cfg, t_end, e);
        let failed = r.is_err();
        runs.push(r);
        if failed {
            break;
        }
    }
    dereg_table(eps_list, runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_species() -> (CoefficientSet, EntropyWeights) {
        let c = CoefficientSet::new(vec![1.0, 0.5, 0.5, 1.0], vec![1.0, 1.0]).unwrap();
        let w = EntropyWeights::for_coefficients(&c, vec![0.5, 0.5]).unwrap();
        (c, w)
    }

    fn bumps(grid: &Grid) -> SpeciesField {
        SpeciesField::from_fn(grid.clone(), 2, |i, x| {
            let c = if i == 0 { 0.3 } else { 0.7 };
            0.2 + (-(x[0] - c).powi(2) / 0.01).exp()
        })
        .unwrap()
    }

    fn cfg(eps: f64, delta: f64, tau: f64) -> SchemeConfig {
        SchemeConfig::new(RegularizationParams::new(eps, delta, 0.0, tau).unwrap())
    }

    #[test]
    fn warm_inversion_matches_bracketed() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5000 {
            let pi = rng.gen_range(0.1..3.0);
            let eps = 10f64.powf(rng.gen_range(-6.0..0.0));
            let u = 10f64.powf(rng.gen_range(-4.0..3.0));
            let w = h_eps_prime_scalar(u, pi, eps);
            let guess = u * rng.gen_range(0.5..2.0);
            let a = invert_warm(w, pi, eps, guess);
            let b = invert_h_eps_prime_scalar(w, pi, eps);
            // both are roots to rounding; compare in w, where the map is well conditioned
            let scale = 8.0 * f64::EPSILON * (pi + eps * u.ln().abs() + w.abs());
            assert!((h_eps_prime_scalar(a, pi, eps) - w).abs() <= scale, "u={u} pi={pi} eps={eps}: {a} vs {b}");
            assert!((a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let (c, w) = two_species();
        let g = Grid::new_1d(20, 1.0).unwrap();
        let u = SpeciesField::constant(g, &[0.7, 1.3]).unwrap();
        let out = implicit_step(&u, &c, &w, &cfg(1e-3, 0.0, 0.1)).unwrap();
        assert_eq!(out.next.values(), u.values());
        assert_eq!(out.report.newton_iters, 0);
        assert_eq!(out.report.entropy_dissipation, 0.0);
        let check = verify_entropy_step(&u, &out.next, &out.w, &out.report, &w, &cfg(1e-3, 0.0, 0.1));
        assert!(check.passed && check.margin >= 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = CoefficientSet::new(vec![0.4, 2.0, 0.3, 0.9], vec![1.0, 0.5]).unwrap();
        let weights = EntropyWeights::for_coefficients(&c, vec![0.6, 0.4]).unwrap();
        let g = Grid::new_2d(4, 3, 1.0, 1.0).unwrap();
        let reg = RegularizationParams::new(0.05, 0.02, 0.0, 0.01).unwrap();
        let p = Problem::new(&g, &c, &weights, reg);
        let size = 2 * g.total_cells();
        let prev: Vec<f64> = (0..size).map(|_| rng.gen_range(0.3..2.0)).collect();
        let u: Vec<f64> = (0..size).map(|_| rng.gen_range(0.3..2.0)).collect();
        let w: Vec<f64> =
            u.iter().enumerate().map(|(k, &v)| h_eps_prime_scalar(v, weights.pi[k % 2], reg.eps)).collect();
        let bw = p.bandwidth();
        let mut jac = BandedMatrix::zeros(size, bw, bw);
        p.jacobian(&u, &mut jac);
        let mut r0 = vec![0.0; size];
        let mut r1 = vec![0.0; size];
        for col in 0..size {
            let h = 1e-6;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[col] += h;
            wm[col] -= h;
            let up: Vec<f64> =
                wp.iter().enumerate().map(|(k, &x)| invert_h_eps_prime_scalar(x, weights.pi[k % 2], reg.eps)).collect();
            let um: Vec<f64> =
                wm.iter().enumerate().map(|(k, &x)| invert_h_eps_prime_scalar(x, weights.pi[k % 2], reg.eps)).collect();
            p.residual(&up, &wp, &prev, &mut r1);
            p.residual(&um, &wm, &prev, &mut r0);
            for row in 0..size {
                let fd = (r1[row] - r0[row]) / (2.0 * h);
                assert!(
                    (fd - jac.get(row, col)).abs() < 1e-6 * (1.0 + fd.abs()),
                    "({row},{col}): fd {fd} vs {}",
                    jac.get(row, col)
                );
            }
        }
    }

    #[test]
    fn mass_conserved_without_delta() {
        let (c, w) = two_species();
        let g = Grid::new_1d(50, 1.0).unwrap();
        let mut u = bumps(&g);
        let conf = cfg(1e-3, 0.0, 1e-3);
        let m0 = u.masses();
        for _ in 0..50 {
            let out = implicit_step(&u, &c, &w, &conf).unwrap();
            assert!(out.report.mass_identity_error <= 1e-12, "{}", out.report.mass_identity_error);
            assert!(out.report.dissipation_ok());
            assert!(verify_entropy_step(&u, &out.next, &out.w, &out.report, &w, &conf).passed);
            u = out.next;
        }
        for (a, b) in u.masses().iter().zip(&m0) {
            assert!((a - b).abs() <= 1e-11 * b);
        }
    }

    #[test]
    fn mass_drift_matches_prediction_with_delta() {
        let (c, w) = two_species();
        let g = Grid::new_1d(40, 1.0).unwrap();
        let mut u = bumps(&g);
        let conf = cfg(1e-2, 1e-2, 1e-2);
        for _ in 0..10 {
            let out = implicit_step(&u, &c, &w, &conf).unwrap();
            let drift = out.report.mass_drift_predicted[0];
            assert!(drift != 0.0);
            assert!(out.report.mass_identity_error <= 1e-10);
            u = out.next;
        }
    }

    #[test]
    fn perturbed_state_fails_entropy_check() {
        let (c, w) = two_species();
        let g = Grid::new_1d(30, 1.0).unwrap();
        let u = bumps(&g);
        let conf = cfg(1e-3, 0.0, 1e-3);
        let out = implicit_step(&u, &c, &w, &conf).unwrap();
        assert!(verify_entropy_step(&u, &out.next, &out.w, &out.report, &w, &conf).passed);
        // push every value along its entropy gradient so ∫h_ε strictly grows
        let cells = g.total_cells();
        let noisy: Vec<f64> = out
            .next
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + 1e-2 * out.w[k].signum() + if out.w[k] == 0.0 { 1e-2 } else { 0.0 })
            .collect();
        let bad = SpeciesField::new(g, 2, noisy).unwrap();
        let check = verify_entropy_step(&u, &bad, &out.w, &out.report, &w, &conf);
        assert!(!check.passed && check.margin < 0.0, "{check:?} cells {cells}");
    }

    #[test]
    fn tied_delta_needs_1d_and_forces_delta() {
        let (c, w) = two_species();
        let g2 = Grid::new_2d(3, 3, 1.0, 1.0).unwrap();
        let u2 = SpeciesField::constant(g2, &[1.0, 1.0]).unwrap();
        let conf = cfg(1e-3, 0.0, 1e-2).with_mode(SchemeMode::TiedDelta);
        assert_eq!(implicit_step(&u2, &c, &w, &conf).unwrap_err(), StepError::ModeNeedsOneDimension);
        assert_eq!(conf.effective_reg().delta, 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (c, w) = two_species();
        let g = Grid::new_1d(4, 1.0).unwrap();
        let u = SpeciesField::new(g, 2, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(implicit_step(&u, &c, &w, &cfg(1e-3, 0.0, 1e-2)), Err(StepError::NonPositiveState { .. })));
        let mut bad = cfg(1e-3, 0.0, 1e-2);
        bad.newton.max_iters = 0;
        assert!(matches!(bad.validate(), Err(StepError::InvalidConfig { name: "newton.max_iters", .. })));
        bad = cfg(1e-3, 0.0, 1e-2);
        bad.reg.eps = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn duality_monitor_constant_and_oracle() {
        let (c, _) = two_species();
        let g = Grid::new_1d(10, 2.0).unwrap();
        let u = SpeciesField::constant(g.clone(), &[0.5, 2.0]).unwrap();
        let d = duality_monitor(&u, &c).unwrap();
        for (i, ub) in [0.5f64, 2.0].iter().enumerate() {
            let p = 1.0 + c.a(i, 0) * 0.5 + c.a(i, 1) * 2.0;
            assert_eq!(d[i].grad_psi_sq, 0.0);
            assert!((d[i].cubic - 2.0 * ub * ub * p).abs() < 1e-12);
            assert!(d[i].cubic >= d[i].self_cubic && d[i].pointwise_ok);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = SpeciesField::from_fn(g.clone(), 2, |_, _| rng.gen_range(0.1..3.0)).unwrap();
        let d = duality_monitor(&u, &c).unwrap();
        // oracle: ∫|∇ψ|² = ∫ψ (u − ū) for the discrete Neumann problem
        for i in 0..2 {
            let m = u.means()[i];
            let rhs: Vec<f64> = u.species(i).iter().map(|v| v - m).collect();
            let psi = g.neumann_poisson_solve(&rhs).unwrap();
            let energy: f64 = psi.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() * g.cell_volume();
            assert!((d[i].grad_psi_sq - energy).abs() < 1e-12 * (1.0 + energy));
            let cubic: f64 = (0..10)
                .map(|k| {
                    let cell = u.cell(k);
                    cell[i] * cell[i] * (1.0 + c.a(i, 0) * cell[0] + c.a(i, 1) * cell[1]) * g.cell_volume()
                })
                .sum();
            assert!((d[i].cubic - cubic).abs() < 1e-12 * cubic);
        }
    }

    #[test]
    fn run_zero_time_reports_initial_only() {
        let (c, w) = two_species();
        let g = Grid::new_1d(10, 1.0).unwrap();
        let mut reports = Vec::new();
        let mut sink = |r: &StepReport, _: &SpeciesField| reports.push(r.clone());
        let s = run(&bumps(&g), &c, &w, &cfg(1e-3, 0.0, 1e-2), 0.0, &mut sink).unwrap();
        assert_eq!(s.accepted_steps, 0);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].step, 0);
    }

    #[test]
    fn run_symmetric_two_species_relaxes() {
        let (c, w) = two_species();
        let g = Grid::new_1d(40, 1.0).unwrap();
        let s = run(&bumps(&g), &c, &w, &cfg(1e-4, 0.0, 1e-2), 2.0, &mut NullSink).unwrap();
        assert_eq!(s.entropy_failures, 0);
        assert_eq!(s.dissipation_violations, 0);
        assert_eq!(s.rel_entropy_increases, 0);
        assert_eq!(s.ck_violations, 0);
        assert!((s.final_time - 2.0).abs() < 1e-12);
        let rel = s.final_report.monitors.clone().unwrap().relative_entropy.unwrap();
        assert!(rel.l1_distance.iter().all(|&d| d < 1e-6), "{:?}", rel.l1_distance);
        assert!(s.monitors_finite() && s.duality_pointwise_ok);
    }

    #[test]
    fn regularize_initial_clamps_and_keeps_mass() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let u = SpeciesField::new(g, 1, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        let r = regularize_initial(&u).unwrap();
        assert!(r.min_value() > 0.0);
        assert!((r.mass(0) - u.mass(0)).abs() < 1e-15);
    }

    #[test]
    fn dereg_edge_cases() {
        let (c, w) = two_species();
        let g = Grid::new_1d(16, 1.0).unwrap();
        let conf = cfg(1e-3, 1e-3, 1e-2).with_mode(SchemeMode::TiedDelta);
        let single = deregularization_study(&bumps(&g), &c, &w, &conf, 0.1, &[1e-3]).unwrap();
        assert!(single.distances.is_empty());
        let same = deregularization_study(&bumps(&g), &c, &w, &conf, 0.1, &[1e-3, 1e-3]).unwrap();
        assert_eq!(same.distances[0].distance, 0.0);
        assert_eq!(
            deregularization_study(&bumps(&g), &c, &w, &conf, 0.1, &[1e-4, 1e-3]).unwrap_err(),
            StepError::InvalidEpsList
        );
    }
}
