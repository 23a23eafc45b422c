//! Entropy densities, the entropy-variable transform, and mobility matrices.
//!
//! With weights `π` the logarithmic entropy density is
//! `h(u) = Σ π_i (u_i − log u_i)` and its regularization is
//! `h_ε(u) = h(u) + ε Σ u_i (log u_i − 1)`. The entropy variables are
//! `w_i = ∂h_ε/∂u_i = π_i (1 − 1/u_i) + ε log u_i`, a strictly increasing
//! bijection `(0, ∞) → ℝ` per component when `ε > 0`.
//!
//! The quadratic-form helpers return both the dense value `zᵀ M z` and the
//! closed-form lower bound it is known to dominate, so callers can sample the
//! inequality directly.

use alloc::vec::Vec;
use core::fmt;

use crate::coeffmodel::{self, CoeffError, CoefficientSet, EntropyWeights};
use crate::linalg::DenseMatrix;
use crate::math;

/// Slack for the quadratic-form inequalities: `value ≥ bound − SLACK·(1 + |value|)`.
pub const QUADFORM_SLACK: f64 = 1e-10;
/// Relative tolerance of the mass-conservation precondition of [`relative_entropy_eta`].
pub const MASS_MATCH_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum EntropyError {
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    NonPositiveDensity {
        index: usize,
        value: f64,
    },
    /// The transform `w ↔ u` needs `ε > 0`.
    TransformNeedsPositiveEps(f64),
    InvalidParameter {
        name: &'static str,
        value: f64,
    },
    ShiftExceedsEta0 {
        eta: f64,
        eta0: f64,
    },
    MassMismatch {
        species: usize,
        mass: f64,
        expected: f64,
    },
    NegativeRelativeEntropy(f64),
    Coefficients(CoeffError),
}

impl fmt::Display for EntropyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            EntropyError::NonPositiveDensity { index, value } => {
                write!(f, "density u[{index}] = {value} must be positive and finite")
            }
            EntropyError::TransformNeedsPositiveEps(e) => {
                write!(f, "entropy-variable transform needs eps > 0 (got {e})")
            }
            EntropyError::InvalidParameter { name, value } => write!(f, "invalid {name} = {value}"),
            EntropyError::ShiftExceedsEta0 { eta, eta0 } => {
                write!(f, "shift exceeds η₀: eta = {eta} > eta0 = {eta0}")
            }
            EntropyError::MassMismatch { species, mass, expected } => {
                write!(f, "species {species}: mass {mass} does not match mean-state mass {expected}")
            }
            EntropyError::NegativeRelativeEntropy(h) => {
                write!(f, "relative entropy {h} must be nonnegative")
            }
            EntropyError::Coefficients(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EntropyError {}

impl From<CoeffError> for EntropyError {
    fn from(e: CoeffError) -> Self {
        EntropyError::Coefficients(e)
    }
}

/// Regularization knobs `ε` (entropy/diffusion), `δ` (stabilization),
/// `η` (entropy shift) and the time step `τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationParams {
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
    pub tau: f64,
}

impl RegularizationParams {
    pub fn new(eps: f64, delta: f64, eta: f64, tau: f64) -> Result<Self, EntropyError> {
        let p = Self { eps, delta, eta, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        for (name, value) in [("eps", self.eps), ("delta", self.delta), ("eta", self.eta)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(EntropyError::InvalidParameter { name, value });
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(EntropyError::InvalidParameter { name: "tau", value: self.tau });
        }
        Ok(())
    }
}

/// Pointwise species densities, all strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityVector(Vec<f64>);

impl DensityVector {
    pub fn new(u: Vec<f64>) -> Result<Self, EntropyError> {
        for (index, &value) in u.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EntropyError::NonPositiveDensity { index, value });
            }
        }
        Ok(Self(u))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), EntropyError> {
    if expected == found {
        Ok(())
    } else {
        Err(EntropyError::DimensionMismatch { expected, found })
    }
}

fn check_eps(eps: f64) -> Result<(), EntropyError> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(EntropyError::InvalidParameter { name: "eps", value: eps })
    }
}

// ---------------------------------------------------------------------------
// scalar kernels (one species), shared with the stepper

/// `π (u − log u) + ε u (log u − 1)`.
#[inline]
pub fn h_eps_scalar(u: f64, pi: f64, eps: f64) -> f64 {
    let lu = math::ln(u);
    pi * (u - lu) + eps * u * (lu - 1.0)
}

/// `π (1 − 1/u) + ε log u`.
#[inline]
pub fn h_eps_prime_scalar(u: f64, pi: f64, eps: f64) -> f64 {
    pi * (1.0 - 1.0 / u) + eps * math::ln(u)
}

/// `π / u² + ε / u`.
#[inline]
pub fn h_eps_second_scalar(u: f64, pi: f64, eps: f64) -> f64 {
    pi / (u * u) + eps / u
}

/// Positive root `u` of `π (1 − 1/u) + ε log u = w`.
///
/// Works in `s = log u`, where the map is `g(s) = π(1 − e^{−s}) + ε s`.
/// The root is bracketed from the sign of `w` and the two limiting regimes,
/// narrowed by bisection to width `1e-3`, and polished by Newton steps that
/// fall back to bisection whenever they leave the bracket.
pub fn invert_h_eps_prime_scalar(w: f64, pi: f64, eps: f64) -> f64 {
    debug_assert!(pi > 0.0 && eps > 0.0 && w.is_finite());
    let g = |s: f64| -pi * math::expm1(-s) + eps * s;
    let (mut lo, mut hi) = if w < 0.0 {
        // s < 0; ε s ≥ w and π(1 − e^{−s}) ≥ w give two lower bounds
        let a = math::ln(pi / (pi - w));
        let b = w / eps;
        (a.max(b), 0.0)
    } else if w == 0.0 {
        return 1.0;
    } else {
        let lo = ((w - pi) / eps).max(0.0);
        let mut hi = w / eps;
        if w < pi {
            hi = hi.min(math::ln(pi / (pi - w)));
        }
        (lo, hi.max(lo))
    };

    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut s = 0.5 * (lo + hi);
    for _ in 0..100 {
        let r = g(s) - w;
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let slope = pi * math::exp(-s) + eps;
        let mut next = s - r / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - s).abs();
        s = next;
        if step <= 2.0 * f64::EPSILON * s.abs().max(1.0) || hi - lo <= 2.0 * f64::EPSILON * s.abs().max(1.0) {
            break;
        }
    }
    math::exp(s)
}

// ---------------------------------------------------------------------------
// vector operations

/// `h(u) = Σ π_i (u_i − log u_i)`.
pub fn entropy_h(u: &DensityVector, pi: &[f64]) -> Result<f64, EntropyError> {
    entropy_heps(u, pi, 0.0)
}

/// `h_ε(u) = h(u) + ε Σ u_i (log u_i − 1)`.
pub fn entropy_heps(u: &DensityVector, pi: &[f64], eps: f64) -> Result<f64, EntropyError> {
    check_len(u.len(), pi.len())?;
    check_eps(eps)?;
    Ok(u.as_slice().iter().zip(pi).map(|(&ui, &p)| h_eps_scalar(ui, p, eps)).sum())
}

/// Entropy variables `w = h′_ε(u)`.
pub fn w_from_u(u: &DensityVector, pi: &[f64], eps: f64) -> Result<Vec<f64>, EntropyError> {
    check_len(u.len(), pi.len())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EntropyError::TransformNeedsPositiveEps(eps));
    }
    Ok(u.as_slice().iter().zip(pi).map(|(&ui, &p)| h_eps_prime_scalar(ui, p, eps)).collect())
}

/// Densities `u = (h′_ε)⁻¹(w)`; strictly positive for every finite `w`.
pub fn u_from_w(w: &[f64], pi: &[f64], eps: f64) -> Result<DensityVector, EntropyError> {
    check_len(w.len(), pi.len())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EntropyError::TransformNeedsPositiveEps(eps));
    }
    if let Some(&value) = w.iter().find(|v| !v.is_finite()) {
        return Err(EntropyError::InvalidParameter { name: "w", value });
    }
    DensityVector::new(w.iter().zip(pi).map(|(&wi, &p)| invert_h_eps_prime_scalar(wi, p, eps)).collect())
}

/// Diagonal of `H_ε(u)`: `π_i/u_i² + ε/u_i`.
pub fn hessian_heps_diag(u: &DensityVector, pi: &[f64], eps: f64) -> Result<Vec<f64>, EntropyError> {
    check_len(u.len(), pi.len())?;
    check_eps(eps)?;
    Ok(u.as_slice().iter().zip(pi).map(|(&ui, &p)| h_eps_second_scalar(ui, p, eps)).collect())
}

/// `H_ε(u)` as a dense (diagonal) matrix.
pub fn hessian_heps(u: &DensityVector, pi: &[f64], eps: f64) -> Result<DenseMatrix, EntropyError> {
    Ok(DenseMatrix::diagonal(&hessian_heps_diag(u, pi, eps)?))
}

/// `A_ij(u) = δ_ij a_i0 + δ_ij Σ_k a_ik u_k + a_ij u_i` written into `out`.
pub(crate) fn fill_diffusion_a(u: &[f64], coeffs: &CoefficientSet, out: &mut DenseMatrix) {
    let n = coeffs.n();
    for i in 0..n {
        let mut p = coeffs.a0(i);
        for k in 0..n {
            p += coeffs.a(i, k) * u[k];
        }
        for j in 0..n {
            out[(i, j)] = coeffs.a(i, j) * u[i];
        }
        out[(i, i)] += p;
    }
}

/// The SKT diffusion matrix `A(u)`.
pub fn diffusion_a(u: &DensityVector, coeffs: &CoefficientSet) -> Result<DenseMatrix, EntropyError> {
    check_len(coeffs.n(), u.len())?;
    let mut m = DenseMatrix::zeros(coeffs.n());
    fill_diffusion_a(u.as_slice(), coeffs, &mut m);
    Ok(m)
}

/// `A_ε(u) = A(u) + ε diag(μ_i/π_i · u_i²)`.
pub fn diffusion_aeps(
    u: &DensityVector,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eps: f64,
) -> Result<DenseMatrix, EntropyError> {
    check_len(coeffs.n(), u.len())?;
    check_len(coeffs.n(), weights.pi.len())?;
    check_len(coeffs.n(), weights.mu.len())?;
    check_eps(eps)?;
    let mut m = DenseMatrix::zeros(coeffs.n());
    fill_diffusion_a(u.as_slice(), coeffs, &mut m);
    for (i, &ui) in u.as_slice().iter().enumerate() {
        m[(i, i)] += eps * weights.mu[i] / weights.pi[i] * ui * ui;
    }
    Ok(m)
}

/// `p_i(u) = a_i0 + Σ_k a_ik u_k`.
pub fn pressure_p(u: &DensityVector, coeffs: &CoefficientSet) -> Result<Vec<f64>, EntropyError> {
    check_len(coeffs.n(), u.len())?;
    Ok(pressure_slice(u.as_slice(), coeffs))
}

pub(crate) fn pressure_slice(u: &[f64], coeffs: &CoefficientSet) -> Vec<f64> {
    let n = coeffs.n();
    (0..n).map(|i| coeffs.a0(i) + (0..n).map(|k| coeffs.a(i, k) * u[k]).sum::<f64>()).collect()
}

/// A sampled quadratic form and the lower bound it must dominate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadForm {
    pub value: f64,
    pub bound: f64,
}

impl QuadForm {
    /// `value ≥ bound − QUADFORM_SLACK·(1 + |value|)`.
    pub fn holds(&self) -> bool {
        self.value >= self.bound - QUADFORM_SLACK * (1.0 + self.value.abs())
    }
}

/// Same as `coeffmodel::kappa` row terms; `(8 π_i a_ii − Σ_{j≠i} π_j a_ji)`.
fn kappa_terms(coeffs: &CoefficientSet, pi: &[f64]) -> Vec<f64> {
    let n = coeffs.n();
    (0..n)
        .map(|i| {
            let cross: f64 = (0..n).filter(|&j| j != i).map(|j| pi[j] * coeffs.a(j, i)).sum();
            8.0 * pi[i] * coeffs.a(i, i) - cross
        })
        .collect()
}

/// `zᵀ H(u) A(u) z` against `Σ π_i a_i0 z_i²/u_i² + ¼ Σ (8π_i a_ii − Σ_{j≠i} π_j a_ji) z_i²/u_i`.
pub fn quadform_bound_ha(
    u: &DensityVector,
    z: &[f64],
    coeffs: &CoefficientSet,
    pi: &[f64],
) -> Result<QuadForm, EntropyError> {
    check_len(coeffs.n(), u.len())?;
    check_len(coeffs.n(), z.len())?;
    check_len(coeffs.n(), pi.len())?;
    let h = hessian_heps(u, pi, 0.0)?;
    let a = diffusion_a(u, coeffs)?;
    let value = h.mul(&a).quadratic_form(z);
    let us = u.as_slice();
    let k = kappa_terms(coeffs, pi);
    let bound = (0..coeffs.n())
        .map(|i| {
            let zi2 = z[i] * z[i];
            pi[i] * coeffs.a0(i) * zi2 / (us[i] * us[i]) + 0.25 * k[i] * zi2 / us[i]
        })
        .sum();
    Ok(QuadForm { value, bound })
}

/// `zᵀ H_ε(u) A_ε(u) z` against the `ε = 0` bound plus
/// `2ε Σ a_ii z_i² + ε² Σ (μ_i/π_i) u_i z_i²`. Requires the `μ` invariant.
pub fn quadform_bound_heps_aeps(
    u: &DensityVector,
    z: &[f64],
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eps: f64,
) -> Result<QuadForm, EntropyError> {
    weights.validate(coeffs)?;
    check_len(coeffs.n(), z.len())?;
    let base = quadform_bound_ha(u, z, coeffs, &weights.pi)?;
    let h = hessian_heps(u, &weights.pi, eps)?;
    let a = diffusion_aeps(u, coeffs, weights, eps)?;
    let value = h.mul(&a).quadratic_form(z);
    let us = u.as_slice();
    let extra: f64 = (0..coeffs.n())
        .map(|i| {
            let zi2 = z[i] * z[i];
            2.0 * eps * coeffs.a(i, i) * zi2 + eps * eps * weights.mu[i] / weights.pi[i] * us[i] * zi2
        })
        .sum();
    Ok(QuadForm { value, bound: base.bound + extra })
}

/// Constants of the shifted bound: `C₁ = 2 max_i(Σ_j a_ij + μ_i)`, `C₂ = 2 max_i μ_i/π_i`.
pub fn shifted_bound_constants(coeffs: &CoefficientSet, weights: &EntropyWeights) -> (f64, f64) {
    let n = coeffs.n();
    let c1 = (0..n).map(|i| (0..n).map(|j| coeffs.a(i, j)).sum::<f64>() + weights.mu[i]).fold(0.0, f64::max);
    let c2 = (0..n).map(|i| weights.mu[i] / weights.pi[i]).fold(0.0, f64::max);
    (2.0 * c1, 2.0 * c2)
}

/// `zᵀ H_ε(u+η) A_ε(u) z` against
/// `(κ/4) Σ z_i²/(u_i+η) − ηε C₁ Σ z_i²/(u_i+η) − ηε² C₂ Σ z_i²`,
/// valid for `0 < η ≤ η₀`.
pub fn quadform_bound_shifted(
    u: &DensityVector,
    z: &[f64],
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eps: f64,
    eta: f64,
) -> Result<QuadForm, EntropyError> {
    weights.validate(coeffs)?;
    check_len(coeffs.n(), z.len())?;
    check_len(coeffs.n(), u.len())?;
    check_eps(eps)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(EntropyError::InvalidParameter { name: "eta", value: eta });
    }
    let eta0 = coeffmodel::eta0(coeffs)?;
    if eta > eta0 {
        return Err(EntropyError::ShiftExceedsEta0 { eta, eta0 });
    }
    let kappa = coeffmodel::kappa(coeffs, &weights.pi)?;
    let (c1, c2) = shifted_bound_constants(coeffs, weights);

    let shifted = DensityVector::new(u.as_slice().iter().map(|x| x + eta).collect())?;
    let h = hessian_heps(&shifted, &weights.pi, eps)?;
    let a = diffusion_aeps(u, coeffs, weights, eps)?;
    let value = h.mul(&a).quadratic_form(z);

    let mut s_shift = 0.0;
    let mut s_plain = 0.0;
    for (zi, ui) in z.iter().zip(u.as_slice()) {
        s_shift += zi * zi / (ui + eta);
        s_plain += zi * zi;
    }
    let bound = 0.25 * kappa * s_shift - eta * eps * c1 * s_shift - eta * eps * eps * c2 * s_plain;
    Ok(QuadForm { value, bound })
}

/// `φ(x) = x − log(1 + x) ≥ 0`, accurate for small `|x|` where the
/// direct difference cancels.
pub fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // alternating series Σ_{k≥2} (−1)^k x^k / k
        let mut term = x * x;
        let mut sum = 0.0;
        for k in 2..24 {
            let t = term / k as f64;
            sum += if k % 2 == 0 { t } else { -t };
            term *= x;
        }
        sum
    } else {
        x - math::log1p(x)
    }
}

/// Relative entropy `Σ_i π_i Σ_cells (log(ū_i+η) − log(u_i+η))·vol` of cell
/// values against their mean state. Valid only when each species' mass
/// matches `ū_i · (#cells) · vol`.
pub fn relative_entropy_eta(
    ubar: &[f64],
    fields: &[&[f64]],
    eta: f64,
    pi: &[f64],
    cell_volume: f64,
) -> Result<f64, EntropyError> {
    check_len(ubar.len(), fields.len())?;
    check_len(ubar.len(), pi.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(EntropyError::InvalidParameter { name: "eta", value: eta });
    }
    if !(cell_volume > 0.0 && cell_volume.is_finite()) {
        return Err(EntropyError::InvalidParameter { name: "cell_volume", value: cell_volume });
    }
    let mut total = 0.0;
    for (i, (&ub, values)) in ubar.iter().zip(fields).enumerate() {
        let mass: f64 = values.iter().sum::<f64>() * cell_volume;
        let expected = ub * values.len() as f64 * cell_volume;
        if (mass - expected).abs() > MASS_MATCH_TOL * expected.abs().max(mass.abs()).max(f64::MIN_POSITIVE) {
            return Err(EntropyError::MassMismatch { species: i, mass, expected });
        }
        // with matching mass, Σ(log(ū+η) − log(u+η)) = Σ φ((u − ū)/(ū+η))
        let s: f64 = values.iter().map(|&v| x_minus_log1p((v - ub) / (ub + eta))).sum();
        total += pi[i] * s * cell_volume;
    }
    Ok(total)
}

/// `√8 · ‖ū+η‖_{L²(Ω)} · H^{1/2}`, with the constant's L² norm `(ū+η)√|Ω|`.
pub fn csiszar_kullback_rhs(ubar: f64, eta: f64, rel_entropy: f64, measure: f64) -> Result<f64, EntropyError> {
    if !(rel_entropy >= 0.0) {
        return Err(EntropyError::NegativeRelativeEntropy(rel_entropy));
    }
    if !(eta >= 0.0) {
        return Err(EntropyError::InvalidParameter { name: "eta", value: eta });
    }
    if !(measure > 0.0) {
        return Err(EntropyError::InvalidParameter { name: "measure", value: measure });
    }
    Ok(math::sqrt(8.0) * (ubar + eta) * math::sqrt(measure) * math::sqrt(rel_entropy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DensityVector {
        DensityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_closed_forms() {
        let pi = [0.3, 1.7, 2.0];
        assert!((entropy_h(&dv(&[1.0; 3]), &pi).unwrap() - 4.0).abs() < 1e-15);
        let e = core::f64::consts::E;
        assert!((entropy_h(&dv(&[e, e]), &[1.0, 1.0]).unwrap() - 2.0 * (e - 1.0)).abs() < 1e-15);
        let u = dv(&[0.4, 2.5, 7.0]);
        assert_eq!(entropy_heps(&u, &pi, 0.0).unwrap(), entropy_h(&u, &pi).unwrap());
        assert!((entropy_heps(&dv(&[1.0; 3]), &pi, 0.25).unwrap() - (4.0 - 0.75)).abs() < 1e-15);
        assert!(matches!(entropy_h(&u, &[1.0]), Err(EntropyError::DimensionMismatch { .. })));
    }

    #[test]
    fn entropy_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.gen_range(1..6);
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..50.0)).collect();
            let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..4.0)).collect();
            let eps = rng.gen_range(0.0..1.0);
            let mut oracle = 0.0;
            for i in 0..n {
                oracle += pi[i] * (u[i] - libm::log(u[i])) + eps * u[i] * (libm::log(u[i]) - 1.0);
            }
            let got = entropy_heps(&dv(&u), &pi, eps).unwrap();
            assert!((got - oracle).abs() <= 1e-14 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn w_from_u_closed_forms() {
        assert_eq!(w_from_u(&dv(&[1.0, 1.0]), &[2.0, 3.0], 0.5).unwrap(), vec![0.0, 0.0]);
        let e = core::f64::consts::E;
        let w = w_from_u(&dv(&[e]), &[1.0], 1.0).unwrap();
        assert!((w[0] - (2.0 - 1.0 / e)).abs() < 1e-15);
        assert!(matches!(w_from_u(&dv(&[1.0]), &[1.0], 0.0), Err(EntropyError::TransformNeedsPositiveEps(_))));
        assert!(matches!(u_from_w(&[0.0], &[1.0], 0.0), Err(EntropyError::TransformNeedsPositiveEps(_))));
    }

    #[test]
    fn u_from_w_zero_and_large_negative() {
        assert_eq!(u_from_w(&[0.0, 0.0], &[1.0, 5.0], 0.1).unwrap().as_slice(), &[1.0, 1.0]);
        // root of 1 − 1/u + log u = −50, from a 30-digit bisection
        let u = u_from_w(&[-50.0], &[1.0], 1.0).unwrap().as_slice()[0];
        assert!((u - 0.021_210_376_392_063_817).abs() < 1e-15, "{u}");
    }

    #[test]
    fn x_minus_log1p_branches_agree() {
        // near the switch the direct form loses at most a few digits
        for &x in &[-0.0999, -0.05, 0.05, 0.0999, 0.1, -0.1] {
            let direct = x - (x as f64).ln_1p();
            assert!((x_minus_log1p(x) - direct).abs() <= 1e-13 * direct, "{x}");
        }
        // leading terms of the series for tiny x
        let x = 1e-6;
        assert!((x_minus_log1p(x) - (0.5 * x * x - x * x * x / 3.0 + x.powi(4) / 4.0)).abs() <= 1e-15 * x * x);
        assert!(x_minus_log1p(-1e-9) > 0.0 && x_minus_log1p(0.0) == 0.0);
    }

    #[test]
    fn u_from_w_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let pi = rng.gen_range(0.1..5.0);
            let eps = rng.gen_range(1e-4..1.0);
            // keep w/ε below the exp overflow threshold
            let w = rng.gen_range(-100.0..pi + 600.0 * eps);
            let dw = rng.gen_range(1e-6..1.0f64).min(50.0 * eps);
            let a = invert_h_eps_prime_scalar(w, pi, eps);
            let b = invert_h_eps_prime_scalar(w + dw, pi, eps);
            assert!(b > a, "w={w} dw={dw}: {a} !< {b}");
        }
    }

    #[test]
    fn u_from_w_residual_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let pi = rng.gen_range(0.05..10.0);
            let eps = 10f64.powf(rng.gen_range(-6.0..0.5));
            let w = match rng.gen_range(0..3) {
                0 => rng.gen_range(-1e4..0.0),
                1 => pi * rng.gen_range(0.0..1.0),
                _ => pi + eps * rng.gen_range(0.0..500.0),
            };
            let u = invert_h_eps_prime_scalar(w, pi, eps);
            assert!(u > 0.0 && u.is_finite());
            let back = h_eps_prime_scalar(u, pi, eps);
            assert!((back - w).abs() <= 1e-13 * (1.0 + w.abs()), "w={w} pi={pi} eps={eps}: back={back}");
        }
    }

    #[test]
    fn hessian_and_matrices() {
        let pi = [2.0, 3.0];
        assert_eq!(hessian_heps_diag(&dv(&[1.0, 1.0]), &pi, 0.5).unwrap(), vec![2.5, 3.5]);
        assert_eq!(hessian_heps_diag(&dv(&[2.0, 0.5]), &pi, 0.0).unwrap(), vec![0.5, 12.0]);

        let c1 = CoefficientSet::new(vec![0.7], vec![0.3]).unwrap();
        let a = diffusion_a(&dv(&[2.0]), &c1).unwrap();
        assert!((a[(0, 0)] - (0.3 + 2.0 * 0.7 * 2.0)).abs() < 1e-15);

        let c = CoefficientSet::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(pressure_p(&dv(&[1.0, 1.0]), &c).unwrap(), vec![3.0, 7.0]);
        let c = CoefficientSet::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.25]).unwrap();
        let p = pressure_p(&dv(&[1e-300, 1e-300]), &c).unwrap();
        assert_eq!(p, vec![0.5, 0.25]);
        let a = diffusion_a(&dv(&[1e-300, 1e-300]), &c).unwrap();
        assert_eq!(a.as_slice(), &[0.5 + 2e-300, 2e-300, 3e-300, 0.25 + 8e-300]);
    }

    #[test]
    fn aeps_only_touches_diagonal() {
        let c = CoefficientSet::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.25]).unwrap();
        let w = EntropyWeights::for_coefficients(&c, vec![0.5, 0.5]).unwrap();
        let u = dv(&[0.7, 1.9]);
        let a = diffusion_a(&u, &c).unwrap();
        assert_eq!(diffusion_aeps(&u, &c, &w, 0.0).unwrap(), a);
        let ae = diffusion_aeps(&u, &c, &w, 0.3).unwrap();
        assert_eq!(ae[(0, 1)], a[(0, 1)]);
        assert_eq!(ae[(1, 0)], a[(1, 0)]);
        assert!((ae[(1, 1)] - a[(1, 1)] - 0.3 * w.mu[1] / 0.5 * 1.9 * 1.9).abs() < 1e-14);
    }

    #[test]
    fn matrices_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let n = rng.gen_range(1..5);
            let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let a0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..5.0)).collect();
            let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
            let eps = rng.gen_range(0.0..0.5);
            let c = CoefficientSet::new(a.clone(), a0.clone()).unwrap();
            let w = EntropyWeights::for_coefficients(&c, pi.clone()).unwrap();
            let m = diffusion_aeps(&dv(&u), &c, &w, eps).unwrap();
            let h = hessian_heps_diag(&dv(&u), &pi, eps).unwrap();
            for i in 0..n {
                assert!((h[i] - (pi[i] / (u[i] * u[i]) + eps / u[i])).abs() < 1e-12 * h[i]);
                let mut p = a0[i];
                for k in 0..n {
                    p += a[i * n + k] * u[k];
                }
                for j in 0..n {
                    let mut e = a[i * n + j] * u[i];
                    if i == j {
                        e += p + eps * w.mu[i] / pi[i] * u[i] * u[i];
                    }
                    assert!((m[(i, j)] - e).abs() <= 1e-13 * (1.0 + e.abs()));
                }
            }
        }
    }

    #[test]
    fn quadform_special_cases() {
        let c = CoefficientSet::new(vec![0.8, 0.3, 1.2, 0.5], vec![0.4, 0.0]).unwrap();
        let q = quadform_bound_ha(&dv(&[0.5, 2.0]), &[0.0, 0.0], &c, &[1.0, 2.0]).unwrap();
        assert_eq!((q.value, q.bound), (0.0, 0.0));

        // n = 1: value = (a10 + 2 a11 u) z²/u², equal to the bound
        let c1 = CoefficientSet::new(vec![0.7], vec![0.3]).unwrap();
        let (u, z) = (1.7, 0.9);
        let q = quadform_bound_ha(&dv(&[u]), &[z], &c1, &[1.0]).unwrap();
        let expected = (0.3 + 2.0 * 0.7 * u) * z * z / (u * u);
        assert!((q.value - expected).abs() < 1e-14);
        assert!((q.bound - expected).abs() < 1e-14);

        let w = EntropyWeights::for_coefficients(&c, vec![1.0, 2.0]).unwrap();
        let q0 = quadform_bound_ha(&dv(&[0.5, 2.0]), &[0.3, -1.0], &c, &[1.0, 2.0]).unwrap();
        let qe = quadform_bound_heps_aeps(&dv(&[0.5, 2.0]), &[0.3, -1.0], &c, &w, 0.0).unwrap();
        assert!((q0.value - qe.value).abs() < 1e-14 && (q0.bound - qe.bound).abs() < 1e-14);
    }

    #[test]
    fn heps_aeps_diagonal_tightness() {
        // diagonal a with μ at the floor: value − bound = ε a0/u Σ... only the ε·a_i0/u_i and μ terms remain
        let c = CoefficientSet::new(vec![0.6, 0.0, 0.0, 1.1], vec![0.2, 0.5]).unwrap();
        let w = EntropyWeights::for_coefficients(&c, vec![1.5, 0.5]).unwrap();
        let (u, z, eps) = ([0.8, 1.3], [0.4, -0.7], 0.01);
        let q = quadform_bound_heps_aeps(&dv(&u), &z, &c, &w, eps).unwrap();
        let mut gap = 0.0;
        for i in 0..2 {
            gap += eps * (c.a0(i) / u[i] + w.mu[i]) * z[i] * z[i];
        }
        assert!((q.value - q.bound - gap).abs() < 1e-13, "{} vs {}", q.value - q.bound, gap);
    }

    #[test]
    fn heps_aeps_rejects_small_mu() {
        let c = CoefficientSet::cyclic3([0.2; 3], [1.0; 3]).unwrap();
        let mut w = EntropyWeights::for_coefficients(&c, vec![1.0; 3]).unwrap();
        w.mu[1] = 0.5;
        let r = quadform_bound_heps_aeps(&dv(&[1.0; 3]), &[1.0; 3], &c, &w, 0.1);
        assert!(matches!(r, Err(EntropyError::Coefficients(CoeffError::MuTooSmall { species: 1, .. }))));
    }

    #[test]
    fn shifted_bound_cases() {
        let c = CoefficientSet::cyclic3([0.2; 3], [1.0; 3]).unwrap();
        let w = coeffmodel::find_pi_max_kappa(&c).unwrap();
        let eta0 = coeffmodel::eta0(&c).unwrap();
        let u = dv(&[0.3, 1.1, 2.2]);
        let r = quadform_bound_shifted(&u, &[1.0; 3], &c, &w, 0.01, 1.01 * eta0);
        assert!(matches!(r, Err(EntropyError::ShiftExceedsEta0 { .. })));

        let q = quadform_bound_shifted(&u, &[0.0; 3], &c, &w, 0.01, 0.5 * eta0).unwrap();
        assert_eq!(q.value, 0.0);
        assert!(q.bound <= 0.0 && q.holds());

        // η → 0: bound approaches (κ/4) Σ z²/u
        let z = [0.5, -0.2, 0.9];
        let q = quadform_bound_shifted(&u, &z, &c, &w, 0.01, 1e-12).unwrap();
        let limit: f64 = (0..3).map(|i| 0.25 * w.kappa * z[i] * z[i] / u.as_slice()[i]).sum();
        assert!((q.bound - limit).abs() < 1e-9 * limit.abs());

        let c0 = CoefficientSet::cyclic3([0.2; 3], [0.0; 3]).unwrap();
        let w0 = coeffmodel::find_pi_max_kappa(&c0).unwrap();
        assert!(matches!(
            quadform_bound_shifted(&u, &z, &c0, &w0, 0.01, 0.1),
            Err(EntropyError::Coefficients(CoeffError::Eta0Undefined { .. }))
        ));
    }

    #[test]
    fn relative_entropy_cases() {
        let u = [1.3, 0.4, 2.2];
        let flat = [1.3; 3];
        assert_eq!(relative_entropy_eta(&[1.3], &[&flat], 0.1, &[2.0], 0.5).unwrap(), 0.0);
        let v = relative_entropy_eta(&[1.3], &[&[1.3, 0.4, 2.2]], 0.1, &[1.0], 1.0 / 3.0).unwrap();
        assert!(v > 0.0);

        // two cells of volume ½, u = (2, 0), ū = 1, η = 1
        let h = relative_entropy_eta(&[1.0], &[&[2.0, 0.0]], 1.0, &[1.0], 0.5).unwrap();
        assert!((h - 0.5 * libm::log(4.0 / 3.0)).abs() < 1e-15);

        let r = relative_entropy_eta(&[1.0], &[&u], 0.1, &[1.0], 1.0);
        assert!(matches!(r, Err(EntropyError::MassMismatch { .. })));
    }

    #[test]
    fn csiszar_kullback_arithmetic() {
        assert_eq!(csiszar_kullback_rhs(1.7, 0.1, 0.0, 2.0).unwrap(), 0.0);
        assert!((csiszar_kullback_rhs(1.0, 0.0, 2.0, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(csiszar_kullback_rhs(1.0, 0.0, -1e-3, 1.0).is_err());
    }
}
