//! Numerical core for the n-species Shigesada–Kawasaki–Teramoto (SKT)
//! cross-diffusion system
//!
//! ```text
//!   ∂t u_i = div( Σ_j A_ij(u) ∇u_j ),
//!   A_ij(u) = δ_ij a_i0 + δ_ij Σ_k a_ik u_k + a_ij u_i,
//! ```
//!
//! on a box with no-flux boundaries.
//!
//! The crate is `no_std` and only needs `alloc`. It provides
//!
//! - [`coeffmodel`]: coefficient sets and their structural certificates
//!   (detailed balance, the weak cross-diffusion test, and the logarithmic
//!   entropy margin `κ` found by a small linear program);
//! - [`entropy`]: entropy densities, the entropy-variable transform, mobility
//!   matrices and the quadratic-form lower bounds they satisfy;
//! - [`grid`]: cell-centred finite-volume operators with zero-flux closure;
//! - [`stepper`]: the regularized implicit Euler scheme in entropy variables,
//!   solved by damped Newton, with per-step entropy/mass verification and
//!   a-priori-estimate monitors.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coeffmodel;
pub mod entropy;
pub mod grid;
pub mod linalg;
pub mod lp;
mod math;
pub mod stepper;

pub use coeffmodel::{CoeffError, CoefficientSet, EntropyWeights};
pub use entropy::{DensityVector, EntropyError, RegularizationParams};
pub use grid::{Grid, GridError, SpeciesField};
pub use stepper::{SchemeConfig, SchemeMode, StepError, StepReport};
