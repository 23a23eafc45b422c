//! Feasibility sweep over the cyclic three-species family.

use rayon::prelude::*;
use skt_core::coeffmodel::{check_wcd, cyclic3_pi, max_kappa_lp, KAPPA_FEASIBILITY_TOL};
use skt_core::CoefficientSet;

/// Environment variable fixing the worker count of `sweep` and `dereg`.
pub const THREADS_ENV: &str = "SKT_THREADS";

/// Worker pool sized by `SKT_THREADS` (default: rayon's choice).
pub fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format!("{THREADS_ENV}={v:?} is not a positive integer"))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub a: f64,
    /// LP optimum `t*` of the max-κ program.
    pub lp_t: f64,
    pub lp_feasible: bool,
    pub closed_form: Option<[f64; 3]>,
    pub wcd: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Bisection-refined transition of LP feasibility, if the range contains one.
    pub lp_threshold: Option<f64>,
    /// Same for the closed-form weights.
    pub closed_form_threshold: Option<f64>,
}

fn coeffs(a: f64) -> CoefficientSet {
    CoefficientSet::cyclic3([a; 3], [1.0; 3]).expect("positive self-diffusion")
}

fn lp_feasible(a: f64) -> bool {
    max_kappa_lp(&coeffs(a)).t > KAPPA_FEASIBILITY_TOL
}

fn cf_feasible(a: f64) -> bool {
    matches!(cyclic3_pi(a, a, a), Ok(Some(_)))
}

pub fn sweep_point(a: f64) -> SweepPoint {
    let c = coeffs(a);
    let lp = max_kappa_lp(&c);
    SweepPoint {
        a,
        lp_feasible: lp.t > KAPPA_FEASIBILITY_TOL,
        lp_t: lp.t,
        closed_form: cyclic3_pi(a, a, a).ok().flatten(),
        wcd: check_wcd(&c),
    }
}

/// Bisects a feasibility flip between `lo` (infeasible) and `hi` (feasible).
fn bisect(mut lo: f64, mut hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn first_flip(points: &[SweepPoint], get: impl Fn(&SweepPoint) -> bool) -> Option<(f64, f64)> {
    points.windows(2).find(|w| !get(&w[0]) && get(&w[1])).map(|w| (w[0].a, w[1].a))
}

/// Evaluates `steps` evenly spaced values of `a_ii` in `[a_min, a_max]` in
/// parallel, then refines each feasibility transition by bisection.
pub fn sweep_cyclic3(a_min: f64, a_max: f64, steps: usize) -> Result<SweepResult, String> {
    if !(a_min > 0.0 && a_max > a_min && a_max.is_finite()) {
        return Err("need 0 < a-min < a-max".into());
    }
    if steps < 2 {
        return Err("need at least 2 steps".into());
    }
    let pool = thread_pool()?;
    let points: Vec<SweepPoint> = pool.install(|| {
        (0..steps)
            .into_par_iter()
            .map(|k| sweep_point(a_min + (a_max - a_min) * k as f64 / (steps - 1) as f64))
            .collect()
    });
    let lp_threshold = first_flip(&points, |p| p.lp_feasible).map(|(lo, hi)| bisect(lo, hi, lp_feasible));
    let closed_form_threshold =
        first_flip(&points, |p| p.closed_form.is_some()).map(|(lo, hi)| bisect(lo, hi, cf_feasible));
    Ok(SweepResult { points, lp_threshold, closed_form_threshold })
}
