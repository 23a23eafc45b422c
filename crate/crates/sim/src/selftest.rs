//! Acceptance suite: one check per criterion, deterministic under fixed seeds.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use skt_core::coeffmodel::{self, check_wcd, find_pi_max_kappa};
use skt_core::entropy::{
    h_eps_second_scalar, quadform_bound_ha, quadform_bound_heps_aeps, quadform_bound_shifted, u_from_w, w_from_u,
};
use skt_core::stepper::{NullSink, TrajectorySummary};
use skt_core::{CoefficientSet, DensityVector, SpeciesField};

use crate::config::{ModeSpec, Scenario, ScenarioConfig};
use crate::presets::{preset_config, preset_names};
use crate::runner::dereg_parallel;
use crate::sweep::{sweep_cyclic3, thread_pool};

pub const SEED: u64 = 0x5eed_2024;
pub const SAMPLES: usize = 100_000;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<38} [{:.2} s] {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(id: usize, title: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (passed, detail) = f();
    Outcome { id, title, passed, detail, elapsed: t.elapsed() }
}

fn preset(name: &str) -> ScenarioConfig {
    preset_config(name, &BTreeMap::new()).expect("shipped preset")
}

fn resolve(cfg: &ScenarioConfig) -> Scenario {
    cfg.resolve().expect("shipped preset resolves")
}

fn run_scenario(s: &Scenario) -> Result<TrajectorySummary, String> {
    skt_core::stepper::run(&s.initial, &s.coeffs, &s.weights, &s.scheme, s.t_end, &mut NullSink)
        .map_err(|e| e.to_string())
}

fn cyclic3(a: f64) -> CoefficientSet {
    CoefficientSet::cyclic3([a; 3], [1.0; 3]).expect("positive diagonal")
}

pub fn criterion_1() -> Outcome {
    timed(1, "cyclic3 kappa threshold", || {
        let start = Instant::now();
        let r = match sweep_cyclic3(0.10, 0.15, 64) {
            Ok(r) => r,
            Err(e) => return (false, e),
        };
        let secs = start.elapsed().as_secs_f64();
        let (Some(lp), Some(cf)) = (r.lp_threshold, r.closed_form_threshold) else {
            return (false, "no feasibility transition found".into());
        };
        let cf_err = (cf * cf * cf - 1.0 / 512.0).abs();
        let ok = (lp - 0.125).abs() <= 1e-3 && cf_err <= 1e-9 && secs < 10.0;
        (ok, format!("LP threshold {lp:.6}, closed form {cf:.12} (|a^3 - 8^-3| = {cf_err:.1e}), {secs:.2} s"))
    })
}

pub fn criterion_2() -> Outcome {
    timed(2, "weak cross-diffusion vs kappa", || {
        let wcd04 = check_wcd(&cyclic3(0.4));
        let wcd06 = check_wcd(&cyclic3(0.6));
        let k02 = find_pi_max_kappa(&cyclic3(0.2));
        let ok = !wcd04 && wcd06 && k02.as_ref().is_some_and(|w| w.kappa > 0.0);
        let kappa = k02.map_or(f64::NAN, |w| w.kappa);
        (ok, format!("wcd(0.4)={wcd04}, wcd(0.6)={wcd06}, kappa(0.2)={kappa:.6}"))
    })
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn random_certified(rng: &mut ChaCha8Rng) -> (CoefficientSet, skt_core::EntropyWeights) {
    loop {
        let n = rng.gen_range(2..=4);
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..2.0)).collect();
        for i in 0..n {
            a[i * n + i] = rng.gen_range(0.1..2.0);
        }
        let a0 = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
        let c = CoefficientSet::new(a, a0).expect("valid draw");
        if let Some(w) = find_pi_max_kappa(&c) {
            return (c, w);
        }
    }
}

pub fn criterion_3() -> Outcome {
    timed(3, "quadratic-form lower bounds", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut fails = [0usize; 3];
        let mut worst = [f64::INFINITY; 3];
        for _ in 0..SAMPLES {
            let (c, w) = random_certified(&mut rng);
            let n = c.n();
            let u = DensityVector::new((0..n).map(|_| log_uniform(&mut rng, 1e-3, 1e3)).collect()).expect("positive");
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let eps = log_uniform(&mut rng, 1e-6, 1.0);
            let eta = 0.5 * coeffmodel::eta0(&c).expect("a0 > 0");
            let qs = [
                quadform_bound_ha(&u, &z, &c, &w.pi),
                quadform_bound_heps_aeps(&u, &z, &c, &w, eps),
                quadform_bound_shifted(&u, &z, &c, &w, eps, eta),
            ];
            for (k, q) in qs.into_iter().enumerate() {
                match q {
                    Ok(q) => {
                        let margin = (q.value - q.bound) / (1.0 + q.value.abs());
                        worst[k] = worst[k].min(margin);
                        if margin < -1e-10 {
                            fails[k] += 1;
                        }
                    }
                    Err(_) => fails[k] += 1,
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        let ok = fails == [0; 3] && secs < 30.0;
        (
            ok,
            format!(
                "{SAMPLES} samples each, failures {fails:?}, min scaled margins [{:.1e}, {:.1e}, {:.1e}], {secs:.1} s",
                worst[0], worst[1], worst[2]
            ),
        )
    })
}

pub fn criterion_4() -> Outcome {
    timed(4, "entropy-variable bijection", || {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
        let mut strict_worst = 0.0f64;
        let mut cond_worst = 0.0f64;
        for k in 0..2 * SAMPLES {
            let u = log_uniform(&mut rng, 1e-6, 1e6);
            let pi = log_uniform(&mut rng, 0.1, 10.0);
            // first half: strict domain; second half extends ε down to 1e-6
            let eps = if k < SAMPLES { log_uniform(&mut rng, 1e-2, 10.0) } else { log_uniform(&mut rng, 1e-6, 10.0) };
            let w = match w_from_u(&DensityVector::new(vec![u]).expect("positive"), &[pi], eps) {
                Ok(w) => w[0],
                Err(_) => return (false, format!("w_from_u failed at u={u}")),
            };
            let back = match u_from_w(&[w], &[pi], eps) {
                Ok(b) => b.as_slice()[0],
                Err(_) => return (false, format!("u_from_w failed at w={w}")),
            };
            let rel = (back - u).abs() / u;
            if k < SAMPLES {
                strict_worst = strict_worst.max(rel);
            } else {
                let cond = (w.abs() + pi / u + eps * u.ln().abs()) / (u * h_eps_second_scalar(u, pi, eps));
                cond_worst = cond_worst.max(rel / (cond * f64::EPSILON));
            }
        }
        let ok = strict_worst <= 1e-12 && cond_worst <= 32.0;
        (
            ok,
            format!(
                "{SAMPLES} samples with eps in [1e-2,10]: max rel err {strict_worst:.2e}; {SAMPLES} with eps in [1e-6,10]: max err/(cond*eps_mach) {cond_worst:.1}"
            ),
        )
    })
}

pub fn criterion_5() -> Outcome {
    timed(5, "mass conservation / drift identity", || {
        let mut asym = preset("skt-two-species-asym");
        asym.scheme.t_end = 1.0;
        let mut sym = preset("skt-two-species");
        sym.scheme.t_end = 1.0;
        sym.scheme.mode = ModeSpec::TiedDelta;
        let runs: Vec<_> = [asym, sym].par_iter().map(|c| run_scenario(&resolve(c))).collect();
        let (a, b) = match (&runs[0], &runs[1]) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                return (
                    false,
                    format!("run failed: {:?}", runs.iter().filter_map(|r| r.as_ref().err()).collect::<Vec<_>>()),
                )
            }
        };
        let ok = a.accepted_steps >= 1000
            && b.accepted_steps >= 1000
            && a.max_mass_identity_error <= 1e-12
            && b.max_mass_identity_error <= 1e-10;
        (
            ok,
            format!(
                "delta=0: {} steps, max rel mass change {:.1e}; delta=eps=1e-4: {} steps, max drift-identity error {:.1e}",
                a.accepted_steps, a.max_mass_identity_error, b.accepted_steps, b.max_mass_identity_error
            ),
        )
    })
}

/// Runs of every shipped preset, shared by criteria 6 and 10.
pub struct PresetRun {
    pub name: &'static str,
    pub result: Result<TrajectorySummary, String>,
}

pub fn preset_runs() -> &'static [PresetRun] {
    static RUNS: OnceLock<Vec<PresetRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let pool = thread_pool().expect("thread pool");
        pool.install(|| {
            preset_names()
                .into_par_iter()
                .map(|name| PresetRun { name, result: run_scenario(&resolve(&preset(name))) })
                .collect()
        })
    })
}

pub fn criterion_6() -> Outcome {
    timed(6, "discrete entropy inequality", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in preset_runs() {
            match &r.result {
                Ok(s) => {
                    let good = s.entropy_failures == 0 && s.accepted_steps >= 500;
                    ok &= good;
                    parts.push(format!("{} {}/{}", r.name, s.accepted_steps - s.entropy_failures, s.accepted_steps));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{} failed: {e}", r.name));
                }
            }
        }
        (ok, format!("steps passing per preset: {}", parts.join(", ")))
    })
}

pub fn criterion_7() -> Outcome {
    timed(7, "relative-entropy decay to the mean", || {
        let start = Instant::now();
        let cfg = preset("skt-two-species-asym");
        let s = resolve(&cfg);
        let setup_ok = cfg.grid.cells == [200]
            && cfg.scheme.tau == 1e-3
            && s.coeffs.a0(0) == 1.0
            && s.coeffs.a0(1) == 1.0
            && s.t_end <= 20.0;
        let summary = match run_scenario(&s) {
            Ok(x) => x,
            Err(e) => return (false, e),
        };
        let secs = start.elapsed().as_secs_f64();
        let rel = summary.final_report.monitors.as_ref().and_then(|m| m.relative_entropy.clone());
        let Some(rel) = rel else { return (false, "no relative-entropy monitor".into()) };
        let l1 = rel.l1_distance.iter().cloned().fold(0.0, f64::max);
        let ok =
            setup_ok && summary.rel_entropy_increases == 0 && summary.ck_violations == 0 && l1 <= 1e-6 && secs < 60.0;
        (
            ok,
            format!(
                "T={}, H increases {} (max rel growth {:.1e}), CK violations {}, final L1 {:.2e}, {secs:.1} s",
                summary.final_time,
                summary.rel_entropy_increases,
                summary.max_rel_entropy_increase,
                summary.ck_violations,
                l1
            ),
        )
    })
}

pub fn criterion_8() -> Outcome {
    timed(8, "de-regularization Cauchy behaviour", || {
        let s = resolve(&preset("skt-two-species"));
        match dereg_parallel(&s, s.t_end, &[1e-3, 1e-4, 1e-5]) {
            Ok(t) => {
                let d: Vec<String> = t.distances.iter().map(|d| format!("{:.3e}", d.distance)).collect();
                (t.is_cauchy() && t.distances.len() == 2, format!("consecutive L2(Q_T) distances [{}]", d.join(", ")))
            }
            Err(e) => (false, e),
        }
    })
}

/// Final states of the porous-medium refinement study, coarsest first.
pub fn self_convergence_errors(levels: usize) -> Result<Vec<f64>, String> {
    let base = preset("porous1");
    let configs: Vec<ScenarioConfig> = (0..=levels)
        .map(|l| {
            let mut c = base.clone();
            c.grid.cells = vec![32 << l];
            c.scheme.tau = 2e-3 / (1u32 << l) as f64;
            c.scheme.t_end = 0.05;
            c
        })
        .collect();
    let finals: Vec<Result<SpeciesField, String>> =
        configs.par_iter().map(|c| run_scenario(&resolve(c)).map(|s| s.final_state)).collect();
    let finals: Vec<SpeciesField> = finals.into_iter().collect::<Result<_, _>>()?;
    let reference = &finals[levels];
    let mut errors = Vec::with_capacity(levels);
    for (l, u) in finals[..levels].iter().enumerate() {
        let mut r = reference.clone();
        for k in (l..levels).rev() {
            let coarse = finals[k].grid();
            r = r.restrict_by_two(coarse).map_err(|e| e.to_string())?;
        }
        let sq: f64 = u.values().iter().zip(r.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        errors.push((sq * u.grid().cell_volume()).sqrt());
    }
    Ok(errors)
}

pub fn criterion_9() -> Outcome {
    timed(9, "self-convergence under refinement", || match self_convergence_errors(3) {
        Ok(e) => {
            let ratios: Vec<f64> = e.windows(2).map(|p| p[0] / p[1]).collect();
            let ok = ratios.iter().all(|r| *r >= 1.8);
            (
                ok,
                format!(
                    "L2 errors vs finest [{}], ratios [{}]",
                    e.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "),
                    ratios.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
                ),
            )
        }
        Err(e) => (false, e),
    })
}

pub fn criterion_10() -> Outcome {
    timed(10, "duality monitor", || {
        let mut ok = true;
        let mut bad = Vec::new();
        for r in preset_runs() {
            let good = match &r.result {
                Ok(s) => s.duality_pointwise_ok && s.monitors_finite(),
                Err(_) => false,
            };
            if !good {
                bad.push(r.name);
            }
            ok &= good;
        }
        let detail = if ok {
            format!(
                "{} presets: accumulations finite, u^2 p(u) >= a_ii u^3 in every cell and step",
                preset_runs().len()
            )
        } else {
            format!("violations in {bad:?}")
        };
        (ok, detail)
    })
}

pub fn run_all() -> Vec<Outcome> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ]
}
