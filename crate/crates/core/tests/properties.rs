use proptest::prelude::*;
use skt_core::coeffmodel::{self, find_pi_max_kappa, kappa};
use skt_core::entropy::{
    h_eps_second_scalar, quadform_bound_ha, quadform_bound_heps_aeps, quadform_bound_shifted, u_from_w, w_from_u,
};
use skt_core::grid::{face_fluxes, flux_divergence};
use skt_core::stepper::{implicit_step, verify_entropy_step};
use skt_core::{CoefficientSet, DensityVector, Grid, RegularizationParams, SchemeConfig, SpeciesField};

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

/// Coefficient sets with 2..=4 species and a positive κ margin.
fn certified_coeffs() -> impl Strategy<Value = CoefficientSet> {
    (2usize..=4)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0.0f64..2.0, n * n),
                prop::collection::vec(0.05f64..2.0, n),
                prop::collection::vec(0.1f64..2.0, n),
            )
        })
        .prop_map(|(n, mut a, a0, diag)| {
            // strong self-diffusion keeps the LP feasible for most draws
            for i in 0..n {
                a[i * n + i] = diag[i];
            }
            CoefficientSet::new(a, a0).unwrap()
        })
        .prop_filter("needs kappa > 0", |c| find_pi_max_kappa(c).is_some())
}

fn scaled_slack(v: f64) -> f64 {
    1e-10 * (1.0 + v.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_round_trip(u in log_uniform(1e-6, 1e6), pi in log_uniform(0.1, 10.0), eps in log_uniform(1e-2, 10.0)) {
        let w = w_from_u(&DensityVector::new(vec![u]).unwrap(), &[pi], eps).unwrap();
        let back = u_from_w(&w, &[pi], eps).unwrap().as_slice()[0];
        prop_assert!((back - u).abs() <= 1e-12 * u, "u={} back={}", u, back);
    }

    /// For small ε the map flattens at large u; the error then tracks the
    /// conditioning of w rather than a fixed relative bound.
    #[test]
    fn transform_round_trip_conditioned(u in log_uniform(1e-6, 1e6), pi in log_uniform(0.1, 10.0), eps in log_uniform(1e-6, 10.0)) {
        let w = w_from_u(&DensityVector::new(vec![u]).unwrap(), &[pi], eps).unwrap()[0];
        let back = u_from_w(&[w], &[pi], eps).unwrap().as_slice()[0];
        let cond = (w.abs() + pi / u + eps * u.ln().abs()) / (u * h_eps_second_scalar(u, pi, eps));
        prop_assert!((back - u).abs() <= 32.0 * cond * f64::EPSILON * u, "u={} back={} cond={}", u, back, cond);
    }

    #[test]
    fn lp_weights_reproduce_kappa(c in certified_coeffs()) {
        let w = find_pi_max_kappa(&c).unwrap();
        prop_assert!((kappa(&c, &w.pi).unwrap() - w.kappa).abs() <= 1e-12 * (1.0 + w.kappa.abs()));
        prop_assert!((w.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // the LP optimum is at least as good as uniform weights
        let uniform = vec![1.0 / c.n() as f64; c.n()];
        prop_assert!(w.kappa >= kappa(&c, &uniform).unwrap() - 1e-12);
        w.validate(&c).unwrap();
    }

    #[test]
    fn quadform_bounds_hold(
        c in certified_coeffs(),
        seed_u in prop::collection::vec(log_uniform(1e-3, 1e3), 4),
        seed_z in prop::collection::vec(-10.0f64..10.0, 4),
        eps in log_uniform(1e-6, 1.0),
    ) {
        let n = c.n();
        let weights = find_pi_max_kappa(&c).unwrap();
        let u = DensityVector::new(seed_u[..n].to_vec()).unwrap();
        let z = &seed_z[..n];
        let q = quadform_bound_ha(&u, z, &c, &weights.pi).unwrap();
        prop_assert!(q.value >= q.bound - scaled_slack(q.value), "{:?}", q);
        let q = quadform_bound_heps_aeps(&u, z, &c, &weights, eps).unwrap();
        prop_assert!(q.value >= q.bound - scaled_slack(q.value), "{:?}", q);
        let eta = 0.5 * coeffmodel::eta0(&c).unwrap();
        let q = quadform_bound_shifted(&u, z, &c, &weights, eps, eta).unwrap();
        prop_assert!(q.value >= q.bound - scaled_slack(q.value), "{:?}", q);
    }

    #[test]
    fn flux_divergence_telescopes(
        c in certified_coeffs(),
        vals in prop::collection::vec(0.01f64..5.0, 4 * 24),
        eps in 0.0f64..0.1,
    ) {
        let n = c.n();
        let weights = find_pi_max_kappa(&c).unwrap();
        let g = Grid::new_2d(6, 4, 1.0, 0.7).unwrap();
        let f = SpeciesField::new(g.clone(), n, vals[..n * 24].to_vec()).unwrap();
        let rates = flux_divergence(&f, &c, &weights, eps).unwrap();
        let fluxes = face_fluxes(&f, &c, &weights, eps).unwrap();
        for i in 0..n {
            let total: f64 = rates[i * 24..(i + 1) * 24].iter().sum::<f64>() * g.cell_volume();
            let scale: f64 = g.faces().iter().enumerate().map(|(k, face)| (fluxes[k * n + i] * face.area).abs()).sum();
            prop_assert!(total.abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn poisson_inverts_laplacian(vals in prop::collection::vec(-1.0f64..1.0, 30)) {
        let g = Grid::new_1d(30, 1.3).unwrap();
        let mean = vals.iter().sum::<f64>() / 30.0;
        let rhs: Vec<f64> = vals.iter().map(|v| v - mean).collect();
        let psi = g.neumann_poisson_solve(&rhs).unwrap();
        let lap = g.laplacian(&psi).unwrap();
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..30 {
            prop_assert!((lap[k] + rhs[k]).abs() <= 1e-10 * scale.max(1e-300));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn implicit_steps_stay_positive_and_entropic(
        c in certified_coeffs(),
        vals in prop::collection::vec(log_uniform(1e-2, 3.0), 4 * 16),
        delta in prop_oneof![Just(0.0), 1e-3f64..1e-2],
    ) {
        let n = c.n();
        let weights = find_pi_max_kappa(&c).unwrap();
        let g = Grid::new_1d(16, 1.0).unwrap();
        let mut u = SpeciesField::new(g, n, vals[..n * 16].to_vec()).unwrap();
        let cfg = SchemeConfig::new(RegularizationParams::new(1e-3, delta, 0.0, 1e-3).unwrap());
        for _ in 0..5 {
            let out = implicit_step(&u, &c, &weights, &cfg).unwrap();
            prop_assert!(out.next.min_value() > 0.0);
            prop_assert!(out.report.mass_identity_error <= 1e-10, "{}", out.report.mass_identity_error);
            if delta == 0.0 {
                prop_assert!(out.report.mass_identity_error <= 1e-12);
            }
            prop_assert!(verify_entropy_step(&u, &out.next, &out.w, &out.report, &weights, &cfg).passed);
            u = out.next;
        }
    }
}
