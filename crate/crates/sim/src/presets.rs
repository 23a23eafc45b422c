//! Named scenario presets.

use std::collections::BTreeMap;

use crate::config::{
    CoefficientsSpec, ConfigError, GridSpec, InitialKind, InitialSpec, MetaSpec, ModeSpec, OutputSpec, ScenarioConfig,
    SchemeSpec, SCHEMA_VERSION,
};

pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Accepted `preset_params` keys with their defaults.
    pub params: &'static [(&'static str, f64)],
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "cyclic3",
        summary: "three species, a13 = a21 = a32 = 1, self-diffusion a_ii",
        params: &[("a_ii", 0.2)],
    },
    PresetInfo {
        name: "skt-two-species",
        summary: "symmetric two-species system, detailed balance with pi = (1/2, 1/2)",
        params: &[],
    },
    PresetInfo {
        name: "skt-two-species-asym",
        summary: "one-way cross-diffusion (a21 = 0), kappa > 0 without detailed balance; relaxes to its mean",
        params: &[],
    },
    PresetInfo { name: "heat1", summary: "one species, linear diffusion", params: &[] },
    PresetInfo {
        name: "segregation",
        summary: "two species starting in separate halves, strong cross-diffusion",
        params: &[],
    },
    PresetInfo {
        name: "porous1",
        summary: "one species, a0 + a11 u pressure (porous-medium-like)",
        params: &[("a0", 0.1), ("a11", 1.0)],
    },
    PresetInfo { name: "skt-2d", summary: "symmetric two-species system on a 16x16 square", params: &[] },
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

fn param(info: &PresetInfo, given: &BTreeMap<String, f64>) -> Result<BTreeMap<&'static str, f64>, ConfigError> {
    if let Some(k) = given.keys().find(|k| !info.params.iter().any(|(name, _)| name == k)) {
        return Err(ConfigError::Invalid {
            key: format!("preset_params.{k}"),
            reason: format!("not a parameter of preset `{}`", info.name),
        });
    }
    Ok(info.params.iter().map(|&(k, d)| (k, given.get(k).copied().unwrap_or(d))).collect())
}

fn scheme(eps: f64, tau: f64, t_end: f64, mode: ModeSpec) -> SchemeSpec {
    SchemeSpec {
        eps,
        delta: 0.0,
        eta: 0.0,
        tau,
        t_end,
        mode,
        newton_tol: skt_core::stepper::NewtonConfig::default().tol,
        newton_max_iters: skt_core::stepper::NewtonConfig::default().max_iters,
        damping: skt_core::stepper::NewtonConfig::default().damping,
        entropy_check: true,
        entropy_slack: skt_core::stepper::EntropyCheckConfig::default().slack,
    }
}

fn bumps(centers: &[&[f64]], width: f64, amplitude: f64) -> InitialSpec {
    let mut s = InitialSpec::of_kind(InitialKind::Gaussian);
    s.centers = Some(centers.iter().map(|c| c.to_vec()).collect());
    s.widths = Some(vec![width; centers.len()]);
    s.amplitudes = Some(vec![amplitude; centers.len()]);
    s
}

fn base(
    name: &str,
    params: BTreeMap<String, f64>,
    coefficients: CoefficientsSpec,
    grid: GridSpec,
    scheme: SchemeSpec,
    initial: InitialSpec,
) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        preset: None,
        preset_params: params,
        coefficients,
        grid,
        scheme,
        initial,
        output: OutputSpec { dir: format!("out/{name}"), ..OutputSpec::default() },
        meta: MetaSpec { label: name.to_string(), seed: 0 },
    }
}

fn line(cells: usize) -> GridSpec {
    GridSpec { cells: vec![cells], lengths: vec![1.0] }
}

/// Full configuration of preset `name`; `params` override its defaults.
///
/// The returned config has `preset = None`, so it is self-contained.
pub fn preset_config(name: &str, params: &BTreeMap<String, f64>) -> Result<ScenarioConfig, ConfigError> {
    let info = PRESETS.iter().find(|p| p.name == name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    let p = param(info, params)?;
    let keep = params.clone();
    let cfg = match name {
        "cyclic3" => {
            let d = p["a_ii"];
            base(
                name,
                keep,
                CoefficientsSpec {
                    a: vec![vec![d, 0.0, 1.0], vec![1.0, d, 0.0], vec![0.0, 1.0, d]],
                    a0: vec![1.0; 3],
                    pi: None,
                },
                line(100),
                scheme(1e-4, 1e-3, 0.5, ModeSpec::TiedDelta),
                bumps(&[&[0.2], &[0.5], &[0.8]], 0.08, 1.0),
            )
        }
        "skt-two-species" => base(
            name,
            keep,
            CoefficientsSpec { a: vec![vec![1.0, 0.5], vec![0.5, 1.0]], a0: vec![1.0, 1.0], pi: Some(vec![0.5, 0.5]) },
            line(64),
            scheme(1e-4, 1e-3, 0.5, ModeSpec::TiedDelta),
            bumps(&[&[0.3], &[0.7]], 0.1, 1.0),
        ),
        "skt-two-species-asym" => base(
            name,
            keep,
            CoefficientsSpec { a: vec![vec![0.4, 2.0], vec![0.0, 0.4]], a0: vec![1.0, 1.0], pi: None },
            line(200),
            scheme(1e-4, 1e-3, 3.0, ModeSpec::Standard),
            bumps(&[&[0.3], &[0.7]], 0.1, 1.0),
        ),
        "heat1" => base(
            name,
            keep,
            CoefficientsSpec { a: vec![vec![0.0]], a0: vec![1.0], pi: Some(vec![1.0]) },
            line(50),
            scheme(1e-4, 1e-3, 0.5, ModeSpec::TiedDelta),
            bumps(&[&[0.5]], 0.1, 1.0),
        ),
        "segregation" => {
            let mut init = InitialSpec::of_kind(InitialKind::Segregated);
            init.high = Some(1.0);
            init.sharpness = Some(0.05);
            base(
                name,
                keep,
                CoefficientsSpec { a: vec![vec![1.0, 3.0], vec![3.0, 1.0]], a0: vec![0.1, 0.1], pi: None },
                line(100),
                scheme(1e-4, 1e-3, 0.5, ModeSpec::TiedDelta),
                init,
            )
        }
        "porous1" => base(
            name,
            keep,
            CoefficientsSpec { a: vec![vec![p["a11"]]], a0: vec![p["a0"]], pi: Some(vec![1.0]) },
            line(64),
            scheme(1e-6, 1e-3, 0.5, ModeSpec::Standard),
            bumps(&[&[0.4]], 0.1, 1.0),
        ),
        "skt-2d" => base(
            name,
            keep,
            CoefficientsSpec { a: vec![vec![1.0, 0.5], vec![0.5, 1.0]], a0: vec![1.0, 1.0], pi: Some(vec![0.5, 0.5]) },
            GridSpec { cells: vec![16, 16], lengths: vec![1.0, 1.0] },
            scheme(1e-4, 1e-3, 0.5, ModeSpec::Standard),
            bumps(&[&[0.3, 0.3], &[0.7, 0.6]], 0.15, 1.0),
        ),
        _ => unreachable!("preset table and match arms agree"),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use skt_core::coeffmodel::{check_detailed_balance, check_wcd, kappa};

    #[test]
    fn every_preset_resolves() {
        assert!(PRESETS.len() >= 5);
        for name in preset_names() {
            let cfg = preset_config(name, &BTreeMap::new()).unwrap();
            let s = cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.initial.min_value() >= 1e-3, true, "{name}");
            let steps = (s.t_end / s.scheme.reg.tau).round() as usize;
            assert!(steps >= 500, "{name}: {steps}");
        }
    }

    #[test]
    fn cyclic3_certificates() {
        let c = preset_config("cyclic3", &BTreeMap::new()).unwrap().coefficients.build().unwrap();
        assert!(!check_wcd(&c));
        assert!(check_detailed_balance(&c, 1e-10).unwrap().is_none());
        assert!(skt_core::coeffmodel::find_pi_max_kappa(&c).is_some());
    }

    #[test]
    fn two_species_weights_are_half() {
        let s = preset_config("skt-two-species", &BTreeMap::new()).unwrap().resolve().unwrap();
        assert_eq!(s.weights.pi, vec![0.5, 0.5]);
        // 8·½·1 − ½·½
        assert_eq!(kappa(&s.coeffs, &[0.5, 0.5]).unwrap(), 3.75);
        assert!(check_detailed_balance(&s.coeffs, 1e-10).unwrap().is_some());
    }

    #[test]
    fn unknown_param_rejected() {
        let mut p = BTreeMap::new();
        p.insert("a_jj".to_string(), 1.0);
        let err = preset_config("cyclic3", &p).err().unwrap();
        assert!(err.to_string().contains("a_jj"));
    }
}
