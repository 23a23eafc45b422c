//! Scenario configuration files.
//!
//! A scenario is a TOML document with the sections `[coefficients]`,
//! `[grid]`, `[scheme]`, `[initial]`, `[output]` and an optional `[meta]`.
//! Naming a `preset` at the top level fills every section from the preset;
//! sections present in the file then override the preset key by key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skt_core::coeffmodel::{self, check_detailed_balance, DETAILED_BALANCE_TOL};
use skt_core::stepper::{EntropyCheckConfig, NewtonConfig};
use skt_core::{CoefficientSet, EntropyWeights, Grid, RegularizationParams, SchemeConfig, SchemeMode, SpeciesField};

use crate::presets;

pub const SCHEMA_VERSION: u32 = 1;

/// Sections every scenario needs once presets are applied.
pub const REQUIRED_SECTIONS: [&str; 5] = ["coefficients", "grid", "scheme", "initial", "output"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: i64, expected: u32 },
    #[error("missing key `schema_version`")]
    MissingSchemaVersion,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub preset_params: BTreeMap<String, f64>,
    pub coefficients: CoefficientsSpec,
    pub grid: GridSpec,
    pub scheme: SchemeSpec,
    pub initial: InitialSpec,
    pub output: OutputSpec,
    #[serde(default)]
    pub meta: MetaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSpec {
    /// Rows of the cross/self-diffusion matrix.
    pub a: Vec<Vec<f64>>,
    pub a0: Vec<f64>,
    /// Entropy weights; chosen automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    #[default]
    Standard,
    TiedDelta,
}

fn default_newton_tol() -> f64 {
    NewtonConfig::default().tol
}
fn default_newton_iters() -> usize {
    NewtonConfig::default().max_iters
}
fn default_damping() -> f64 {
    NewtonConfig::default().damping
}
fn default_true() -> bool {
    true
}
fn default_slack() -> f64 {
    EntropyCheckConfig::default().slack
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub eps: f64,
    #[serde(default)]
    pub delta: f64,
    /// Shift of the relative-entropy monitor; 0 selects `min(η₀/2, 0.1)`.
    #[serde(default)]
    pub eta: f64,
    pub tau: f64,
    pub t_end: f64,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_iters")]
    pub newton_max_iters: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_true")]
    pub entropy_check: bool,
    #[serde(default = "default_slack")]
    pub entropy_slack: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// `levels[i]` everywhere.
    Constant,
    /// `floor + amplitude_i · exp(−|x − c_i|²/(2 w_i²))`.
    Gaussian,
    /// Species `i` fills the `i`-th of `n` equal slabs along `x`, with
    /// `tanh` edges of width `sharpness`.
    Segregated,
    /// Independent uniform values in `[low, high]`, seeded by `meta.seed`.
    Random,
}

fn default_floor() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
}

impl InitialSpec {
    pub fn of_kind(kind: InitialKind) -> Self {
        Self {
            kind,
            floor: default_floor(),
            levels: None,
            centers: None,
            widths: None,
            amplitudes: None,
            high: None,
            sharpness: None,
            low: None,
        }
    }
}

fn default_dir() -> String {
    "out".into()
}
fn default_diag() -> String {
    "diagnostics.csv".into()
}
fn default_final() -> String {
    "final_state.txt".into()
}
fn default_cadence() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_diag")]
    pub diagnostics: String,
    #[serde(default = "default_final")]
    pub final_state: String,
    /// Diagnostics row every `cadence` accepted steps, plus first and last.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            diagnostics: default_diag(),
            final_state: default_final(),
            cadence: default_cadence(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSpec {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub seed: u64,
}

/// How the entropy weights were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightsSource {
    Given,
    MaxKappa,
    DetailedBalance,
    /// No certificate found; uniform weights, `κ ≤ 0`.
    Uniform,
}

/// A validated, ready-to-run scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub label: String,
    pub coeffs: CoefficientSet,
    pub weights: EntropyWeights,
    pub weights_source: WeightsSource,
    pub initial: SpeciesField,
    pub scheme: SchemeConfig,
    pub t_end: f64,
    pub output: OutputSpec,
}

impl Scenario {
    pub fn grid(&self) -> &Grid {
        self.initial.grid()
    }
}

/// Reads and resolves a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

/// Parses config text, applying the preset (if any) underneath the file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let file: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
    match file.get("schema_version") {
        None => return Err(ConfigError::MissingSchemaVersion),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(toml::Value::Integer(v)) => {
            return Err(ConfigError::SchemaVersion { found: *v, expected: SCHEMA_VERSION })
        }
        Some(_) => return Err(invalid("schema_version", "must be an integer")),
    }
    let merged = match file.get("preset") {
        Some(toml::Value::String(name)) => {
            let params = match file.get("preset_params") {
                None => BTreeMap::new(),
                Some(v) => v
                    .clone()
                    .try_into::<BTreeMap<String, f64>>()
                    .map_err(|e| invalid("preset_params", e.message().to_string()))?,
            };
            let base = presets::preset_config(name, &params)?;
            let mut table = toml::Table::try_from(base).map_err(|e| ConfigError::Parse(e.to_string()))?;
            merge_tables(&mut table, file);
            table
        }
        Some(_) => return Err(invalid("preset", "must be a string")),
        None => file,
    };
    for section in REQUIRED_SECTIONS {
        if !merged.contains_key(section) {
            return Err(ConfigError::MissingSection(section.to_string()));
        }
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let coeffs = self.coefficients.build()?;
        let n = coeffs.n();
        let grid = self.grid.build()?;
        let (weights, weights_source) = self.coefficients.weights(&coeffs)?;
        let scheme = self.scheme.build(grid.dim())?;
        let initial = self.initial.build(&grid, n, self.meta.seed)?;
        if self.output.cadence == 0 {
            return Err(invalid("output.cadence", "must be at least 1"));
        }
        Ok(Scenario {
            label: if self.meta.label.is_empty() {
                self.preset.clone().unwrap_or_default()
            } else {
                self.meta.label.clone()
            },
            coeffs,
            weights,
            weights_source,
            initial,
            scheme,
            t_end: self.scheme.t_end,
            output: self.output.clone(),
        })
    }
}

impl CoefficientsSpec {
    pub fn build(&self) -> Result<CoefficientSet, ConfigError> {
        let n = self.a.len();
        if n == 0 {
            return Err(invalid("coefficients.a", "needs at least one row"));
        }
        if let Some(row) = self.a.iter().position(|r| r.len() != n) {
            return Err(invalid(
                "coefficients.a",
                format!("row {row} has {} entries, expected {n}", self.a[row].len()),
            ));
        }
        if self.a0.len() != n {
            return Err(invalid("coefficients.a0", format!("has {} entries, expected {n}", self.a0.len())));
        }
        CoefficientSet::new(self.a.concat(), self.a0.clone()).map_err(|e| invalid("coefficients", e.to_string()))
    }

    pub fn weights(&self, coeffs: &CoefficientSet) -> Result<(EntropyWeights, WeightsSource), ConfigError> {
        if let Some(pi) = &self.pi {
            let w = EntropyWeights::for_coefficients(coeffs, pi.clone())
                .map_err(|e| invalid("coefficients.pi", e.to_string()))?;
            return Ok((w, WeightsSource::Given));
        }
        if let Some(w) = coeffmodel::find_pi_max_kappa(coeffs) {
            return Ok((w, WeightsSource::MaxKappa));
        }
        let db =
            check_detailed_balance(coeffs, DETAILED_BALANCE_TOL).map_err(|e| invalid("coefficients", e.to_string()))?;
        let (pi, source) = match db {
            Some(pi) => (pi, WeightsSource::DetailedBalance),
            None => (vec![1.0 / coeffs.n() as f64; coeffs.n()], WeightsSource::Uniform),
        };
        let w = EntropyWeights::for_coefficients(coeffs, pi).map_err(|e| invalid("coefficients", e.to_string()))?;
        Ok((w, source))
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, ConfigError> {
        if self.cells.len() != self.lengths.len() {
            return Err(invalid("grid", "cells and lengths must have the same length"));
        }
        if self.cells.iter().product::<usize>() > 1_000_000 {
            return Err(invalid("grid.cells", "more than 10^6 cells"));
        }
        Grid::new(self.cells.len(), &self.cells, &self.lengths).map_err(|e| invalid("grid", e.to_string()))
    }
}

impl SchemeSpec {
    pub fn build(&self, dim: usize) -> Result<SchemeConfig, ConfigError> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(invalid("scheme.eps", "must lie in (0, 1]"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid("scheme.t_end", "must be finite and nonnegative"));
        }
        if self.mode == ModeSpec::TiedDelta && dim != 1 {
            return Err(invalid("scheme.mode", "tied-delta requires a one-dimensional grid"));
        }
        let reg = RegularizationParams::new(self.eps, self.delta, self.eta, self.tau)
            .map_err(|e| invalid("scheme", e.to_string()))?;
        let cfg = SchemeConfig {
            reg,
            newton: NewtonConfig { tol: self.newton_tol, max_iters: self.newton_max_iters, damping: self.damping },
            mode: match self.mode {
                ModeSpec::Standard => SchemeMode::Standard,
                ModeSpec::TiedDelta => SchemeMode::TiedDelta,
            },
            entropy_check: EntropyCheckConfig { enabled: self.entropy_check, slack: self.entropy_slack },
        };
        cfg.validate().map_err(|e| invalid("scheme", e.to_string()))?;
        Ok(cfg)
    }
}

impl InitialSpec {
    fn need<'a, T>(&self, v: &'a Option<T>, key: &str) -> Result<&'a T, ConfigError> {
        v.as_ref().ok_or_else(|| invalid(&format!("initial.{key}"), format!("required for kind {:?}", self.kind)))
    }

    pub fn build(&self, grid: &Grid, n: usize, seed: u64) -> Result<SpeciesField, ConfigError> {
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(invalid("initial.floor", "must be finite and nonnegative"));
        }
        let per_species = |key: &str, v: &Vec<f64>| -> Result<(), ConfigError> {
            if v.len() != n {
                return Err(invalid(&format!("initial.{key}"), format!("needs {n} entries, found {}", v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(invalid(&format!("initial.{key}"), "entries must be finite and nonnegative"));
            }
            Ok(())
        };
        let field = match self.kind {
            InitialKind::Constant => {
                let levels = self.need(&self.levels, "levels")?;
                per_species("levels", levels)?;
                SpeciesField::constant(grid.clone(), levels)
            }
            InitialKind::Gaussian => {
                let centers = self.need(&self.centers, "centers")?;
                let widths = self.need(&self.widths, "widths")?;
                let amps = self.need(&self.amplitudes, "amplitudes")?;
                per_species("widths", widths)?;
                per_species("amplitudes", amps)?;
                if centers.len() != n || centers.iter().any(|c| c.len() != grid.dim()) {
                    return Err(invalid("initial.centers", format!("needs {n} points of dimension {}", grid.dim())));
                }
                if widths.iter().any(|w| *w <= 0.0) {
                    return Err(invalid("initial.widths", "must be positive"));
                }
                SpeciesField::from_fn(grid.clone(), n, |i, x| {
                    let r2: f64 = (0..grid.dim()).map(|d| (x[d] - centers[i][d]).powi(2)).sum();
                    self.floor + amps[i] * (-r2 / (2.0 * widths[i] * widths[i])).exp()
                })
            }
            InitialKind::Segregated => {
                let high = *self.need(&self.high, "high")?;
                let sharp = *self.need(&self.sharpness, "sharpness")?;
                if !(high > 0.0 && sharp > 0.0) {
                    return Err(invalid("initial", "high and sharpness must be positive"));
                }
                let len = grid.lengths()[0];
                SpeciesField::from_fn(grid.clone(), n, |i, x| {
                    let lo = i as f64 * len / n as f64;
                    let hi = (i + 1) as f64 * len / n as f64;
                    let inside = 0.5 * (((x[0] - lo) / sharp).tanh() - ((x[0] - hi) / sharp).tanh());
                    self.floor + high * inside
                })
            }
            InitialKind::Random => {
                let low = *self.need(&self.low, "low")?;
                let high = *self.need(&self.high, "high")?;
                if !(low > 0.0 && high > low && high.is_finite()) {
                    return Err(invalid("initial", "random needs 0 < low < high"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                SpeciesField::from_fn(grid.clone(), n, |_, _| rng.gen_range(low..high))
            }
        };
        field.map_err(|e| invalid("initial", e.to_string()))
    }
}
