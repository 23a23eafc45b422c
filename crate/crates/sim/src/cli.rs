//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use skt_core::coeffmodel::{self, check_detailed_balance, check_wcd, detailed_balance_residual, DETAILED_BALANCE_TOL};

use crate::config::{load_config, Scenario, WeightsSource};
use crate::presets::{preset_config, PRESETS};
use crate::runner::{dereg_parallel, simulate_to_disk};
use crate::selftest;
use crate::sweep::sweep_cyclic3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "skt-sim",
    version,
    about = "Entropy-stable simulator and coefficient certifier for SKT cross-diffusion systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a scenario and write diagnostics plus the final state.
    Simulate {
        config: PathBuf,
        /// Output directory (default: `output.dir` of the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override `scheme.t_end`.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Print the structural certificates of a coefficient set.
    CheckCoeffs { config: PathBuf },
    /// Feasibility sweep over a one-parameter family.
    Sweep {
        #[command(subcommand)]
        family: SweepFamily,
    },
    /// De-regularization study: runs with δ = ε for each ε in the list.
    Dereg {
        config: PathBuf,
        /// Comma-separated, non-increasing, e.g. `1e-3,1e-4,1e-5`.
        #[arg(long, value_delimiter = ',', required = true)]
        eps_list: Vec<f64>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Run the acceptance suite.
    Selftest,
    /// List presets, or print one as a config file.
    Presets {
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum SweepFamily {
    /// `a_ii = a` for all i, `a13 = a21 = a32 = 1`.
    Cyclic3 {
        #[arg(long, default_value_t = 0.10)]
        a_min: f64,
        #[arg(long, default_value_t = 0.15)]
        a_max: f64,
        #[arg(long, default_value_t = 64)]
        steps: usize,
    },
}

/// Parses `argv` (including the program name) and runs; returns the exit code.
pub fn cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(parsed.command, out) {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn load(path: &Path) -> Result<Scenario, (i32, String)> {
    let cfg = load_config(path).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    cfg.resolve().map_err(|e| (EXIT_CONFIG, e.to_string()))
}

fn yes(b: bool) -> &'static str {
    if b {
        "YES"
    } else {
        "NO"
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> CmdResult {
    let w = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cmd {
        Command::Simulate { config, out_dir, t_end } => {
            let s = load(&config)?;
            let t_end = t_end.unwrap_or(s.t_end);
            if !(t_end >= 0.0 && t_end.is_finite()) {
                return Err((EXIT_CONFIG, "--t-end must be finite and nonnegative".into()));
            }
            let dir = out_dir.unwrap_or_else(|| PathBuf::from(&s.output.dir));
            let (res, paths) = simulate_to_disk(&s, t_end, &dir).map_err(|e| match e {
                crate::runner::SimulateError::Io(e) => (EXIT_CONFIG, e.to_string()),
                e => (EXIT_NUMERICAL, e.to_string()),
            })?;
            let sm = &res.summary;
            w(out, format!("scenario: {}", s.label));
            w(
                out,
                format!(
                    "final time: {}  accepted steps: {}  rejected steps: {}",
                    sm.final_time, sm.accepted_steps, sm.rejected_steps
                ),
            );
            w(
                out,
                format!(
                    "entropy: {:.10e}  entropy-check failures: {}",
                    sm.final_report.entropy_heps, sm.entropy_failures
                ),
            );
            w(out, format!("max mass identity error: {:.2e}", sm.max_mass_identity_error));
            w(out, format!("diagnostics: {} ({} rows)", paths.diagnostics.display(), res.rows.len()));
            w(out, format!("final state: {}", paths.final_state.display()));
            if sm.entropy_failures > 0 {
                return Err((EXIT_NUMERICAL, format!("{} steps failed the entropy check", sm.entropy_failures)));
            }
            Ok(EXIT_OK)
        }
        Command::CheckCoeffs { config } => {
            let s = load(&config)?;
            let c = &s.coeffs;
            let db = check_detailed_balance(c, DETAILED_BALANCE_TOL).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let lp = coeffmodel::max_kappa_lp(c);
            let best = coeffmodel::find_pi_max_kappa(c);
            let kappa_text = match &best {
                Some(b) => format!("YES, kappa={:.6}", b.kappa),
                None => format!("NO, kappa={:.6}", lp.t),
            };
            w(
                out,
                format!(
                    "detailed balance: {}; weak cross-diffusion: {}; kappa > 0: {}",
                    yes(db.is_some()),
                    yes(check_wcd(c)),
                    kappa_text
                ),
            );
            if let Some(pi) = &db {
                w(out, format!("detailed-balance pi: {:?} (residual {:.1e})", pi, detailed_balance_residual(c, pi)));
            }
            if let Some(b) = &best {
                w(out, format!("max-kappa pi: {:?}", b.pi));
            }
            let src = match s.weights_source {
                WeightsSource::Given => "given",
                WeightsSource::MaxKappa => "max-kappa LP",
                WeightsSource::DetailedBalance => "detailed balance",
                WeightsSource::Uniform => "uniform fallback",
            };
            w(out, format!("scenario pi ({src}): {:?}, kappa={:.6}", s.weights.pi, s.weights.kappa));
            w(out, format!("mu: {:?}", s.weights.mu));
            match coeffmodel::eta0(c) {
                Ok(e) => w(out, format!("eta0: {e}")),
                Err(e) => w(out, format!("eta0: undefined ({e})")),
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { family: SweepFamily::Cyclic3 { a_min, a_max, steps } } => {
            let r = sweep_cyclic3(a_min, a_max, steps).map_err(|e| (EXIT_CONFIG, e))?;
            w(out, "a,lp_t,lp_feasible,closed_form_feasible,wcd".into());
            for p in &r.points {
                w(out, format!("{:.16e},{:.16e},{},{},{}", p.a, p.lp_t, p.lp_feasible, p.closed_form.is_some(), p.wcd));
            }
            match r.lp_threshold {
                Some(t) => w(out, format!("threshold (LP): {t:.9}")),
                None => w(out, "threshold (LP): none in range".into()),
            }
            match r.closed_form_threshold {
                Some(t) => {
                    w(out, format!("threshold (closed form): {t:.12}  a^3 - 8^-3 = {:.2e}", t * t * t - 1.0 / 512.0))
                }
                None => w(out, "threshold (closed form): none in range".into()),
            }
            Ok(EXIT_OK)
        }
        Command::Dereg { config, eps_list, t_end } => {
            let s = load(&config)?;
            let t_end = t_end.unwrap_or(s.t_end);
            if skt_core::stepper::validate_eps_list(&eps_list).is_err() {
                return Err((EXIT_CONFIG, "--eps-list must be positive and non-increasing".into()));
            }
            let table = dereg_parallel(&s, t_end, &eps_list).map_err(|e| (EXIT_NUMERICAL, e))?;
            w(out, "eps_a,eps_b,l2_distance".into());
            for d in &table.distances {
                w(out, format!("{:e},{:e},{:.16e}", d.eps_a, d.eps_b, d.distance));
            }
            if let Some(f) = &table.failure {
                return Err((EXIT_NUMERICAL, f.to_string()));
            }
            w(out, format!("cauchy: {}", yes(table.is_cauchy())));
            Ok(EXIT_OK)
        }
        Command::Selftest => {
            let mut all = true;
            for o in selftest::run_all() {
                all &= o.passed;
                w(out, o.line());
            }
            Ok(if all { EXIT_OK } else { EXIT_SELFTEST })
        }
        Command::Presets { dump } => {
            match dump {
                Some(name) => {
                    let cfg = preset_config(&name, &Default::default()).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
                    let _ = write!(out, "{}", cfg.to_toml());
                }
                None => {
                    for p in PRESETS {
                        let params: Vec<String> = p.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                        let params =
                            if params.is_empty() { String::new() } else { format!(" [{}]", params.join(", ")) };
                        w(out, format!("{:<22}{}{}", p.name, p.summary, params));
                    }
                }
            }
            Ok(EXIT_OK)
        }
    }
}
