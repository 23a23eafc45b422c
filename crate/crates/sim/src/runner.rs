//! Scenario execution: `simulate` and the de-regularization study.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use skt_core::stepper::{
    self, dereg_table, dereg_trajectory, validate_eps_list, DeregTable, RunError, TrajectorySummary,
};
use skt_core::{SpeciesField, StepReport};

use crate::config::Scenario;
use crate::io::{self, DiagnosticsRow, IoError};
use crate::sweep::thread_pool;

/// Collects diagnostics rows at the output cadence.
pub struct DiagnosticsSink {
    cadence: usize,
    pub rows: Vec<DiagnosticsRow>,
    last: Option<DiagnosticsRow>,
}

impl DiagnosticsSink {
    pub fn new(cadence: usize) -> Self {
        Self { cadence: cadence.max(1), rows: Vec::new(), last: None }
    }

    /// Rows including the final step.
    pub fn finish(mut self) -> Vec<DiagnosticsRow> {
        if let Some(last) = self.last.take() {
            if self.rows.last().map(|r| r.step) != Some(last.step) {
                self.rows.push(last);
            }
        }
        self.rows
    }
}

impl stepper::StepSink for DiagnosticsSink {
    fn accept(&mut self, report: &StepReport, _state: &SpeciesField) {
        let row = DiagnosticsRow::from_report(report);
        if report.step % self.cadence == 0 {
            self.rows.push(row);
            self.last = None;
        } else {
            self.last = Some(row);
        }
    }
}

#[derive(Debug)]
pub struct SimulationOutput {
    pub summary: TrajectorySummary,
    pub rows: Vec<DiagnosticsRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Runs `scenario` up to `t_end` without touching the filesystem.
pub fn simulate(scenario: &Scenario, t_end: f64) -> Result<SimulationOutput, RunError> {
    let mut sink = DiagnosticsSink::new(scenario.output.cadence);
    let summary =
        stepper::run(&scenario.initial, &scenario.coeffs, &scenario.weights, &scenario.scheme, t_end, &mut sink)?;
    Ok(SimulationOutput { summary, rows: sink.finish() })
}

pub struct OutputPaths {
    pub diagnostics: PathBuf,
    pub final_state: PathBuf,
}

pub fn output_paths(scenario: &Scenario, dir: &Path) -> OutputPaths {
    OutputPaths {
        diagnostics: dir.join(&scenario.output.diagnostics),
        final_state: dir.join(&scenario.output.final_state),
    }
}

/// Runs and writes the diagnostics table and the final state.
pub fn simulate_to_disk(
    scenario: &Scenario,
    t_end: f64,
    dir: &Path,
) -> Result<(SimulationOutput, OutputPaths), SimulateError> {
    let out = simulate(scenario, t_end)?;
    let paths = output_paths(scenario, dir);
    io::write_diagnostics(&out.rows, &paths.diagnostics)?;
    io::write_field(&out.summary.final_state, out.summary.final_time, &paths.final_state)?;
    Ok((out, paths))
}

/// De-regularization study with one worker per `ε`.
pub fn dereg_parallel(scenario: &Scenario, t_end: f64, eps_list: &[f64]) -> Result<DeregTable, String> {
    validate_eps_list(eps_list).map_err(|e| e.to_string())?;
    let pool = thread_pool()?;
    let runs: Vec<_> = pool.install(|| {
        eps_list
            .par_iter()
            .map(|&e| {
                dereg_trajectory(&scenario.initial, &scenario.coeffs, &scenario.weights, &scenario.scheme, t_end, e)
            })
            .collect()
    });
    dereg_table(eps_list, runs).map_err(|e| e.to_string())
}
