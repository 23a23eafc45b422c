//! Diagnostics tables and field snapshots.
//!
//! Both formats are plain text, carry a version line, and print every float
//! with 17 significant digits so they read back bit-exactly. Files are written
//! to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use skt_core::{Grid, SpeciesField, StepReport};

pub const DIAGNOSTICS_VERSION: &str = "# skt-sim diagnostics v1";
pub const FIELD_VERSION: &str = "# skt-sim field v1";

/// Columns shared by all species, in file order.
pub const SCALAR_COLUMNS: [&str; 12] = [
    "step",
    "time",
    "tau",
    "newton_iters",
    "newton_residual",
    "entropy_heps",
    "dissipation",
    "delta_term",
    "entropy_margin",
    "mass_identity_error",
    "min_density",
    "h_eta",
];

/// Per-species columns; species `i` contributes `<name>_<i>` for each.
pub const SPECIES_COLUMNS: [&str; 7] = ["mass", "l1", "l2", "l3", "fisher", "ck_l1", "ck_rhs"];

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesDiagnostics {
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub fisher: f64,
    /// `‖u_i − ū_i‖_{L¹}`.
    pub ck_l1: f64,
    /// Csiszár–Kullback bound on `ck_l1`.
    pub ck_rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub tau: f64,
    pub newton_iters: usize,
    pub newton_residual: f64,
    pub entropy_heps: f64,
    pub dissipation: f64,
    pub delta_term: f64,
    /// Entropy-check margin; `NaN` when the check did not run (step 0).
    pub entropy_margin: f64,
    pub mass_identity_error: f64,
    pub min_density: f64,
    /// Weighted relative entropy; `NaN` when no shift is available.
    pub h_eta: f64,
    pub species: Vec<SpeciesDiagnostics>,
}

impl DiagnosticsRow {
    pub fn from_report(r: &StepReport) -> Self {
        let n = r.mass.len();
        let m = r.monitors.as_ref();
        let rel = m.and_then(|m| m.relative_entropy.as_ref());
        let species = (0..n)
            .map(|i| SpeciesDiagnostics {
                mass: r.mass[i],
                l1: m.map_or(f64::NAN, |m| m.norms[i].l1),
                l2: m.map_or(f64::NAN, |m| m.norms[i].l2),
                l3: m.map_or(f64::NAN, |m| m.norms[i].l3),
                fisher: m.map_or(f64::NAN, |m| m.fisher[i]),
                ck_l1: rel.map_or(f64::NAN, |r| r.l1_distance[i]),
                ck_rhs: rel.map_or(f64::NAN, |r| r.ck_rhs[i]),
            })
            .collect();
        Self {
            step: r.step,
            time: r.time,
            tau: r.tau,
            newton_iters: r.newton_iters,
            newton_residual: r.newton_residual,
            entropy_heps: r.entropy_heps,
            dissipation: r.entropy_dissipation,
            delta_term: r.delta_term,
            entropy_margin: r.entropy_check.map_or(f64::NAN, |c| c.margin),
            mass_identity_error: r.mass_identity_error,
            min_density: r.min_density,
            h_eta: rel.map_or(f64::NAN, |r| r.total),
            species,
        }
    }

    /// Entries that must be finite are finite, and the sign invariants of a
    /// step report hold. `entropy_margin` is only checked when present.
    pub fn is_consistent(&self) -> bool {
        let scalars = [
            self.time,
            self.tau,
            self.newton_residual,
            self.entropy_heps,
            self.dissipation,
            self.delta_term,
            self.mass_identity_error,
        ];
        let species_ok = self
            .species
            .iter()
            .all(|s| [s.mass, s.l1, s.l2, s.l3, s.fisher].iter().all(|v| v.is_finite() && *v >= 0.0));
        scalars.iter().all(|v| v.is_finite())
            && self.min_density > 0.0
            && self.tau >= 0.0
            && self.delta_term >= 0.0
            && (self.entropy_margin.is_nan() || self.entropy_margin >= 0.0)
            && species_ok
    }
}

pub fn diagnostics_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = SCALAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..n {
        h.extend(SPECIES_COLUMNS.iter().map(|c| format!("{c}_{i}")));
    }
    h
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(path))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

pub fn diagnostics_to_string(rows: &[DiagnosticsRow]) -> String {
    let n = rows.first().map_or(0, |r| r.species.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(diagnostics_header(n)).expect("writing to memory");
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            f(r.time),
            f(r.tau),
            r.newton_iters.to_string(),
            f(r.newton_residual),
            f(r.entropy_heps),
            f(r.dissipation),
            f(r.delta_term),
            f(r.entropy_margin),
            f(r.mass_identity_error),
            f(r.min_density),
            f(r.h_eta),
        ];
        for s in &r.species {
            rec.extend([s.mass, s.l1, s.l2, s.l3, s.fisher, s.ck_l1, s.ck_rhs].map(f));
        }
        w.write_record(rec).expect("writing to memory");
    }
    let body = String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8");
    format!("{DIAGNOSTICS_VERSION}\n{body}")
}

pub fn write_diagnostics(rows: &[DiagnosticsRow], path: &Path) -> Result<(), IoError> {
    write_atomic(path, diagnostics_to_string(rows).as_bytes())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let body = text
        .strip_prefix(DIAGNOSTICS_VERSION)
        .ok_or_else(|| format_err(path, "missing or unsupported version line"))?;
    let mut rd = csv::Reader::from_reader(body.trim_start().as_bytes());
    let header: Vec<String> =
        rd.headers().map_err(|e| format_err(path, e.to_string()))?.iter().map(str::to_string).collect();
    let extra = header.len().checked_sub(SCALAR_COLUMNS.len()).filter(|k| k % SPECIES_COLUMNS.len() == 0);
    let n = extra.ok_or_else(|| format_err(path, "unexpected column count"))? / SPECIES_COLUMNS.len();
    if header != diagnostics_header(n) {
        return Err(format_err(path, "header does not match the v1 column order"));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let num = |k: usize| -> Result<f64, IoError> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("row {}: bad value in column {}", line + 1, header[k])))
        };
        let int = |k: usize| -> Result<usize, IoError> {
            rec[k]
                .parse::<usize>()
                .map_err(|_| format_err(path, format!("row {}: bad value in column {}", line + 1, header[k])))
        };
        let base = SCALAR_COLUMNS.len();
        let species = (0..n)
            .map(|i| {
                let o = base + i * SPECIES_COLUMNS.len();
                Ok(SpeciesDiagnostics {
                    mass: num(o)?,
                    l1: num(o + 1)?,
                    l2: num(o + 2)?,
                    l3: num(o + 3)?,
                    fisher: num(o + 4)?,
                    ck_l1: num(o + 5)?,
                    ck_rhs: num(o + 6)?,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        rows.push(DiagnosticsRow {
            step: int(0)?,
            time: num(1)?,
            tau: num(2)?,
            newton_iters: int(3)?,
            newton_residual: num(4)?,
            entropy_heps: num(5)?,
            dissipation: num(6)?,
            delta_term: num(7)?,
            entropy_margin: num(8)?,
            mass_identity_error: num(9)?,
            min_density: num(10)?,
            h_eta: num(11)?,
            species,
        });
    }
    Ok(rows)
}

/// Text form of a field: metadata lines, then one line per cell with one
/// column per species.
pub fn field_to_string(field: &SpeciesField, time: f64) -> String {
    let g = field.grid();
    let join = |v: &[String]| v.join(" ");
    let mut s = String::new();
    let _ = writeln!(s, "{FIELD_VERSION}");
    let _ = writeln!(s, "# dim {}", g.dim());
    let _ = writeln!(s, "# cells {}", join(&g.cells_per_axis().iter().map(|c| c.to_string()).collect::<Vec<_>>()));
    let _ = writeln!(s, "# lengths {}", join(&g.lengths().iter().map(|&l| f(l)).collect::<Vec<_>>()));
    let _ = writeln!(s, "# species {}", field.species_count());
    let _ = writeln!(s, "# time {}", f(time));
    for c in 0..g.total_cells() {
        let _ = writeln!(s, "{}", join(&field.cell(c).into_iter().map(f).collect::<Vec<_>>()));
    }
    s
}

pub fn write_field(field: &SpeciesField, time: f64, path: &Path) -> Result<(), IoError> {
    write_atomic(path, field_to_string(field, time).as_bytes())
}

/// Reads a field written by [`write_field`], returning it with its time.
pub fn read_field(path: &Path) -> Result<(SpeciesField, f64), IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(FIELD_VERSION) {
        return Err(format_err(path, "missing or unsupported version line"));
    }
    let mut meta = |key: &str| -> Result<Vec<String>, IoError> {
        let line = lines.next().ok_or_else(|| format_err(path, format!("missing `{key}` header")))?;
        let rest = line
            .strip_prefix("# ")
            .and_then(|l| l.strip_prefix(key))
            .ok_or_else(|| format_err(path, format!("expected `# {key}` header")))?;
        Ok(rest.split_whitespace().map(str::to_string).collect())
    };
    let bad = |k: &str| format_err(path, format!("malformed `{k}` header"));
    let dim: usize = meta("dim")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("dim"))?;
    let cells: Vec<usize> =
        meta("cells")?.iter().map(|v| v.parse()).collect::<Result<_, _>>().map_err(|_| bad("cells"))?;
    let lengths: Vec<f64> =
        meta("lengths")?.iter().map(|v| v.parse()).collect::<Result<_, _>>().map_err(|_| bad("lengths"))?;
    let n: usize = meta("species")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("species"))?;
    let time: f64 = meta("time")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("time"))?;
    let grid = Grid::new(dim, &cells, &lengths).map_err(|e| format_err(path, e.to_string()))?;
    let total = grid.total_cells();
    let mut values = vec![0.0; n * total];
    let mut c = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        if c >= total {
            return Err(format_err(path, "more data lines than cells"));
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| format_err(path, format!("bad value on cell line {c}")))?;
        if row.len() != n {
            return Err(format_err(path, format!("cell line {c} has {} values, expected {n}", row.len())));
        }
        for (i, v) in row.into_iter().enumerate() {
            values[i * total + c] = v;
        }
        c += 1;
    }
    if c != total {
        return Err(format_err(path, format!("{c} data lines for {total} cells")));
    }
    let field = SpeciesField::new(grid, n, values).map_err(|e| format_err(path, e.to_string()))?;
    Ok((field, time))
}
