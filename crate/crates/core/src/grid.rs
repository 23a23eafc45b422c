//! Uniform cell-centred grids on a box with zero-flux boundaries.
//!
//! Only interior faces are stored; a boundary face always carries zero
//! gradient and zero flux, which makes every flux-form operator conserve
//! mass by telescoping. Cells are numbered `ix + nx·iy`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::coeffmodel::{CoefficientSet, EntropyWeights};
use crate::entropy;
use crate::linalg::{BandedMatrix, DenseMatrix, LinalgError};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub enum GridError {
    InvalidDimension(usize),
    TooFewCells {
        axis: usize,
        cells: usize,
    },
    InvalidLength {
        axis: usize,
        length: f64,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    InvalidValue {
        species: usize,
        cell: usize,
        value: f64,
    },
    NonPositiveDensity {
        species: usize,
        cell: usize,
        value: f64,
    },
    /// Right-hand side of the Neumann problem is not mean-free.
    NonZeroMean {
        integral: f64,
        scale: f64,
    },
    Linalg(LinalgError),
    /// Grids of a restriction are not related by a factor-two refinement.
    IncompatibleGrids,
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::InvalidDimension(d) => write!(f, "grid dimension {d} not supported (1 or 2)"),
            GridError::TooFewCells { axis, cells } => {
                write!(f, "axis {axis} has {cells} cells; at least 2 required")
            }
            GridError::InvalidLength { axis, length } => {
                write!(f, "axis {axis} length {length} must be positive")
            }
            GridError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            GridError::InvalidValue { species, cell, value } => {
                write!(f, "species {species}, cell {cell}: value {value} must be finite and nonnegative")
            }
            GridError::NonPositiveDensity { species, cell, value } => {
                write!(f, "species {species}, cell {cell}: density {value} must be positive")
            }
            GridError::NonZeroMean { integral, scale } => {
                write!(f, "right-hand side integral {integral} is not zero (scale {scale})")
            }
            GridError::Linalg(e) => write!(f, "{e}"),
            GridError::IncompatibleGrids => f.write_str("grids are not a factor-two refinement of each other"),
        }
    }
}

impl core::error::Error for GridError {}

impl From<LinalgError> for GridError {
    fn from(e: LinalgError) -> Self {
        GridError::Linalg(e)
    }
}

/// An interior face between cells `left` and `right` (`right` lies in the
/// positive `axis` direction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub axis: usize,
    /// Distance between the two cell centres.
    pub spacing: f64,
    /// Face measure (1 in 1D, the transverse cell width in 2D).
    pub area: f64,
}

impl Face {
    /// Volume of the dual cell, `area · spacing`.
    #[inline]
    pub fn dual_volume(&self) -> f64 {
        self.area * self.spacing
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    lengths: [f64; 2],
    widths: [f64; 2],
    faces: Vec<Face>,
}

impl Grid {
    pub fn new(dim: usize, cells: &[usize], lengths: &[f64]) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::InvalidDimension(dim));
        }
        if cells.len() != dim || lengths.len() != dim {
            return Err(GridError::DimensionMismatch { expected: dim, found: cells.len().min(lengths.len()) });
        }
        let mut c = [1usize; 2];
        let mut l = [1.0f64; 2];
        for axis in 0..dim {
            if cells[axis] < 2 {
                return Err(GridError::TooFewCells { axis, cells: cells[axis] });
            }
            if !(lengths[axis] > 0.0 && lengths[axis].is_finite()) {
                return Err(GridError::InvalidLength { axis, length: lengths[axis] });
            }
            c[axis] = cells[axis];
            l[axis] = lengths[axis];
        }
        let widths = [l[0] / c[0] as f64, l[1] / c[1] as f64];
        let mut faces = Vec::new();
        for iy in 0..c[1] {
            for ix in 0..c[0] - 1 {
                let left = ix + c[0] * iy;
                faces.push(Face {
                    left,
                    right: left + 1,
                    axis: 0,
                    spacing: widths[0],
                    area: if dim == 2 { widths[1] } else { 1.0 },
                });
            }
        }
        if dim == 2 {
            for iy in 0..c[1] - 1 {
                for ix in 0..c[0] {
                    let left = ix + c[0] * iy;
                    faces.push(Face { left, right: left + c[0], axis: 1, spacing: widths[1], area: widths[0] });
                }
            }
        }
        Ok(Self { dim, cells: c, lengths: l, widths, faces })
    }

    pub fn new_1d(cells: usize, length: f64) -> Result<Self, GridError> {
        Self::new(1, &[cells], &[length])
    }

    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        Self::new(2, &[nx, ny], &[lx, ly])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths[..self.dim]
    }

    #[inline]
    pub fn total_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.widths[..self.dim].iter().product()
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Largest index distance between the two cells of a face.
    pub fn cell_bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.cells[0]
        }
    }

    /// Centre of cell `c`; the second coordinate is 0 in 1D.
    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let ix = c % self.cells[0];
        let iy = c / self.cells[0];
        [(ix as f64 + 0.5) * self.widths[0], if self.dim == 2 { (iy as f64 + 0.5) * self.widths[1] } else { 0.0 }]
    }

    /// Two-point gradient on every interior face.
    pub fn face_gradient(&self, values: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_cells(values.len())?;
        Ok(self.faces.iter().map(|f| (values[f.right] - values[f.left]) / f.spacing).collect())
    }

    /// Discrete Neumann Laplacian `Δ_h v`.
    pub fn laplacian(&self, values: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_cells(values.len())?;
        let vol = self.cell_volume();
        let mut out = vec![0.0; values.len()];
        for f in &self.faces {
            let flux = f.area * (values[f.right] - values[f.left]) / f.spacing;
            out[f.left] += flux / vol;
            out[f.right] -= flux / vol;
        }
        Ok(out)
    }

    /// `Σ v · vol`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Solves `−Δ_h ψ = rhs` with zero-flux closure and `Σ ψ·vol = 0`.
    pub fn neumann_poisson_solve(&self, rhs: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_cells(rhs.len())?;
        let vol = self.cell_volume();
        let integral = self.integrate(rhs);
        let scale: f64 = rhs.iter().map(|v| v.abs()).sum::<f64>() * vol;
        if integral.abs() > 1e-10 * scale {
            return Err(GridError::NonZeroMean { integral, scale });
        }
        let n = self.total_cells();
        let bw = self.cell_bandwidth();
        let mut m = BandedMatrix::zeros(n, bw, bw);
        for f in &self.faces {
            let k = f.area / (f.spacing * vol);
            for &(r, other) in &[(f.left, f.right), (f.right, f.left)] {
                if r == 0 {
                    continue;
                }
                m.add(r, r, k);
                m.add(r, other, -k);
            }
        }
        // the compatible system loses rank one; pin ψ₀ and re-centre afterwards
        m.add(0, 0, 1.0);
        let mut psi = rhs.to_vec();
        psi[0] = 0.0;
        m.solve_in_place(&mut psi)?;
        let mean = psi.iter().sum::<f64>() / n as f64;
        psi.iter_mut().for_each(|v| *v -= mean);
        Ok(psi)
    }

    fn check_cells(&self, len: usize) -> Result<(), GridError> {
        if len == self.total_cells() {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch { expected: self.total_cells(), found: len })
        }
    }
}

/// Per-species cell averages on a grid, stored species-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesField {
    grid: Grid,
    n: usize,
    values: Vec<f64>,
}

impl SpeciesField {
    pub fn new(grid: Grid, n: usize, values: Vec<f64>) -> Result<Self, GridError> {
        let cells = grid.total_cells();
        if n == 0 || values.len() != n * cells {
            return Err(GridError::DimensionMismatch { expected: n * cells, found: values.len() });
        }
        for (k, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(GridError::InvalidValue { species: k / cells, cell: k % cells, value });
            }
        }
        Ok(Self { grid, n, values })
    }

    /// Builds a field from a per-cell generator `f(species, cell centre)`.
    pub fn from_fn(grid: Grid, n: usize, mut f: impl FnMut(usize, [f64; 2]) -> f64) -> Result<Self, GridError> {
        let cells = grid.total_cells();
        let mut values = Vec::with_capacity(n * cells);
        for i in 0..n {
            for c in 0..cells {
                values.push(f(i, grid.cell_center(c)));
            }
        }
        Self::new(grid, n, values)
    }

    pub fn constant(grid: Grid, levels: &[f64]) -> Result<Self, GridError> {
        Self::from_fn(grid, levels.len(), |i, _| levels[i])
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn species_count(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn species(&self, i: usize) -> &[f64] {
        let cells = self.grid.total_cells();
        &self.values[i * cells..(i + 1) * cells]
    }

    /// Values of all species in cell `c`.
    pub fn cell(&self, c: usize) -> Vec<f64> {
        let cells = self.grid.total_cells();
        (0..self.n).map(|i| self.values[i * cells + c]).collect()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.grid.integrate(self.species(i))
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.mass(i)).collect()
    }

    /// `ū_i = |Ω|⁻¹ ∫ u_i`.
    pub fn means(&self) -> Vec<f64> {
        let m = self.grid.measure();
        (0..self.n).map(|i| self.mass(i) / m).collect()
    }

    /// Minimum value over all species and cells.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn require_positive(&self) -> Result<(), GridError> {
        let cells = self.grid.total_cells();
        match self.values.iter().position(|&v| v <= 0.0) {
            Some(k) => {
                Err(GridError::NonPositiveDensity { species: k / cells, cell: k % cells, value: self.values[k] })
            }
            None => Ok(()),
        }
    }

    /// Cell averages on the grid with half as many cells per axis.
    pub fn restrict_by_two(&self, coarse: &Grid) -> Result<SpeciesField, GridError> {
        let fine = &self.grid;
        if coarse.dim() != fine.dim()
            || coarse.lengths() != fine.lengths()
            || (0..fine.dim()).any(|a| fine.cells_per_axis()[a] != 2 * coarse.cells_per_axis()[a])
        {
            return Err(GridError::IncompatibleGrids);
        }
        let fnx = fine.cells_per_axis()[0];
        let cnx = coarse.cells_per_axis()[0];
        let cc = coarse.total_cells();
        let children = 1usize << fine.dim();
        let mut values = vec![0.0; self.n * cc];
        for i in 0..self.n {
            let src = self.species(i);
            for (c, dst) in values[i * cc..(i + 1) * cc].iter_mut().enumerate() {
                let (cx, cy) = (c % cnx, c / cnx);
                let mut s = 0.0;
                for dy in 0..(if fine.dim() == 2 { 2 } else { 1 }) {
                    for dx in 0..2 {
                        s += src[(2 * cx + dx) + fnx * (2 * cy + dy)];
                    }
                }
                *dst = s / children as f64;
            }
        }
        SpeciesField::new(coarse.clone(), self.n, values)
    }
}

/// Discrete `L¹`, `L²`, `L³` norms of one species.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

pub fn discrete_norms(u: &SpeciesField) -> Vec<Norms> {
    let vol = u.grid.cell_volume();
    (0..u.n)
        .map(|i| {
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for &v in u.species(i) {
                let a = v.abs();
                s1 += a;
                s2 += a * a;
                s3 += a * a * a;
            }
            Norms { l1: s1 * vol, l2: math::sqrt(s2 * vol), l3: math::cbrt(s3 * vol) }
        })
        .collect()
}

/// `Σ_faces |∇_h √u_i|² · area·spacing` for each species.
pub fn fisher(u: &SpeciesField) -> Result<Vec<f64>, GridError> {
    let grid = &u.grid;
    (0..u.n)
        .map(|i| {
            let vals = u.species(i);
            let mut s = 0.0;
            for f in grid.faces() {
                let d = (math::sqrt(vals[f.right]) - math::sqrt(vals[f.left])) / f.spacing;
                s += d * d * f.dual_volume();
            }
            Ok(s)
        })
        .collect()
}

/// Face fluxes `F_f,i = Σ_j A_ε,ij(ū_f) (∇_h u_j)_f` with `ū_f` the
/// arithmetic mean of the two adjacent cells. Stored face-major (`f·n + i`).
pub fn face_fluxes(
    u: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eps: f64,
) -> Result<Vec<f64>, GridError> {
    let n = u.n;
    if coeffs.n() != n || weights.pi.len() != n || weights.mu.len() != n {
        return Err(GridError::DimensionMismatch { expected: n, found: coeffs.n() });
    }
    u.require_positive()?;
    let cells = u.grid.total_cells();
    let vals = &u.values;
    let mut mid = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut a = DenseMatrix::zeros(n);
    let mut out = Vec::with_capacity(u.grid.faces().len() * n);
    for f in u.grid.faces() {
        for i in 0..n {
            let (l, r) = (vals[i * cells + f.left], vals[i * cells + f.right]);
            mid[i] = 0.5 * (l + r);
            grad[i] = (r - l) / f.spacing;
        }
        entropy::fill_diffusion_a(&mid, coeffs, &mut a);
        for i in 0..n {
            a[(i, i)] += eps * weights.mu[i] / weights.pi[i] * mid[i] * mid[i];
        }
        for i in 0..n {
            out.push((0..n).map(|j| a[(i, j)] * grad[j]).sum());
        }
    }
    Ok(out)
}

/// Discrete `div(A_ε(u)∇u)` per cell and species (species-major), with zero
/// flux through the boundary.
pub fn flux_divergence(
    u: &SpeciesField,
    coeffs: &CoefficientSet,
    weights: &EntropyWeights,
    eps: f64,
) -> Result<Vec<f64>, GridError> {
    let fluxes = face_fluxes(u, coeffs, weights, eps)?;
    let n = u.n;
    let cells = u.grid.total_cells();
    let vol = u.grid.cell_volume();
    let mut rates = vec![0.0; n * cells];
    for (k, f) in u.grid.faces().iter().enumerate() {
        for i in 0..n {
            let q = f.area * fluxes[k * n + i] / vol;
            rates[i * cells + f.left] += q;
            rates[i * cells + f.right] -= q;
        }
    }
    Ok(rates)
}
