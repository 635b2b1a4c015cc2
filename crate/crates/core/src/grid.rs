//! Uniform square grids on `[-L, L]²`, densities living on them, and the
//! quadratures shared by every solver: midpoint integrals, pairwise-kernel
//! convolutions and the regularised logarithmic (2D Coulomb) energy.
//!
//! Cells are stored row-major with `iy` as the outer index, so the flat index
//! of cell `(ix, iy)` is `iy * n + ix`.

use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average of `-log|u|` over a unit square against its centre.
///
/// The self-interaction of a cell of side `h` is `-log h + LOG_CELL_SELF`.
/// Closed form of `-∫_{[-1/2,1/2]²} log|u| du`.
pub const LOG_CELL_SELF: f64 = 1.5 - std::f64::consts::FRAC_PI_4 + 0.5 * std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    half_width: f64,
    cells_per_side: usize,
}

impl Grid2D {
    pub fn new(half_width: f64, cells_per_side: usize) -> Result<Self> {
        if cells_per_side < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 cells per side, got {cells_per_side}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            half_width,
            cells_per_side,
        })
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.cells_per_side
    }

    /// Number of cells, `n²`.
    #[inline]
    pub fn len(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells_per_side as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Area of the whole square, `(2L)²`.
    #[inline]
    pub fn area(&self) -> f64 {
        4.0 * self.half_width * self.half_width
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.cells_per_side + ix
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.cells_per_side, k / self.cells_per_side)
    }

    #[inline]
    pub fn axis_center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    #[inline]
    pub fn center(&self, k: usize) -> [f64; 2] {
        let (ix, iy) = self.coords(k);
        [self.axis_center(ix), self.axis_center(iy)]
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|k| self.center(k))
    }

    /// Cell containing `x`, or `None` outside the closed square.
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        let h = self.spacing();
        let n = self.cells_per_side;
        let axis = |c: f64| -> Option<usize> {
            let t = (c + self.half_width) / h;
            if !(t >= 0.0 && t <= n as f64) {
                return None;
            }
            Some((t.floor() as usize).min(n - 1))
        };
        Some(self.index(axis(x[0])?, axis(x[1])?))
    }

    /// Same grid geometry up to floating round-off.
    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.cells_per_side == other.cells_per_side
            && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }

    pub(crate) fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self} vs {other}")))
        }
    }
}

impl fmt::Display for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[-{0}, {0}]² with {1}×{1} cells", self.half_width, self.cells_per_side)
    }
}

/// A set of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    cells: Vec<bool>,
}

impl CellMask {
    pub fn all(grid: &Grid2D) -> Self {
        Self {
            cells: vec![true; grid.len()],
        }
    }

    pub fn none(grid: &Grid2D) -> Self {
        Self {
            cells: vec![false; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(usize, [f64; 2]) -> bool) -> Self {
        Self {
            cells: (0..grid.len()).map(|k| f(k, grid.center(k))).collect(),
        }
    }

    /// Cells whose centre lies in the closed disk.
    pub fn disk(grid: &Grid2D, center: [f64; 2], radius: f64) -> Self {
        Self::from_fn(grid, |_, x| {
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            dx * dx + dy * dy <= radius * radius
        })
    }

    pub fn from_cells(cells: Vec<bool>) -> Self {
        Self { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn contains(&self, k: usize) -> bool {
        self.cells[k]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn area(&self, grid: &Grid2D) -> f64 {
        self.count() as f64 * grid.cell_area()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(k, &c)| c.then_some(k))
    }

    pub fn union(&self, other: &CellMask) -> CellMask {
        CellMask {
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection(&self, other: &CellMask) -> CellMask {
        CellMask {
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a && *b).collect(),
        }
    }
}

/// Nonnegative density on a grid (units 1/length²).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid2D,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidDensity(format!("cell {k} has value {v}")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales `values` to unit mass.
    pub fn probability(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(grid, values)?;
        let m = d.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidDensity("cannot normalise a zero density".into()));
        }
        d.values.iter_mut().for_each(|v| *v /= m);
        Ok(d)
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values)
    }

    /// `value` on the cells of `mask`, zero elsewhere.
    pub fn indicator(grid: Grid2D, mask: &CellMask, value: f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| if mask.contains(k) { value } else { 0.0 })
            .collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_signed(&self) -> SignedGridField {
        SignedGridField {
            grid: self.grid,
            values: self.values.clone(),
        }
    }

    /// `self - other` as a signed field.
    pub fn difference(&self, other: &GridDensity) -> Result<SignedGridField> {
        self.grid.check_same(&other.grid)?;
        Ok(SignedGridField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Writes `path` as CSV (`ix,iy,x,y,value`) and a JSON sidecar next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["ix", "iy", "x", "y", "value"])?;
        for k in 0..self.grid.len() {
            let (ix, iy) = self.grid.coords(k);
            let [x, y] = self.grid.center(k);
            w.serialize((ix, iy, x, y, self.values[k]))?;
        }
        w.flush()?;
        let sidecar = GridSidecar {
            half_width: self.grid.half_width,
            n: self.grid.cells_per_side,
            mass: self.mass(),
        };
        let mut f = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(&mut f, &sidecar)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a density written by [`GridDensity::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let sidecar: GridSidecar = serde_json::from_reader(File::open(sidecar_path(path))?)?;
        let grid = Grid2D::new(sidecar.half_width, sidecar.n)?;
        let mut values = vec![f64::NAN; grid.len()];
        let mut r = csv::Reader::from_path(path)?;
        for row in r.deserialize() {
            let (ix, iy, _x, _y, value): (usize, usize, f64, f64, f64) = row?;
            if ix >= grid.n() || iy >= grid.n() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("cell ({ix}, {iy}) outside a {}-cell grid", grid.n()),
                });
            }
            values[grid.index(ix, iy)] = value;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "missing cells".into(),
            });
        }
        Self::new(grid, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSidecar {
    #[serde(rename = "L")]
    half_width: f64,
    n: usize,
    mass: f64,
}

/// `density.csv` -> `density.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Real-valued field on a grid (potentials, signed charge differences).
#[derive(Debug, Clone, PartialEq)]
pub struct SignedGridField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl SignedGridField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite field value".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    /// `h² Σ |σ_k|`.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `h² Σ φ_k μ_k`.
    pub fn pair(&self, mu: &GridDensity) -> Result<f64> {
        self.grid.check_same(mu.grid())?;
        Ok(self.grid.cell_area() * dot(&self.values, mu.values()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h² Σ_{k∈Ω} μ_k`.
pub fn integrate(mu: &GridDensity, omega: &CellMask) -> f64 {
    mu.grid.cell_area() * omega.iter().map(|k| mu.values[k]).sum::<f64>()
}

/// Translation-invariant kernel on grid offsets, applied by zero-padded FFT.
///
/// `apply(u)_k = Σ_m K(x_k - x_m) u_m` (no `h²` factor). The kernel is
/// sampled once at all `(2n-1)²` index offsets.
#[derive(Clone)]
pub struct GridConvolver {
    grid: Grid2D,
    padded: usize,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_l1: f64,
    kernel_at_zero: f64,
}

impl fmt::Debug for GridConvolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridConvolver")
            .field("grid", &self.grid)
            .field("padded", &self.padded)
            .finish()
    }
}

impl GridConvolver {
    /// `kernel(di, dj)` is the value at the offset of `di` columns and `dj`
    /// rows, with `|di|, |dj| < n`.
    pub fn new(grid: Grid2D, kernel: impl Fn(i64, i64) -> f64) -> Self {
        let n = grid.n() as i64;
        let m = 2 * grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        let mut kernel_l1 = 0.0;
        for dj in -(n - 1)..n {
            for di in -(n - 1)..n {
                let value = kernel(di, dj);
                kernel_l1 += value.abs();
                let r = dj.rem_euclid(m as i64) as usize;
                let c = di.rem_euclid(m as i64) as usize;
                buf[r * m + c] = Complex64::new(value, 0.0);
            }
        }
        let kernel_at_zero = buf[0].re;
        fft2(&mut buf, m, forward.as_ref());
        Self {
            grid,
            padded: m,
            kernel_hat: buf,
            forward,
            inverse,
            kernel_l1,
            kernel_at_zero,
        }
    }

    /// Kernel sampled at `x_k - x_m` from a function of the physical offset.
    pub fn from_displacement(grid: Grid2D, kernel: impl Fn([f64; 2]) -> f64) -> Self {
        let h = grid.spacing();
        Self::new(grid, |di, dj| kernel([di as f64 * h, dj as f64 * h]))
    }

    /// Regularised `-log|x - y|` kernel.
    pub fn log_kernel(grid: Grid2D) -> Self {
        let h = grid.spacing();
        Self::new(grid, |di, dj| log_kernel_entry(h, di, dj))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// `Σ |K(offset)|` over all offsets; bounds the operator norm.
    pub fn kernel_l1(&self) -> f64 {
        self.kernel_l1
    }

    pub fn kernel_at_zero(&self) -> f64 {
        self.kernel_at_zero
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let m = self.padded;
        assert_eq!(u.len(), n * n, "field does not match the convolver grid");
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        for iy in 0..n {
            for ix in 0..n {
                buf[iy * m + ix].re = u[iy * n + ix];
            }
        }
        fft2(&mut buf, m, self.forward.as_ref());
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= *k;
        }
        fft2(&mut buf, m, self.inverse.as_ref());
        let scale = 1.0 / (m * m) as f64;
        let mut out = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                out[iy * n + ix] = buf[iy * m + ix].re * scale;
            }
        }
        out
    }

    /// `h⁴ uᵀ K u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let a = self.grid.cell_area();
        a * a * dot(u, &self.apply(u))
    }
}

#[inline]
pub(crate) fn log_kernel_entry(h: f64, di: i64, dj: i64) -> f64 {
    if di == 0 && dj == 0 {
        -h.ln() + LOG_CELL_SELF
    } else {
        -(h * ((di * di + dj * dj) as f64).sqrt()).ln()
    }
}

fn fft2(buf: &mut [Complex64], m: usize, fft: &dyn Fft<f64>) {
    // Rows are contiguous; columns go through a transpose.
    fft.process(buf);
    transpose_square(buf, m);
    fft.process(buf);
    transpose_square(buf, m);
}

fn transpose_square(buf: &mut [Complex64], m: usize) {
    for r in 0..m {
        for c in (r + 1)..m {
            buf.swap(r * m + c, c * m + r);
        }
    }
}

/// `(w∗μ)(x_k) = h² Σ_m w(x_k - x_m) μ_m`, evaluated by FFT.
pub fn convolve(w: impl Fn([f64; 2]) -> f64, mu: &GridDensity) -> SignedGridField {
    let conv = GridConvolver::from_displacement(mu.grid, w);
    let a = mu.grid.cell_area();
    let values = conv.apply(&mu.values).into_iter().map(|v| a * v).collect();
    SignedGridField {
        grid: mu.grid,
        values,
    }
}

/// Direct double-loop version of [`convolve`].
pub fn convolve_direct(w: impl Fn([f64; 2]) -> f64, mu: &GridDensity) -> SignedGridField {
    let g = mu.grid;
    let a = g.cell_area();
    let values = (0..g.len())
        .map(|k| {
            let xk = g.center(k);
            let s: f64 = (0..g.len())
                .filter(|&m| mu.values[m] != 0.0)
                .map(|m| {
                    let xm = g.center(m);
                    w([xk[0] - xm[0], xk[1] - xm[1]]) * mu.values[m]
                })
                .sum();
            a * s
        })
        .collect();
    SignedGridField { grid: g, values }
}

/// `D(σ,σ) = ½ h⁴ Σ σ_k K(x_k, x_m) σ_m` with the regularised log kernel.
pub fn coulomb_energy(sigma: &SignedGridField) -> f64 {
    CoulombOperator::new(sigma.grid).energy(sigma.values())
}

/// Reusable log-kernel operator for repeated Coulomb energies on one grid.
#[derive(Debug, Clone)]
pub struct CoulombOperator {
    conv: GridConvolver,
}

impl CoulombOperator {
    pub fn new(grid: Grid2D) -> Self {
        Self {
            conv: GridConvolver::log_kernel(grid),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        self.conv.grid()
    }

    pub fn convolver(&self) -> &GridConvolver {
        &self.conv
    }

    /// `½ h⁴ σᵀ K σ`.
    pub fn energy(&self, sigma: &[f64]) -> f64 {
        if sigma.iter().all(|&s| s == 0.0) {
            return 0.0;
        }
        0.5 * self.conv.quadratic_form(sigma)
    }

    /// `h² Σ_m K(x_k, x_m) σ_m`, the log potential generated by `σ`.
    pub fn potential(&self, sigma: &[f64]) -> Vec<f64> {
        let a = self.conv.grid().cell_area();
        self.conv.apply(sigma).into_iter().map(|v| a * v).collect()
    }
}
