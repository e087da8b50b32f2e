//! Uniform-grid scalar fields, channel stacks and the real-input 2D DFT.
//!
//! Conventions used everywhere in the crate:
//! * fields are row-major, row index `i` runs along `y`, column index `j`
//!   along `x`; cell `(i, j)` has its center at `((j + 0.5)·dx, (i + 0.5)·dy)`;
//! * the forward transform is unnormalized and the inverse divides by `H·W`;
//! * real fields keep only the `⌊W/2⌋ + 1` non-negative `k_y` columns.

mod transform;

pub use transform::{fft2_real, ifft2_real, truncate_modes, SpectralPlan};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Uniform rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub height: usize,
    pub width: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    /// Unit-spaced grid.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::with_spacing(height, width, 1.0, 1.0)
    }

    pub fn with_spacing(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "grid must have at least one cell, got {height}x{width}"
            )));
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive, got dx={dx}, dy={dy}"
            )));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    /// Number of cells, `H·W`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the stored `k_y` axis of a half spectrum.
    pub fn ky_len(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn x_extent(&self) -> f64 {
        self.width as f64 * self.dx
    }

    pub fn y_extent(&self) -> f64 {
        self.height as f64 * self.dy
    }

    /// Cell-center coordinates of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((j as f64 + 0.5) * self.dx, (i as f64 + 0.5) * self.dy)
    }

    pub fn min_spacing(&self) -> f64 {
        self.dx.min(self.dy)
    }

    /// Same extents, unit spacing.
    pub fn unit(&self) -> Self {
        Self {
            dx: 1.0,
            dy: 1.0,
            ..*self
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::InvalidField(format!(
            "non-finite value {} at flat index {pos}",
            values[pos]
        ))),
        None => Ok(()),
    }
}

/// A real scalar field on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field of {} values does not fit a {}x{} grid",
                values.len(),
                grid.height,
                grid.width
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Builds a field from a function of the cell-center coordinates.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.height {
            for j in 0..grid.width {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self::new(grid, values)
    }

    /// Applies `f` pointwise; the result is checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.width + j]
    }

    /// Returns the same values on a different grid of identical shape.
    pub fn with_grid(self, grid: Grid2D) -> Result<Self> {
        if !self.grid.same_shape(&grid) {
            return Err(Error::Shape("regridding requires identical extents".into()));
        }
        Ok(Self { grid, ..self })
    }
}

/// `n` samples of `c` channels each, stored `[n, c, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBatch {
    n: usize,
    c: usize,
    grid: Grid2D,
    values: Vec<f64>,
}

impl FieldBatch {
    pub fn new(n: usize, c: usize, grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        let expected = n
            .checked_mul(c)
            .and_then(|v| v.checked_mul(grid.len()))
            .ok_or_else(|| Error::Shape("batch dimensions overflow".into()))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "batch [{n}, {c}, {}, {}] needs {expected} values, got {}",
                grid.height,
                grid.width,
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { n, c, grid, values })
    }

    pub fn zeros(n: usize, c: usize, grid: Grid2D) -> Self {
        Self {
            n,
            c,
            grid,
            values: vec![0.0; n * c * grid.len()],
        }
    }

    /// Stacks single-channel fields into an `[n, 1, H, W]` batch.
    pub fn from_fields(fields: &[ScalarField2D]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Shape("cannot batch zero fields".into()))?;
        let grid = *first.grid();
        let mut values = Vec::with_capacity(fields.len() * grid.len());
        for f in fields {
            if !f.grid().same_shape(&grid) {
                return Err(Error::Shape("fields in a batch must share a grid".into()));
            }
            values.extend_from_slice(f.values());
        }
        Ok(Self {
            n: fields.len(),
            c: 1,
            grid,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// All channels of sample `s`, `[c, H, W]`.
    pub fn sample(&self, s: usize) -> &[f64] {
        let stride = self.c * self.grid.len();
        &self.values[s * stride..(s + 1) * stride]
    }

    pub fn channel(&self, s: usize, ch: usize) -> &[f64] {
        let hw = self.grid.len();
        let start = (s * self.c + ch) * hw;
        &self.values[start..start + hw]
    }

    pub fn field(&self, s: usize, ch: usize) -> ScalarField2D {
        ScalarField2D {
            grid: self.grid,
            values: self.channel(s, ch).to_vec(),
        }
    }

    /// Copies the listed samples, in order, into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.c * self.grid.len());
        for &s in indices {
            values.extend_from_slice(self.sample(s));
        }
        Self {
            n: indices.len(),
            c: self.c,
            grid: self.grid,
            values,
        }
    }
}

/// Half-plane spectrum of `c` real channels, `[c, H, ⌊W/2⌋+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    c: usize,
    kx_len: usize,
    ky_len: usize,
    coeffs: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn new(c: usize, kx_len: usize, ky_len: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != c * kx_len * ky_len {
            return Err(Error::Shape(format!(
                "spectrum [{c}, {kx_len}, {ky_len}] needs {} coefficients, got {}",
                c * kx_len * ky_len,
                coeffs.len()
            )));
        }
        Ok(Self {
            c,
            kx_len,
            ky_len,
            coeffs,
        })
    }

    pub fn zeros(c: usize, kx_len: usize, ky_len: usize) -> Self {
        Self {
            c,
            kx_len,
            ky_len,
            coeffs: vec![Complex64::new(0.0, 0.0); c * kx_len * ky_len],
        }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn kx_len(&self) -> usize {
        self.kx_len
    }

    pub fn ky_len(&self) -> usize {
        self.ky_len
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, ch: usize, kx: usize, ky: usize) -> Complex64 {
        self.coeffs[(ch * self.kx_len + kx) * self.ky_len + ky]
    }

    pub fn set(&mut self, ch: usize, kx: usize, ky: usize, value: Complex64) {
        self.coeffs[(ch * self.kx_len + kx) * self.ky_len + ky] = value;
    }

    /// Sum of `|F|²` over the full (Hermitian-completed) spectrum for a
    /// spectrum of a real field of width `width`.
    pub fn full_energy(&self, width: usize) -> f64 {
        let mut total = 0.0;
        for ch in 0..self.c {
            for kx in 0..self.kx_len {
                for ky in 0..self.ky_len {
                    let mult = if ky == 0 || (width.is_multiple_of(2) && ky == width / 2) {
                        1.0
                    } else {
                        2.0
                    };
                    total += mult * self.get(ch, kx, ky).norm_sqr();
                }
            }
        }
        total
    }
}
