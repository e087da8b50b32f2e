use std::sync::Arc;

use num_complex::{Complex, Complex64};
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_traits::Zero;
use rustfft::{Fft, FftNum, FftPlanner};

use super::{check_finite, FieldBatch, Grid2D, HalfSpectrum};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which `k_x` rows a transform produces or consumes.
#[derive(Debug, Clone, Copy)]
enum Rows {
    /// All `H` rows in natural frequency order.
    All,
    /// The two corner blocks `0..k` and `H-k..H`, stored contiguously.
    Corners(usize),
}

impl Rows {
    fn count(self, height: usize) -> usize {
        match self {
            Rows::All => height,
            Rows::Corners(k) => 2 * k,
        }
    }

    fn frequency_row(self, r: usize, height: usize) -> usize {
        match self {
            Rows::All => r,
            Rows::Corners(k) if r < k => r,
            Rows::Corners(k) => height - 2 * k + r,
        }
    }
}

/// Cached 1D plans for transforms on one grid shape.
///
/// The `*_modes` methods compute only the retained corner blocks and are
/// exactly equivalent to a full transform followed by truncation.
#[derive(Clone)]
pub struct SpectralPlan<T: FftNum = f64> {
    height: usize,
    width: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: FftNum> std::fmt::Debug for SpectralPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl<T: FftNum> SpectralPlan<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut real = RealFftPlanner::<T>::new();
        let mut complex = FftPlanner::<T>::new();
        Self {
            height,
            width,
            r2c: real.plan_fft_forward(width),
            c2r: real.plan_fft_inverse(width),
            col_fwd: complex.plan_fft_forward(height),
            col_inv: complex.plan_fft_inverse(height),
        }
    }

    pub fn for_grid(grid: &Grid2D) -> Self {
        Self::new(grid.height, grid.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn ky_len(&self) -> usize {
        self.width / 2 + 1
    }

    /// Forward transform of `channels` stacked fields into retained modes.
    ///
    /// `out` is `[channels, 2·kx, ky]`, rows ordered positive block first.
    pub fn forward_modes(
        &self,
        fields: &[T],
        channels: usize,
        kx: usize,
        ky: usize,
        out: &mut [Complex<T>],
    ) {
        debug_assert!(2 * kx <= self.height && ky <= self.ky_len());
        self.forward(fields, channels, Rows::Corners(kx), ky, out);
    }

    /// Inverse of [`Self::forward_modes`] (normalized by `1/(H·W)`), writing
    /// `[channels, H, W]` real fields into `out`.
    pub fn inverse_modes(
        &self,
        modes: &[Complex<T>],
        channels: usize,
        kx: usize,
        ky: usize,
        out: &mut [T],
    ) {
        debug_assert!(2 * kx <= self.height && ky <= self.ky_len());
        self.inverse(modes, channels, Rows::Corners(kx), ky, out);
    }

    fn forward(
        &self,
        fields: &[T],
        channels: usize,
        rows: Rows,
        ky: usize,
        out: &mut [Complex<T>],
    ) {
        let (h, w, kyl) = (self.height, self.width, self.ky_len());
        let n_rows = rows.count(h);
        debug_assert_eq!(fields.len(), channels * h * w);
        debug_assert_eq!(out.len(), channels * n_rows * ky);

        let mut row_in = vec![T::zero(); w];
        let mut row_out = vec![Complex::<T>::zero(); kyl];
        let mut row_scratch = vec![Complex::<T>::zero(); self.r2c.get_scratch_len()];
        let mut col = vec![Complex::<T>::zero(); h];
        let mut col_scratch = vec![Complex::<T>::zero(); self.col_fwd.get_inplace_scratch_len()];
        let mut partial = vec![Complex::<T>::zero(); h * ky];

        for ch in 0..channels {
            let field = &fields[ch * h * w..(ch + 1) * h * w];
            for i in 0..h {
                row_in.copy_from_slice(&field[i * w..(i + 1) * w]);
                self.r2c
                    .process_with_scratch(&mut row_in, &mut row_out, &mut row_scratch)
                    .expect("r2c buffer sizes are fixed by the plan");
                partial[i * ky..(i + 1) * ky].copy_from_slice(&row_out[..ky]);
            }
            let dst = &mut out[ch * n_rows * ky..(ch + 1) * n_rows * ky];
            for j in 0..ky {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = partial[i * ky + j];
                }
                self.col_fwd
                    .process_with_scratch(&mut col, &mut col_scratch);
                for r in 0..n_rows {
                    dst[r * ky + j] = col[rows.frequency_row(r, h)];
                }
            }
        }
    }

    fn inverse(&self, modes: &[Complex<T>], channels: usize, rows: Rows, ky: usize, out: &mut [T]) {
        let (h, w, kyl) = (self.height, self.width, self.ky_len());
        let n_rows = rows.count(h);
        debug_assert_eq!(modes.len(), channels * n_rows * ky);
        debug_assert_eq!(out.len(), channels * h * w);

        let norm = T::from_f64(1.0 / (h * w) as f64).expect("normalization fits the float type");
        let nyquist = (w % 2 == 0).then_some(w / 2);
        let mut row_in = vec![Complex::<T>::zero(); kyl];
        let mut row_out = vec![T::zero(); w];
        let mut row_scratch = vec![Complex::<T>::zero(); self.c2r.get_scratch_len()];
        let mut col = vec![Complex::<T>::zero(); h];
        let mut col_scratch = vec![Complex::<T>::zero(); self.col_inv.get_inplace_scratch_len()];
        let mut partial = vec![Complex::<T>::zero(); h * ky];

        for ch in 0..channels {
            let src = &modes[ch * n_rows * ky..(ch + 1) * n_rows * ky];
            for j in 0..ky {
                col.fill(Complex::zero());
                for r in 0..n_rows {
                    col[rows.frequency_row(r, h)] = src[r * ky + j];
                }
                self.col_inv
                    .process_with_scratch(&mut col, &mut col_scratch);
                for (i, c) in col.iter().enumerate() {
                    partial[i * ky + j] = *c;
                }
            }
            let dst = &mut out[ch * h * w..(ch + 1) * h * w];
            for i in 0..h {
                row_in.fill(Complex::zero());
                row_in[..ky].copy_from_slice(&partial[i * ky..(i + 1) * ky]);
                // The real part of the Hermitian completion ignores these.
                row_in[0].im = T::zero();
                if let Some(nq) = nyquist {
                    row_in[nq].im = T::zero();
                }
                self.c2r
                    .process_with_scratch(&mut row_in, &mut row_out, &mut row_scratch)
                    .expect("c2r input is Hermitian-consistent by construction");
                for (d, v) in dst[i * w..(i + 1) * w].iter_mut().zip(&row_out) {
                    *d = *v * norm;
                }
            }
        }
    }
}

/// Unnormalized forward 2D DFT of every sample in `batch`.
pub fn fft2_real(batch: &FieldBatch) -> Result<Vec<HalfSpectrum>> {
    check_finite(batch.values())?;
    let grid = batch.grid();
    let plan = SpectralPlan::for_grid(grid);
    let (c, kyl) = (batch.channels(), grid.ky_len());
    (0..batch.n())
        .map(|s| {
            let mut coeffs = vec![ZERO; c * grid.height * kyl];
            plan.forward(batch.sample(s), c, Rows::All, kyl, &mut coeffs);
            HalfSpectrum::new(c, grid.height, kyl, coeffs)
        })
        .collect()
}

/// Normalized inverse of [`fft2_real`]; returns a one-sample batch.
pub fn ifft2_real(spectrum: &HalfSpectrum, grid: &Grid2D) -> Result<FieldBatch> {
    if spectrum.kx_len() != grid.height || spectrum.ky_len() != grid.ky_len() {
        return Err(Error::Shape(format!(
            "spectrum [{}, {}] does not match grid {}x{} (expects [{}, {}])",
            spectrum.kx_len(),
            spectrum.ky_len(),
            grid.height,
            grid.width,
            grid.height,
            grid.ky_len()
        )));
    }
    let plan = SpectralPlan::for_grid(grid);
    let c = spectrum.channels();
    let mut values = vec![0.0; c * grid.len()];
    plan.inverse(spectrum.coeffs(), c, Rows::All, grid.ky_len(), &mut values);
    FieldBatch::new(1, c, *grid, values)
}

/// Zeroes every coefficient outside the corner blocks
/// `kx ∈ {0..k_x} ∪ {H-k_x..H}`, `ky ∈ {0..k_y}`.
pub fn truncate_modes(spectrum: &HalfSpectrum, k_x: usize, k_y: usize) -> Result<HalfSpectrum> {
    let h = spectrum.kx_len();
    if k_x > h.div_ceil(2) || k_y > spectrum.ky_len() {
        return Err(Error::ModeRange(format!(
            "modes ({k_x}, {k_y}) exceed spectrum limits ({}, {})",
            h.div_ceil(2),
            spectrum.ky_len()
        )));
    }
    let mut out = spectrum.clone();
    for ch in 0..spectrum.channels() {
        for kx in 0..h {
            let keep_row = kx < k_x || kx >= h - k_x;
            for ky in 0..spectrum.ky_len() {
                if !(keep_row && ky < k_y) {
                    out.set(ch, kx, ky, ZERO);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> FieldBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid2D::new(h, w).unwrap();
        let values = (0..n * c * h * w)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        FieldBatch::new(n, c, grid, values).unwrap()
    }

    /// Direct O(N²) DFT of a single real field.
    fn naive_dft(field: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![ZERO; h * (w / 2 + 1)];
        for kx in 0..h {
            for ky in 0..w / 2 + 1 {
                let mut acc = ZERO;
                for i in 0..h {
                    for j in 0..w {
                        let phase =
                            -2.0 * PI * ((kx * i) as f64 / h as f64 + (ky * j) as f64 / w as f64);
                        acc += field[i * w + j] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[kx * (w / 2 + 1) + ky] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_field_has_only_dc() {
        let grid = Grid2D::new(8, 8).unwrap();
        let batch = FieldBatch::new(1, 1, grid, vec![2.5; 64]).unwrap();
        let spec = &fft2_real(&batch).unwrap()[0];
        for kx in 0..8 {
            for ky in 0..5 {
                let v = spec.get(0, kx, ky);
                if kx == 0 && ky == 0 {
                    assert!((v - Complex64::new(160.0, 0.0)).norm() <= 1e-12);
                } else {
                    assert!(v.norm() <= 1e-12, "mode ({kx},{ky}) = {v}");
                }
            }
        }
    }

    #[test]
    fn single_cosine_lands_in_one_mode() {
        let grid = Grid2D::new(16, 16).unwrap();
        let values = (0..256)
            .map(|idx| (2.0 * PI * (idx % 16) as f64 / 16.0).cos())
            .collect();
        let batch = FieldBatch::new(1, 1, grid, values).unwrap();
        let spec = &fft2_real(&batch).unwrap()[0];
        // cos(2πx/W) = (e^{+} + e^{-})/2, the stored half holds H·W/2 at (0,1).
        assert!((spec.get(0, 0, 1) - Complex64::new(128.0, 0.0)).norm() <= 1e-10);
        for kx in 0..16 {
            for ky in 0..9 {
                if (kx, ky) != (0, 1) {
                    assert!(spec.get(0, kx, ky).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_grids() {
        for (h, w) in [(6, 8), (5, 7), (4, 9)] {
            let batch = random_batch(1, 1, h, w, 7);
            let spec = &fft2_real(&batch).unwrap()[0];
            let naive = naive_dft(batch.values(), h, w);
            for (a, b) in spec.coeffs().iter().zip(&naive) {
                assert!((a - b).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_random_field() {
        let batch = random_batch(2, 3, 12, 12, 1);
        let specs = fft2_real(&batch).unwrap();
        for (s, spec) in specs.iter().enumerate() {
            let back = ifft2_real(spec, batch.grid()).unwrap();
            for (a, b) in back.values().iter().zip(batch.sample(s)) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn inverse_of_zero_and_dc_spectra() {
        let grid = Grid2D::new(6, 10).unwrap();
        let zero = HalfSpectrum::zeros(1, 6, 6);
        assert!(ifft2_real(&zero, &grid)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));

        let mut dc = HalfSpectrum::zeros(1, 6, 6);
        dc.set(0, 0, 0, Complex64::new(60.0 * 1.75, 0.0));
        let field = ifft2_real(&dc, &grid).unwrap();
        assert!(field.values().iter().all(|&v| (v - 1.75).abs() <= 1e-12));
    }

    #[test]
    fn inverse_rejects_mismatched_grid() {
        let grid = Grid2D::new(6, 10).unwrap();
        let spec = HalfSpectrum::zeros(1, 6, 5);
        assert!(matches!(ifft2_real(&spec, &grid), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let grid = Grid2D::new(4, 4).unwrap();
        let batch = FieldBatch::zeros(1, 1, grid);
        let mut values = batch.into_values();
        values[3] = f64::NAN;
        // Construction already refuses the field.
        assert!(matches!(
            FieldBatch::new(1, 1, grid, values),
            Err(Error::InvalidField(_))
        ));
    }

    #[test]
    fn truncation_is_idempotent_and_full_extent_is_identity() {
        let batch = random_batch(1, 2, 44, 44, 3);
        let spec = &fft2_real(&batch).unwrap()[0];
        let once = truncate_modes(spec, 20, 20).unwrap();
        let twice = truncate_modes(&once, 20, 20).unwrap();
        assert_eq!(once, twice);
        assert_eq!(&truncate_modes(spec, 22, 23).unwrap(), spec);
    }

    #[test]
    fn truncation_keeps_retained_single_mode() {
        let grid = Grid2D::new(16, 16).unwrap();
        let values = (0..256)
            .map(|idx| {
                let (i, j) = (idx / 16, idx % 16);
                (2.0 * PI * (2.0 * i as f64 / 16.0 + 3.0 * j as f64 / 16.0)).cos()
            })
            .collect();
        let batch = FieldBatch::new(1, 1, grid, values).unwrap();
        let spec = &fft2_real(&batch).unwrap()[0];
        let cut = truncate_modes(spec, 4, 4).unwrap();
        for (a, b) in cut.coeffs().iter().zip(spec.coeffs()) {
            assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn truncation_rejects_excess_modes() {
        let spec = HalfSpectrum::zeros(1, 8, 5);
        assert!(matches!(
            truncate_modes(&spec, 5, 2),
            Err(Error::ModeRange(_))
        ));
        assert!(matches!(
            truncate_modes(&spec, 2, 6),
            Err(Error::ModeRange(_))
        ));
    }

    #[test]
    fn pruned_transforms_match_full_ones() {
        let (h, w, kx, ky) = (16, 12, 3, 4);
        let batch = random_batch(1, 2, h, w, 11);
        let plan = SpectralPlan::new(h, w);
        let mut modes = vec![ZERO; 2 * 2 * kx * ky];
        plan.forward_modes(batch.values(), 2, kx, ky, &mut modes);
        let full = &fft2_real(&batch).unwrap()[0];
        for ch in 0..2 {
            for r in 0..2 * kx {
                let row = if r < kx { r } else { h - 2 * kx + r };
                for j in 0..ky {
                    let a = modes[(ch * 2 * kx + r) * ky + j];
                    assert!((a - full.get(ch, row, j)).norm() <= 1e-10);
                }
            }
        }

        let mut back = vec![0.0; 2 * h * w];
        plan.inverse_modes(&modes, 2, kx, ky, &mut back);
        let truncated = truncate_modes(full, kx, ky).unwrap();
        let reference = ifft2_real(&truncated, batch.grid()).unwrap();
        for (a, b) in back.iter().zip(reference.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
