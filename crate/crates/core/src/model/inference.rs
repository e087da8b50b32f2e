//! Forward-only evaluation at a chosen floating-point precision.
//!
//! Training always runs in 64-bit; an [`InferenceModel<f32>`] halves the
//! memory traffic of the spectral weights for latency-bound serving.

use std::iter::Sum;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::num_traits::{Float, Zero};
use rustfft::FftNum;

use super::FnoModel;
use crate::error::{Error, Result};
use crate::field_fft::{FieldBatch, SpectralPlan};

/// Floating-point types the inference path can run in.
pub trait Precision: FftNum + Float + Sum + bytemuck::Pod {
    const NAME: &'static str;

    fn narrow(v: f64) -> Self;

    fn widen(self) -> f64;

    /// `C = A·B` for row-major `A: m×k`, `B: k×n`.
    fn matmul(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

macro_rules! impl_precision {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Precision for $t {
            const NAME: &'static str = $name;

            fn narrow(v: f64) -> Self {
                v as $t
            }

            fn widen(self) -> f64 {
                self as f64
            }

            fn matmul(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: lengths asserted above cover the row-major strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_precision!(f32, "f32", matrixmultiply::sgemm);
impl_precision!(f64, "f64", matrixmultiply::dgemm);

#[derive(Debug, Clone)]
struct Layer<T> {
    /// `[2·k_x·k_y, d_v, d_v]` complex, interleaved `(re, im)`.
    spectral: Vec<T>,
    local: Vec<T>,
    bias: Vec<T>,
    norm_scale: Vec<T>,
    norm_shift: Vec<T>,
}

/// A read-only copy of a model's parameters in precision `T`.
#[derive(Debug, Clone)]
pub struct InferenceModel<T> {
    config: super::FnoConfig,
    lift: Vec<T>,
    lift_bias: Vec<T>,
    layers: Vec<Layer<T>>,
    proj: Vec<T>,
    proj_bias: Vec<T>,
}

fn convert<T: Precision>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::narrow(x)).collect()
}

#[inline(always)]
fn dot<T: Precision>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 16;
    let mut acc = [T::zero(); LANES];
    let (a_chunks, b_chunks) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = a_chunks
        .remainder()
        .iter()
        .zip(b_chunks.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (ac, bc) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            acc[l] = acc[l] + ac[l] * bc[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

#[inline(always)]
fn rows_dot<T: Precision>(flat: &[T], for_re: &[T], for_im: &[T], y: &mut [Complex<T>]) {
    for (row, out) in flat.chunks_exact(for_re.len()).zip(y.iter_mut()) {
        *out = Complex::new(dot(row, for_re), dot(row, for_im));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn rows_dot_avx2<T: Precision>(
    flat: &[T],
    for_re: &[T],
    for_im: &[T],
    y: &mut [Complex<T>],
) {
    rows_dot(flat, for_re, for_im, y);
}

impl<T: Precision> InferenceModel<T> {
    pub fn from_model(model: &FnoModel) -> Self {
        let p = &model.params;
        Self {
            config: model.config,
            lift: convert(&p.lift),
            lift_bias: convert(&p.lift_bias),
            layers: p
                .layers
                .iter()
                .map(|l| Layer {
                    spectral: convert(bytemuck::cast_slice(&l.spectral)),
                    local: convert(&l.local),
                    bias: convert(&l.bias),
                    norm_scale: convert(&l.norm_scale),
                    norm_shift: convert(&l.norm_shift),
                })
                .collect(),
            proj: convert(&p.proj),
            proj_bias: convert(&p.proj_bias),
        }
    }

    pub fn config(&self) -> &super::FnoConfig {
        &self.config
    }

    fn affine(&self, w: &[T], b: &[T], v: &[T], outs: usize, ins: usize, hw: usize) -> Vec<T> {
        let mut out = vec![T::zero(); outs * hw];
        T::matmul(outs, ins, hw, w, v, &mut out);
        for (row, &bias) in out.chunks_mut(hw).zip(b) {
            row.iter_mut().for_each(|x| *x = *x + bias);
        }
        out
    }

    fn layer(&self, layer: &Layer<T>, plan: &SpectralPlan<T>, v: &[T], activate: bool) -> Vec<T> {
        let c = &self.config;
        let (dv, kx, ky) = (c.width, c.modes_x, c.modes_y);
        let n_modes = c.n_modes();
        let hw = plan.height() * plan.width();

        let mut channel_major = vec![Complex::<T>::zero(); dv * n_modes];
        plan.forward_modes(v, dv, kx, ky, &mut channel_major);
        let mut mixed = vec![Complex::<T>::zero(); n_modes * dv];
        let (mut for_re, mut for_im) = (vec![T::zero(); 2 * dv], vec![T::zero(); 2 * dv]);
        #[cfg(target_arch = "x86_64")]
        let avx2 = std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma");
        for m in 0..n_modes {
            for j in 0..dv {
                let x = channel_major[j * n_modes + m];
                for_re[2 * j] = x.re;
                for_re[2 * j + 1] = -x.im;
                for_im[2 * j] = x.im;
                for_im[2 * j + 1] = x.re;
            }
            let kernel = &layer.spectral[2 * m * dv * dv..2 * (m + 1) * dv * dv];
            let y = &mut mixed[m * dv..(m + 1) * dv];
            #[cfg(target_arch = "x86_64")]
            if avx2 {
                // SAFETY: the required CPU features were detected at runtime.
                unsafe { rows_dot_avx2(kernel, &for_re, &for_im, y) };
                continue;
            }
            rows_dot(kernel, &for_re, &for_im, y);
        }
        for m in 0..n_modes {
            for h in 0..dv {
                channel_major[h * n_modes + m] = mixed[m * dv + h];
            }
        }
        let mut z = vec![T::zero(); dv * hw];
        plan.inverse_modes(&channel_major, dv, kx, ky, &mut z);

        let mut local = vec![T::zero(); dv * hw];
        T::matmul(dv, dv, hw, &layer.local, v, &mut local);
        for ((row, lrow), &b) in z.chunks_mut(hw).zip(local.chunks(hw)).zip(&layer.bias) {
            for (x, l) in row.iter_mut().zip(lrow) {
                *x = *x + *l + b;
            }
        }
        if activate {
            if !layer.norm_scale.is_empty() {
                let n = T::narrow(hw as f64);
                let eps = T::narrow(super::ops::NORM_EPS);
                for (h, row) in z.chunks_mut(hw).enumerate() {
                    let mean = row.iter().copied().sum::<T>() / n;
                    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
                    let inv = T::one() / (var.sqrt() + eps);
                    let (scale, shift) = (layer.norm_scale[h], layer.norm_shift[h]);
                    row.iter_mut()
                        .for_each(|x| *x = scale * (*x - mean) * inv + shift);
                }
            }
            z.iter_mut().for_each(|x| *x = x.max(T::zero()));
        }
        z
    }

    fn sample(&self, plan: &SpectralPlan<T>, input: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let hw = plan.height() * plan.width();
        let input: Vec<T> = convert(input);
        let mut v = self.affine(&self.lift, &self.lift_bias, &input, c.width, c.c_in, hw);
        for (l, layer) in self.layers.iter().enumerate() {
            v = self.layer(layer, plan, &v, l + 1 < c.n_layers);
        }
        self.affine(&self.proj, &self.proj_bias, &v, c.c_out, c.width, hw)
            .into_iter()
            .map(T::widen)
            .collect()
    }

    /// Evaluates the operator; inputs and outputs stay 64-bit.
    pub fn forward(&self, batch: &FieldBatch) -> Result<FieldBatch> {
        let c = &self.config;
        if batch.channels() != c.c_in {
            return Err(Error::Shape(format!(
                "model input expects {} channels, got {}",
                c.c_in,
                batch.channels()
            )));
        }
        let grid = batch.grid();
        if grid.height < 2 * c.modes_x || grid.width < 2 * c.modes_y {
            return Err(Error::ModeRange(format!(
                "grid {}x{} is too small for modes ({}, {})",
                grid.height, grid.width, c.modes_x, c.modes_y
            )));
        }
        let plan = SpectralPlan::<T>::for_grid(grid);
        let outputs: Vec<Vec<f64>> = (0..batch.n())
            .into_par_iter()
            .map(|s| self.sample(&plan, batch.sample(s)))
            .collect();
        FieldBatch::new(batch.n(), c.c_out, *grid, outputs.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_fft::Grid2D;
    use crate::model::{forward, init_model, FnoConfig};

    fn setup(use_norm: bool) -> (FnoModel, FieldBatch) {
        let config = FnoConfig {
            c_in: 2,
            c_out: 1,
            width: 20,
            modes_x: 4,
            modes_y: 5,
            n_layers: 3,
            use_norm,
        };
        let model = init_model(config, 17).unwrap();
        let grid = Grid2D::new(20, 18).unwrap();
        let values = (0..3 * 2 * grid.len())
            .map(|k| (0.13 * k as f64).sin() + 0.5 * (0.031 * k as f64).cos())
            .collect();
        (model, FieldBatch::new(3, 2, grid, values).unwrap())
    }

    #[test]
    fn f64_inference_matches_training_forward() {
        for use_norm in [true, false] {
            let (model, batch) = setup(use_norm);
            let reference = forward(&model, &batch).unwrap();
            let fast = InferenceModel::<f64>::from_model(&model)
                .forward(&batch)
                .unwrap();
            for (a, b) in reference.values().iter().zip(fast.values()) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn f32_inference_is_close() {
        let (model, batch) = setup(true);
        let reference = forward(&model, &batch).unwrap();
        let fast = InferenceModel::<f32>::from_model(&model)
            .forward(&batch)
            .unwrap();
        let err: f64 = reference
            .values()
            .iter()
            .zip(fast.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = reference.values().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm <= 1e-4, "relative deviation {}", err / norm);
    }

    #[test]
    fn rejects_wrong_channels_and_small_grids() {
        let (model, _) = setup(false);
        let fast = InferenceModel::<f32>::from_model(&model);
        let wrong = FieldBatch::zeros(1, 3, Grid2D::new(20, 20).unwrap());
        assert!(matches!(fast.forward(&wrong), Err(Error::Shape(_))));
        let small = FieldBatch::zeros(1, 2, Grid2D::new(6, 20).unwrap());
        assert!(matches!(fast.forward(&small), Err(Error::ModeRange(_))));
    }
}
