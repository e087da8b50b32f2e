use num_complex::Complex64;
use rayon::prelude::*;

use super::{FnoModel, FnoParams, GradientStore, SpectralLayer};
use crate::error::{Error, Result};
use crate::field_fft::{FieldBatch, Grid2D, SpectralPlan};

/// Added to the channel standard deviation in the normalization.
pub const NORM_EPS: f64 = 1e-5;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `C = alpha·op(A)·op(B) + beta·C` on row-major buffers, where `op(A)` is
/// `m×k` and `op(B)` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserted lengths cover every index reachable through the
    // strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn check_grid(modes_x: usize, modes_y: usize, grid: &Grid2D) -> Result<()> {
    if grid.height < 2 * modes_x || grid.width < 2 * modes_y {
        return Err(Error::ModeRange(format!(
            "grid {}x{} is too small for modes ({modes_x}, {modes_y}); need at least {}x{}",
            grid.height,
            grid.width,
            2 * modes_x,
            2 * modes_y
        )));
    }
    Ok(())
}

fn check_channels(batch: &FieldBatch, expected: usize, what: &str) -> Result<()> {
    if batch.channels() != expected {
        return Err(Error::Shape(format!(
            "{what} expects {expected} channels, got {}",
            batch.channels()
        )));
    }
    Ok(())
}

/// Hermitian weight of a stored half-spectrum column.
fn column_weight(ky: usize, width: usize) -> f64 {
    if ky == 0 || (width.is_multiple_of(2) && ky == width / 2) {
        1.0
    } else {
        2.0
    }
}

/// Real dot product with independent partial sums per lane so the loop
/// vectorizes.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (a_chunks, b_chunks) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = a_chunks
        .remainder()
        .iter()
        .zip(b_chunks.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ac, bc) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            acc[l] += ac[l] * bc[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Complex matrix-vector product `y = R·x` for one mode, with `R` row-major
/// `[d_v, d_v]`. Each output is two real dot products of the interleaved
/// row against rearranged copies of `x`.
fn mode_matvec(
    kernel: &[Complex64],
    x: &[Complex64],
    for_re: &mut [f64],
    for_im: &mut [f64],
    y: &mut [Complex64],
) {
    for (j, v) in x.iter().enumerate() {
        for_re[2 * j] = v.re;
        for_re[2 * j + 1] = -v.im;
        for_im[2 * j] = v.im;
        for_im[2 * j + 1] = v.re;
    }
    let flat: &[f64] = bytemuck::cast_slice(kernel);
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { rows_dot_avx2(flat, for_re, for_im, y) };
        return;
    }
    rows_dot(flat, for_re, for_im, y);
}

#[inline(always)]
fn rows_dot(flat: &[f64], for_re: &[f64], for_im: &[f64], y: &mut [Complex64]) {
    for (row, out) in flat.chunks_exact(for_re.len()).zip(y.iter_mut()) {
        *out = Complex64::new(dot(row, for_re), dot(row, for_im));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn rows_dot_avx2(flat: &[f64], for_re: &[f64], for_im: &[f64], y: &mut [Complex64]) {
    rows_dot(flat, for_re, for_im, y);
}

/// Pointwise affine map `out[o] = Σ_i w[o,i]·v[i] + b[o]` over `hw` cells.
fn pointwise_affine(
    w: &[f64],
    b: &[f64],
    v: &[f64],
    outs: usize,
    ins: usize,
    hw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; outs * hw];
    gemm(outs, ins, hw, 1.0, w, false, v, false, 0.0, &mut out);
    for (row, bias) in out.chunks_mut(hw).zip(b) {
        row.iter_mut().for_each(|x| *x += bias);
    }
    out
}

/// What the backward pass needs from one layer's forward evaluation.
struct LayerTrace {
    input: Vec<f64>,
    /// Retained modes of `input`, mode-major `[modes, d_v]`.
    modes: Vec<Complex64>,
    normalized: Vec<f64>,
    std: Vec<f64>,
    output: Vec<f64>,
}

/// Spectral path for one sample: `v` is `[d_v, H·W]`. Writes the transposed
/// input modes into `modes_out` and returns the real-space result.
fn spectral_sample(
    layer: &SpectralLayer,
    plan: &SpectralPlan,
    v: &[f64],
    modes_out: &mut Vec<Complex64>,
) -> Vec<f64> {
    let (dv, kx, ky) = (layer.width, layer.modes_x, layer.modes_y);
    let n_modes = layer.n_modes();
    let hw = plan.height() * plan.width();

    let mut channel_major = vec![CZERO; dv * n_modes];
    plan.forward_modes(v, dv, kx, ky, &mut channel_major);
    modes_out.resize(dv * n_modes, CZERO);
    transpose(&channel_major, dv, n_modes, modes_out);

    let mut mixed = vec![CZERO; n_modes * dv];
    let (mut for_re, mut for_im) = (vec![0.0; 2 * dv], vec![0.0; 2 * dv]);
    for m in 0..n_modes {
        mode_matvec(
            &layer.spectral[m * dv * dv..(m + 1) * dv * dv],
            &modes_out[m * dv..(m + 1) * dv],
            &mut for_re,
            &mut for_im,
            &mut mixed[m * dv..(m + 1) * dv],
        );
    }
    transpose(&mixed, n_modes, dv, &mut channel_major);
    let mut out = vec![0.0; dv * hw];
    plan.inverse_modes(&channel_major, dv, kx, ky, &mut out);
    out
}

/// One Fourier layer on one sample. Returns the output and, when
/// `record` is set, the trace for the backward pass.
fn layer_sample(
    layer: &SpectralLayer,
    plan: &SpectralPlan,
    input: Vec<f64>,
    activate: bool,
    record: bool,
) -> (Vec<f64>, Option<LayerTrace>) {
    let dv = layer.width;
    let hw = plan.height() * plan.width();
    let mut modes = Vec::new();
    let mut z = spectral_sample(layer, plan, &input, &mut modes);
    gemm(
        dv,
        dv,
        hw,
        1.0,
        &layer.local,
        false,
        &input,
        false,
        1.0,
        &mut z,
    );
    for (row, b) in z.chunks_mut(hw).zip(&layer.bias) {
        row.iter_mut().for_each(|x| *x += b);
    }

    let mut normalized = Vec::new();
    let mut stds = Vec::new();
    if activate {
        if layer.has_norm() {
            normalized = vec![0.0; dv * hw];
            stds = vec![0.0; dv];
            for h in 0..dv {
                let row = &mut z[h * hw..(h + 1) * hw];
                let mean = row.iter().sum::<f64>() / hw as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / hw as f64;
                let std = var.sqrt();
                let inv = 1.0 / (std + NORM_EPS);
                let (scale, shift) = (layer.norm_scale[h], layer.norm_shift[h]);
                let nrow = &mut normalized[h * hw..(h + 1) * hw];
                for (x, n) in row.iter_mut().zip(nrow.iter_mut()) {
                    *n = (*x - mean) * inv;
                    *x = scale * *n + shift;
                }
                stds[h] = std;
            }
        }
        z.iter_mut().for_each(|x| *x = x.max(0.0));
    }

    let trace = record.then(|| LayerTrace {
        input,
        modes,
        normalized,
        std: stds,
        output: if activate { z.clone() } else { Vec::new() },
    });
    (z, trace)
}

struct SampleTrace {
    input: Vec<f64>,
    layers: Vec<LayerTrace>,
    last_hidden: Vec<f64>,
}

fn forward_sample(
    model: &FnoModel,
    plan: &SpectralPlan,
    input: &[f64],
    record: bool,
) -> (Vec<f64>, Option<SampleTrace>) {
    let cfg = &model.config;
    let p = &model.params;
    let hw = plan.height() * plan.width();
    let mut v = pointwise_affine(&p.lift, &p.lift_bias, input, cfg.width, cfg.c_in, hw);
    let mut traces = Vec::with_capacity(if record { cfg.n_layers } else { 0 });
    for (l, layer) in p.layers.iter().enumerate() {
        let activate = l + 1 < cfg.n_layers;
        let (out, trace) = layer_sample(layer, plan, v, activate, record);
        traces.extend(trace);
        v = out;
    }
    let pred = pointwise_affine(&p.proj, &p.proj_bias, &v, cfg.c_out, cfg.width, hw);
    let trace = record.then(|| SampleTrace {
        input: input.to_vec(),
        layers: traces,
        last_hidden: v,
    });
    (pred, trace)
}

/// Backward through one layer; accumulates parameter gradients into `grads`
/// and returns the gradient with respect to the layer input.
fn layer_backward(
    layer: &SpectralLayer,
    grads: &mut SpectralLayer,
    plan: &SpectralPlan,
    trace: &LayerTrace,
    mut gz: Vec<f64>,
    activate: bool,
) -> Vec<f64> {
    let (dv, kx, ky) = (layer.width, layer.modes_x, layer.modes_y);
    let n_modes = layer.n_modes();
    let (h_len, w_len) = (plan.height(), plan.width());
    let hw = h_len * w_len;

    if activate {
        for (g, out) in gz.iter_mut().zip(&trace.output) {
            if *out <= 0.0 {
                *g = 0.0;
            }
        }
        if layer.has_norm() {
            for h in 0..dv {
                let row = &mut gz[h * hw..(h + 1) * hw];
                let nrow = &trace.normalized[h * hw..(h + 1) * hw];
                let (mut g_scale, mut g_shift) = (0.0, 0.0);
                for (g, n) in row.iter().zip(nrow) {
                    g_scale += g * n;
                    g_shift += g;
                }
                grads.norm_scale[h] += g_scale;
                grads.norm_shift[h] += g_shift;

                let scale = layer.norm_scale[h];
                let std = trace.std[h];
                let inv = 1.0 / (std + NORM_EPS);
                // With gn = scale·g: Σ gn·n = scale·g_scale.
                let coupling = if std > 0.0 {
                    scale * g_scale / (hw as f64 * std)
                } else {
                    0.0
                };
                let mut mean = 0.0;
                for (g, n) in row.iter_mut().zip(nrow) {
                    *g = scale * *g * inv - n * coupling;
                    mean += *g;
                }
                mean /= hw as f64;
                row.iter_mut().for_each(|g| *g -= mean);
            }
        }
    }

    for (gb, row) in grads.bias.iter_mut().zip(gz.chunks(hw)) {
        *gb += row.iter().sum::<f64>();
    }
    gemm(
        dv,
        hw,
        dv,
        1.0,
        &gz,
        false,
        &trace.input,
        true,
        1.0,
        &mut grads.local,
    );
    let mut g_in = vec![0.0; dv * hw];
    gemm(
        dv,
        dv,
        hw,
        1.0,
        &layer.local,
        true,
        &gz,
        false,
        0.0,
        &mut g_in,
    );

    // Spectral path: output = inverse(R·modes(input)).
    let mut channel_major = vec![CZERO; dv * n_modes];
    plan.forward_modes(&gz, dv, kx, ky, &mut channel_major);
    let mut g_hat = vec![CZERO; n_modes * dv];
    transpose(&channel_major, dv, n_modes, &mut g_hat);

    let mut g_modes = vec![CZERO; n_modes * dv];
    for m in 0..n_modes {
        let weight = column_weight(m % ky, w_len) / hw as f64;
        let x = &trace.modes[m * dv..(m + 1) * dv];
        let g_row = &g_hat[m * dv..(m + 1) * dv];
        let kernel = &layer.spectral[m * dv * dv..(m + 1) * dv * dv];
        let g_kernel = &mut grads.spectral[m * dv * dv..(m + 1) * dv * dv];
        let gx = &mut g_modes[m * dv..(m + 1) * dv];
        for h in 0..dv {
            let gy = g_row[h];
            let gy_w = gy * weight;
            let krow = &kernel[h * dv..(h + 1) * dv];
            let gkrow = &mut g_kernel[h * dv..(h + 1) * dv];
            for j in 0..dv {
                gkrow[j] += gy_w * x[j].conj();
                gx[j] += krow[j].conj() * gy;
            }
        }
    }
    transpose(&g_modes, n_modes, dv, &mut channel_major);
    let mut g_spectral = vec![0.0; dv * hw];
    plan.inverse_modes(&channel_major, dv, kx, ky, &mut g_spectral);
    for (g, s) in g_in.iter_mut().zip(&g_spectral) {
        *g += s;
    }
    g_in
}

fn backward_sample(
    model: &FnoModel,
    plan: &SpectralPlan,
    trace: &SampleTrace,
    g_pred: &[f64],
    grads: &mut GradientStore,
) {
    let cfg = &model.config;
    let p = &model.params;
    let hw = plan.height() * plan.width();
    let dv = cfg.width;

    gemm(
        cfg.c_out,
        hw,
        dv,
        1.0,
        g_pred,
        false,
        &trace.last_hidden,
        true,
        1.0,
        &mut grads.proj,
    );
    for (gb, row) in grads.proj_bias.iter_mut().zip(g_pred.chunks(hw)) {
        *gb += row.iter().sum::<f64>();
    }
    let mut g = vec![0.0; dv * hw];
    gemm(
        dv, cfg.c_out, hw, 1.0, &p.proj, true, g_pred, false, 0.0, &mut g,
    );

    for l in (0..cfg.n_layers).rev() {
        let activate = l + 1 < cfg.n_layers;
        g = layer_backward(
            &p.layers[l],
            &mut grads.layers[l],
            plan,
            &trace.layers[l],
            g,
            activate,
        );
    }

    gemm(
        dv,
        hw,
        cfg.c_in,
        1.0,
        &g,
        false,
        &trace.input,
        true,
        1.0,
        &mut grads.lift,
    );
    for (gb, row) in grads.lift_bias.iter_mut().zip(g.chunks(hw)) {
        *gb += row.iter().sum::<f64>();
    }
}

fn check_model_input(model: &FnoModel, batch: &FieldBatch) -> Result<()> {
    check_channels(batch, model.config.c_in, "model input")?;
    check_grid(model.config.modes_x, model.config.modes_y, batch.grid())
}

/// Lifting `v₀ = P·a + b` at every cell.
pub fn lift(model: &FnoModel, batch: &FieldBatch) -> Result<FieldBatch> {
    check_channels(batch, model.config.c_in, "lifting")?;
    let cfg = &model.config;
    let hw = batch.grid().len();
    let values = (0..batch.n())
        .flat_map(|s| {
            pointwise_affine(
                &model.params.lift,
                &model.params.lift_bias,
                batch.sample(s),
                cfg.width,
                cfg.c_in,
                hw,
            )
        })
        .collect();
    FieldBatch::new(batch.n(), cfg.width, *batch.grid(), values)
}

/// `inverse(R(k)·forward(v)(k))` over the retained corner modes.
pub fn spectral_conv(layer: &SpectralLayer, v: &FieldBatch) -> Result<FieldBatch> {
    check_channels(v, layer.width, "spectral convolution")?;
    check_grid(layer.modes_x, layer.modes_y, v.grid())?;
    let plan = SpectralPlan::for_grid(v.grid());
    let mut scratch = Vec::new();
    let values = (0..v.n())
        .flat_map(|s| spectral_sample(layer, &plan, v.sample(s), &mut scratch))
        .collect();
    FieldBatch::new(v.n(), layer.width, *v.grid(), values)
}

/// `W·v + K(v) + b`, then (unless `last`) normalization and ReLU.
pub fn layer_forward(layer: &SpectralLayer, v: &FieldBatch, last: bool) -> Result<FieldBatch> {
    check_channels(v, layer.width, "layer")?;
    check_grid(layer.modes_x, layer.modes_y, v.grid())?;
    let plan = SpectralPlan::for_grid(v.grid());
    let values = (0..v.n())
        .flat_map(|s| layer_sample(layer, &plan, v.sample(s).to_vec(), !last, false).0)
        .collect();
    FieldBatch::new(v.n(), layer.width, *v.grid(), values)
}

/// Full operator evaluation, `[n, c_in, H, W] → [n, c_out, H, W]`.
pub fn forward(model: &FnoModel, batch: &FieldBatch) -> Result<FieldBatch> {
    check_model_input(model, batch)?;
    let plan = SpectralPlan::for_grid(batch.grid());
    let outputs: Vec<Vec<f64>> = (0..batch.n())
        .into_par_iter()
        .map(|s| forward_sample(model, &plan, batch.sample(s), false).0)
        .collect();
    FieldBatch::new(
        batch.n(),
        model.config.c_out,
        *batch.grid(),
        outputs.concat(),
    )
}

/// Relative squared error of one sample and its gradient with respect to
/// the prediction, scaled by `1/batch`.
/// Smallest |pre-activation| over every ReLU unit and sample. Finite
/// differences of the loss are only valid when this exceeds the step.
pub fn activation_margin(model: &FnoModel, inputs: &FieldBatch) -> Result<f64> {
    check_model_input(model, inputs)?;
    let plan = SpectralPlan::for_grid(inputs.grid());
    let hw = inputs.grid().len();
    let cfg = &model.config;
    let mut margin = f64::INFINITY;
    for s in 0..inputs.n() {
        let p = &model.params;
        let mut v = pointwise_affine(
            &p.lift,
            &p.lift_bias,
            inputs.sample(s),
            cfg.width,
            cfg.c_in,
            hw,
        );
        for layer in &p.layers[..cfg.n_layers - 1] {
            let (mut z, _) = layer_sample(layer, &plan, v.clone(), false, false);
            if layer.has_norm() {
                for (h, row) in z.chunks_mut(hw).enumerate() {
                    let mean = row.iter().sum::<f64>() / hw as f64;
                    let std =
                        (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / hw as f64).sqrt();
                    for x in row.iter_mut() {
                        *x = layer.norm_scale[h] * (*x - mean) / (std + NORM_EPS)
                            + layer.norm_shift[h];
                    }
                }
            }
            margin = z.iter().fold(margin, |m, x| m.min(x.abs()));
            v = layer_sample(layer, &plan, v, true, false).0;
        }
    }
    Ok(margin)
}

fn relative_loss(
    pred: &[f64],
    target: &[f64],
    batch: usize,
    sample: usize,
) -> Result<(f64, Vec<f64>)> {
    let norm2: f64 = target.iter().map(|t| t * t).sum();
    if norm2 == 0.0 {
        return Err(Error::DegenerateTarget { sample });
    }
    let err2: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let scale = 2.0 / (norm2 * batch as f64);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| scale * (p - t))
        .collect();
    Ok((err2 / norm2, grad))
}

/// Mean relative squared L2 loss over the batch and its exact gradient.
///
/// Samples are split into one contiguous chunk per worker thread; chunk
/// gradients are summed in chunk order, so results are reproducible for a
/// fixed thread count.
pub fn loss_and_grad(
    model: &FnoModel,
    inputs: &FieldBatch,
    targets: &FieldBatch,
) -> Result<(f64, GradientStore)> {
    check_model_input(model, inputs)?;
    check_channels(targets, model.config.c_out, "targets")?;
    if targets.n() != inputs.n() || !targets.grid().same_shape(inputs.grid()) {
        return Err(Error::Shape("targets do not match inputs".into()));
    }
    let n = inputs.n();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let plan = SpectralPlan::for_grid(inputs.grid());
    let chunks = rayon::current_num_threads().clamp(1, n);
    let per_chunk = n.div_ceil(chunks);

    let run_chunk = |c: usize| -> Result<(f64, GradientStore)> {
        let mut grads = FnoParams::zeros(&model.config);
        let mut loss = 0.0;
        for s in c * per_chunk..((c + 1) * per_chunk).min(n) {
            let (pred, trace) = forward_sample(model, &plan, inputs.sample(s), true);
            let (l, g_pred) = relative_loss(&pred, targets.sample(s), n, s)?;
            backward_sample(model, &plan, &trace.expect("recorded"), &g_pred, &mut grads);
            loss += l;
        }
        Ok((loss, grads))
    };

    let n_chunks = n.div_ceil(per_chunk);
    let mut parts: Vec<Result<(f64, GradientStore)>> = if n_chunks == 1 {
        vec![run_chunk(0)]
    } else {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    };
    let (mut loss, mut grads) = parts.remove(0)?;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss / n as f64, grads))
}
