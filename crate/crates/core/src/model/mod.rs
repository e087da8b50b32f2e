//! The Fourier neural operator: lifting, spectral layers, projection,
//! exact reverse-mode gradients and checkpoints.

mod checkpoint;
mod inference;
mod ops;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_checkpoint, save_model,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use inference::{InferenceModel, Precision};
pub use ops::{activation_margin, forward, layer_forward, lift, loss_and_grad, spectral_conv};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FnoConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Hidden width `d_v`.
    pub width: usize,
    pub modes_x: usize,
    pub modes_y: usize,
    pub n_layers: usize,
    /// Per-channel spatial normalization in every non-final layer. It
    /// removes spatially constant inputs such as the time channel, so it
    /// is off by default.
    pub use_norm: bool,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            c_in: 2,
            c_out: 1,
            width: 96,
            modes_x: 20,
            modes_y: 20,
            n_layers: 5,
            use_norm: false,
        }
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_in", self.c_in),
            ("c_out", self.c_out),
            ("width", self.width),
            ("modes_x", self.modes_x),
            ("modes_y", self.modes_y),
            ("n_layers", self.n_layers),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        Ok(())
    }

    /// Retained modes per layer, `2·k_x·k_y`.
    pub fn n_modes(&self) -> usize {
        2 * self.modes_x * self.modes_y
    }

    /// Total number of real scalars across all parameter tensors.
    pub fn parameter_count(&self) -> usize {
        let dv = self.width;
        let norm = if self.use_norm { 2 * dv } else { 0 };
        let layer = 2 * self.n_modes() * dv * dv + dv * dv + dv + norm;
        dv * self.c_in + dv + self.n_layers * layer + self.c_out * dv + self.c_out
    }

    /// Smallest grid a forward pass accepts.
    pub fn min_grid(&self) -> (usize, usize) {
        (2 * self.modes_x, 2 * self.modes_y)
    }
}

/// Role of a parameter tensor; decides weight-decay eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Spectral,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Spectral)
    }
}

/// One Fourier layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLayer {
    pub width: usize,
    pub modes_x: usize,
    pub modes_y: usize,
    /// Mode-space kernel `[2·k_x, k_y, d_v(out), d_v(in)]`. Mode row `r < k_x`
    /// is frequency `r`; row `r ≥ k_x` is frequency `r − 2·k_x` (negative).
    pub spectral: Vec<Complex64>,
    /// Local map `[d_v(out), d_v(in)]`.
    pub local: Vec<f64>,
    pub bias: Vec<f64>,
    /// Empty unless normalization is enabled.
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

impl SpectralLayer {
    fn zeros(config: &FnoConfig) -> Self {
        let dv = config.width;
        let norm = if config.use_norm { dv } else { 0 };
        Self {
            width: dv,
            modes_x: config.modes_x,
            modes_y: config.modes_y,
            spectral: vec![Complex64::new(0.0, 0.0); config.n_modes() * dv * dv],
            local: vec![0.0; dv * dv],
            bias: vec![0.0; dv],
            norm_scale: vec![0.0; norm],
            norm_shift: vec![0.0; norm],
        }
    }

    pub fn n_modes(&self) -> usize {
        2 * self.modes_x * self.modes_y
    }

    pub fn has_norm(&self) -> bool {
        !self.norm_scale.is_empty()
    }
}

/// All trainable tensors. Also used, zero-initialized, as the gradient store.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoParams {
    /// Lifting `P`, `[d_v, c_in]`.
    pub lift: Vec<f64>,
    pub lift_bias: Vec<f64>,
    pub layers: Vec<SpectralLayer>,
    /// Projection `Q`, `[c_out, d_v]`.
    pub proj: Vec<f64>,
    pub proj_bias: Vec<f64>,
}

/// Gradients of every parameter, shaped like the model.
pub type GradientStore = FnoParams;

impl FnoParams {
    pub fn zeros(config: &FnoConfig) -> Self {
        let dv = config.width;
        Self {
            lift: vec![0.0; dv * config.c_in],
            lift_bias: vec![0.0; dv],
            layers: (0..config.n_layers)
                .map(|_| SpectralLayer::zeros(config))
                .collect(),
            proj: vec![0.0; config.c_out * dv],
            proj_bias: vec![0.0; config.c_out],
        }
    }

    /// Tensors in checkpoint declaration order; complex tensors are viewed
    /// as interleaved `(re, im)` reals.
    pub fn tensors(&self) -> Vec<(String, ParamKind, &[f64])> {
        let mut out: Vec<(String, ParamKind, &[f64])> = vec![
            ("lift".into(), ParamKind::Weight, &self.lift),
            ("lift_bias".into(), ParamKind::Bias, &self.lift_bias),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{l}.spectral"),
                ParamKind::Spectral,
                bytemuck::cast_slice(&layer.spectral),
            ));
            out.push((format!("layer{l}.local"), ParamKind::Weight, &layer.local));
            out.push((format!("layer{l}.bias"), ParamKind::Bias, &layer.bias));
            if layer.has_norm() {
                out.push((
                    format!("layer{l}.norm_scale"),
                    ParamKind::Norm,
                    &layer.norm_scale,
                ));
                out.push((
                    format!("layer{l}.norm_shift"),
                    ParamKind::Norm,
                    &layer.norm_shift,
                ));
            }
        }
        out.push(("proj".into(), ParamKind::Weight, &self.proj));
        out.push(("proj_bias".into(), ParamKind::Bias, &self.proj_bias));
        out
    }

    /// Mutable counterpart of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ParamKind, &mut [f64])> {
        let mut out: Vec<(String, ParamKind, &mut [f64])> = vec![
            ("lift".into(), ParamKind::Weight, &mut self.lift),
            ("lift_bias".into(), ParamKind::Bias, &mut self.lift_bias),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let has_norm = layer.has_norm();
            out.push((
                format!("layer{l}.spectral"),
                ParamKind::Spectral,
                bytemuck::cast_slice_mut(&mut layer.spectral),
            ));
            out.push((
                format!("layer{l}.local"),
                ParamKind::Weight,
                &mut layer.local,
            ));
            out.push((format!("layer{l}.bias"), ParamKind::Bias, &mut layer.bias));
            if has_norm {
                out.push((
                    format!("layer{l}.norm_scale"),
                    ParamKind::Norm,
                    &mut layer.norm_scale,
                ));
                out.push((
                    format!("layer{l}.norm_shift"),
                    ParamKind::Norm,
                    &mut layer.norm_shift,
                ));
            }
        }
        out.push(("proj".into(), ParamKind::Weight, &mut self.proj));
        out.push(("proj_bias".into(), ParamKind::Bias, &mut self.proj_bias));
        out
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &FnoParams) {
        for ((_, _, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every parameter, flattened in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, _, t)| t.iter().copied())
            .collect()
    }
}

/// A configured operator with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoModel {
    pub config: FnoConfig,
    pub params: FnoParams,
}

impl FnoModel {
    /// Zero-valued model, norm affines set to identity.
    pub fn zeros(config: FnoConfig) -> Result<Self> {
        config.validate()?;
        let mut params = FnoParams::zeros(&config);
        for layer in &mut params.layers {
            layer.norm_scale.fill(1.0);
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }
}

/// Seeded initialization: `P`, `W`, `Q` and biases from `U(−s, s)` with
/// `s = √(1/fan_in)`, spectral real and imaginary parts from
/// `U(−1/d_v, 1/d_v)`, norm affines at identity.
pub fn init_model(config: FnoConfig, seed: u64) -> Result<FnoModel> {
    let mut model = FnoModel::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |t: &mut [f64], bound: f64| {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
    };
    let in_bound = (1.0 / config.c_in as f64).sqrt();
    let hidden_bound = (1.0 / config.width as f64).sqrt();
    let spectral_bound = 1.0 / config.width as f64;
    let p = &mut model.params;
    fill(&mut p.lift, in_bound);
    fill(&mut p.lift_bias, in_bound);
    for layer in &mut p.layers {
        fill(
            bytemuck::cast_slice_mut(&mut layer.spectral),
            spectral_bound,
        );
        fill(&mut layer.local, hidden_bound);
        fill(&mut layer.bias, hidden_bound);
    }
    fill(&mut p.proj, hidden_bound);
    fill(&mut p.proj_bias, hidden_bound);
    Ok(model)
}
