//! AdamW with decoupled weight decay over the model's parameter tensors.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{FnoConfig, FnoParams};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to zero over `total_steps`.
    Cosine {
        total_steps: u64,
    },
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine { .. } => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            schedule: LrSchedule::Constant,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        if let LrSchedule::Cosine { total_steps: 0 } = self.schedule {
            return Err(Error::Config(
                "cosine schedule needs total_steps ≥ 1".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used for step `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { total_steps } => {
                let progress = (t.saturating_sub(1)).min(total_steps) as f64 / total_steps as f64;
                0.5 * self.lr * (1.0 + (PI * progress).cos())
            }
        }
    }
}

/// First and second moment accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: FnoParams,
    pub v: FnoParams,
}

impl AdamWState {
    pub fn new(config: &FnoConfig) -> Self {
        Self {
            step: 0,
            m: FnoParams::zeros(config),
            v: FnoParams::zeros(config),
        }
    }
}

/// One AdamW update. Gradients are checked before anything is modified.
pub fn step(
    params: &mut FnoParams,
    grads: &FnoParams,
    state: &mut AdamWState,
    config: &OptimConfig,
) -> Result<()> {
    config.validate()?;
    let grad_tensors = grads.tensors();
    {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.2.len()).collect();
        let same = |p: &FnoParams| {
            let lens: Vec<usize> = p.tensors().iter().map(|t| t.2.len()).collect();
            lens == shapes
        };
        if !same(grads) || !same(&state.m) || !same(&state.v) {
            return Err(Error::Shape(
                "gradients or optimizer state do not match parameters".into(),
            ));
        }
    }
    for (name, _, g) in &grad_tensors {
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Optimizer {
                tensor: name.clone(),
                message: format!("non-finite gradient at element {k}"),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.lr_at(state.step);

    let moments = state.m.tensors_mut().into_iter().zip(state.v.tensors_mut());
    for (((_, kind, theta), (_, _, g)), ((_, _, m), (_, _, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(moments)
    {
        let wd = if kind.decays() {
            config.weight_decay
        } else {
            0.0
        };
        for (((th, g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= lr * (m_hat / (v_hat.sqrt() + config.eps) + wd * *th);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ParamKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FnoConfig {
        FnoConfig {
            c_in: 1,
            c_out: 1,
            width: 2,
            modes_x: 1,
            modes_y: 1,
            n_layers: 1,
            use_norm: true,
        }
    }

    fn fill(p: &mut FnoParams, value: f64) {
        for (_, _, t) in p.tensors_mut() {
            t.fill(value);
        }
    }

    #[test]
    fn scalar_first_step_moves_by_lr() {
        let config = tiny();
        let mut params = FnoParams::zeros(&config);
        fill(&mut params, 1.0);
        let mut grads = FnoParams::zeros(&config);
        fill(&mut grads, 1.0);
        let mut state = AdamWState::new(&config);
        let opt = OptimConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        step(&mut params, &grads, &mut state, &opt).unwrap();
        assert!(params.to_flat().iter().all(|v| (v - 0.9).abs() <= 1e-6));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let config = tiny();
        let mut params = init_model(config, 3).unwrap().params;
        let before = params.clone();
        let mut state = AdamWState::new(&config);
        let opt = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        step(&mut params, &FnoParams::zeros(&config), &mut state, &opt).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn decay_shrinks_weights_geometrically_and_spares_biases() {
        let config = tiny();
        let mut params = FnoParams::zeros(&config);
        fill(&mut params, 2.0);
        let mut state = AdamWState::new(&config);
        let opt = OptimConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let zero = FnoParams::zeros(&config);
        for _ in 0..7 {
            step(&mut params, &zero, &mut state, &opt).unwrap();
        }
        let expected = 2.0 * (1.0 - 0.01 * 0.5f64).powi(7);
        for (_, kind, t) in params.tensors() {
            let want = if kind.decays() { expected } else { 2.0 };
            assert!(t.iter().all(|v| (v - want).abs() <= 1e-14), "{kind:?}");
        }
    }

    #[test]
    fn rejects_non_finite_gradient_naming_tensor() {
        let config = tiny();
        let mut params = FnoParams::zeros(&config);
        let mut grads = FnoParams::zeros(&config);
        grads.layers[0].local[1] = f64::NAN;
        let mut state = AdamWState::new(&config);
        let err = step(&mut params, &grads, &mut state, &OptimConfig::default()).unwrap_err();
        match err {
            Error::Optimizer { tensor, .. } => assert_eq!(tensor, "layer0.local"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    /// Straight transcription of the update equations on flat vectors, with
    /// bias corrections recomputed from scratch each step.
    fn reference_adamw(
        theta: &mut [f64],
        decays: &[bool],
        grad: impl Fn(&[f64]) -> Vec<f64>,
        steps: usize,
        opt: &OptimConfig,
    ) {
        let n = theta.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        for t in 1..=steps {
            let g = grad(theta);
            for i in 0..n {
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - opt.beta1.powf(t as f64));
                let v_hat = v[i] / (1.0 - opt.beta2.powf(t as f64));
                let wd = if decays[i] { opt.weight_decay } else { 0.0 };
                theta[i] = theta[i] - opt.lr * (m_hat / (v_hat.sqrt() + opt.eps) + wd * theta[i]);
            }
        }
    }

    #[test]
    fn matches_reference_on_random_quadratic() {
        let config = FnoConfig { width: 3, ..tiny() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = init_model(config, 5).unwrap().params;
        let n = params.len();
        let curvature: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
        let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let decays: Vec<bool> = params
            .tensors()
            .iter()
            .flat_map(|(_, kind, t)| {
                std::iter::repeat_n(
                    *kind != ParamKind::Bias && *kind != ParamKind::Norm,
                    t.len(),
                )
            })
            .collect();
        let grad = |theta: &[f64]| -> Vec<f64> {
            theta
                .iter()
                .zip(&curvature)
                .zip(&center)
                .map(|((x, a), c)| a * (x - c))
                .collect()
        };
        let opt = OptimConfig {
            lr: 1e-2,
            weight_decay: 1e-2,
            ..OptimConfig::default()
        };

        let mut reference = params.to_flat();
        reference_adamw(&mut reference, &decays, grad, 100, &opt);

        let mut state = AdamWState::new(&config);
        for _ in 0..100 {
            let g = grad(&params.to_flat());
            let mut grads = FnoParams::zeros(&config);
            let mut offset = 0;
            for (_, _, t) in grads.tensors_mut() {
                t.copy_from_slice(&g[offset..offset + t.len()]);
                offset += t.len();
            }
            step(&mut params, &grads, &mut state, &opt).unwrap();
        }
        for (a, b) in params.to_flat().iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let opt = OptimConfig {
            lr: 1.0,
            schedule: LrSchedule::Cosine { total_steps: 10 },
            ..OptimConfig::default()
        };
        assert_eq!(opt.lr_at(1), 1.0);
        assert!((opt.lr_at(6) - 0.5).abs() < 1e-12);
        assert!(opt.lr_at(11).abs() < 1e-12);
        assert!(opt.lr_at(50).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn first_step_is_gradient_scale_invariant(c in 1e-3f64..1e3, seed in 0u64..100) {
            let config = tiny();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grads = FnoParams::zeros(&config);
            for (_, _, t) in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let mut scaled = grads.clone();
            scaled.scale(c);
            let opt = OptimConfig { eps: 1e-300, weight_decay: 0.0, ..OptimConfig::default() };
            let start = init_model(config, seed).unwrap().params;
            let (mut a, mut b) = (start.clone(), start);
            step(&mut a, &grads, &mut AdamWState::new(&config), &opt).unwrap();
            step(&mut b, &scaled, &mut AdamWState::new(&config), &opt).unwrap();
            for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
                proptest::prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
