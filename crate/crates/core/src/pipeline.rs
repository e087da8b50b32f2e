//! Splitting, training, evaluation and the latency benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::field_fft::{FieldBatch, Grid2D, ScalarField2D};
use crate::interface::binarize;
use crate::metrics::{Metrics, MetricsReport};
use crate::model::{forward, loss_and_grad, FnoModel, InferenceModel, Precision};
use crate::optim::{self, AdamWState, OptimConfig};

/// Samples evaluated per forward call in evaluation and validation.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Ordered by the time channel; the earliest fraction trains.
    Temporal,
    /// Seeded shuffle, then split.
    Random,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Temporal => "temporal",
            SplitMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub split_fraction: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub optim: OptimConfig,
    pub loss_log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            split_fraction: 0.9,
            split_mode: SplitMode::Random,
            seed: 0,
            optim: OptimConfig::default(),
            loss_log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be ≥ 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        self.optim.validate()
    }
}

/// Per-epoch losses and wall-clock seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }
}

/// Indices of the training and validation partitions.
pub fn split_indices(dataset: &Dataset, config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 samples, got {n}")));
    }
    let n_train = (config.split_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "fraction {} of {n} samples leaves an empty partition",
            config.split_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match config.split_mode {
        SplitMode::Temporal => order.sort_by(|&a, &b| dataset.time(a).total_cmp(&dataset.time(b))),
        SplitMode::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed)),
    }
    let val = order.split_off(n_train);
    Ok((order, val))
}

pub fn split_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset, config)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Mean relative squared L2 loss over a dataset, without gradients.
pub fn dataset_loss(model: &FnoModel, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for_each_prediction(model, dataset, |s, pred, truth| {
        let norm2: f64 = truth.iter().map(|t| t * t).sum();
        if norm2 == 0.0 {
            return Err(Error::DegenerateTarget { sample: s });
        }
        let err2: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
        total += err2 / norm2;
        Ok(())
    })?;
    Ok(total / dataset.n() as f64)
}

fn for_each_prediction(
    model: &FnoModel,
    dataset: &Dataset,
    mut visit: impl FnMut(usize, &[f64], &[f64]) -> Result<()>,
) -> Result<()> {
    let n = dataset.n();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let indices: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let preds = forward(model, &dataset.inputs().select(&indices))?;
        for (k, &s) in indices.iter().enumerate() {
            visit(s, preds.sample(k), dataset.targets().sample(s))?;
        }
    }
    Ok(())
}

/// Trains on `train`, reporting `val` loss after each epoch.
pub fn fit(
    model: &mut FnoModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    state: &mut AdamWState,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.n() == 0 || val.n() == 0 {
        return Err(Error::Split(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let mut log = match &config.loss_log_path {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs = train.inputs().select(batch);
            let targets = train.targets().select(batch);
            let (loss, grads) = loss_and_grad(model, &inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            optim::step(&mut model.params, &grads, state, &config.optim).map_err(|e| match e {
                Error::Optimizer { .. } => Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                },
                other => other,
            })?;
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.n() as f64;
        let val_loss = dataset_loss(model, val)?;
        let seconds = started.elapsed().as_secs_f64();
        if let Some(log) = log.as_mut() {
            writeln!(
                log,
                "{epoch} {train_loss:.10e} {val_loss:.10e} {seconds:.6}"
            )?;
            log.flush()?;
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.seconds.push(seconds);
    }
    Ok(history)
}

/// Splits `dataset` per `config`, then runs [`fit`] from a fresh optimizer
/// state.
pub fn train(
    model: &mut FnoModel,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainHistory, AdamWState)> {
    config.validate()?;
    let (train_set, val_set) = split_dataset(dataset, config)?;
    let mut state = AdamWState::new(&model.config);
    let history = fit(model, &train_set, &val_set, config, &mut state)?;
    Ok((history, state))
}

/// Field space in which metrics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// The signed distance-like field the model is trained on.
    Rdf,
    /// Binarized liquid indicator.
    Alpha,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Rdf => "rdf",
            Space::Alpha => "alpha",
        }
    }
}

/// Per-sample metrics, averaged overall and per snapshot time.
pub fn evaluate(model: &FnoModel, dataset: &Dataset, space: Space) -> Result<MetricsReport> {
    if dataset.n() == 0 {
        return Err(Error::InsufficientData(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let grid = *dataset.grid();
    let to_space = |values: &[f64]| -> Result<Vec<f64>> {
        Ok(match space {
            Space::Rdf => values.to_vec(),
            Space::Alpha => binarize(&ScalarField2D::new(grid, values.to_vec())?).into_values(),
        })
    };
    let mut per_sample = Vec::with_capacity(dataset.n());
    for_each_prediction(model, dataset, |s, pred, truth| {
        let m = Metrics::compute(&to_space(pred)?, &to_space(truth)?)?;
        per_sample.push((dataset.time(s), m));
        Ok(())
    })?;

    let mut times: Vec<f64> = per_sample.iter().map(|(t, _)| *t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let per_time = times
        .iter()
        .map(|&t| {
            let group: Vec<Metrics> = per_sample
                .iter()
                .filter(|(ts, _)| *ts == t)
                .map(|(_, m)| *m)
                .collect();
            (t, Metrics::mean(&group))
        })
        .collect();
    let all: Vec<Metrics> = per_sample.iter().map(|(_, m)| *m).collect();
    Ok(MetricsReport {
        space: space.name().into(),
        n_samples: dataset.n(),
        overall: Metrics::mean(&all),
        per_time,
    })
}

/// Predicts the field at time `t` from the current field `zeta`.
pub fn predict(model: &FnoModel, zeta: &ScalarField2D, t: f64) -> Result<ScalarField2D> {
    if !t.is_finite() {
        return Err(Error::Config(format!("time must be finite, got {t}")));
    }
    let grid = *zeta.grid();
    let mut values = zeta.values().to_vec();
    values.extend(std::iter::repeat_n(t, grid.len()));
    let out = forward(model, &FieldBatch::new(1, 2, grid, values)?)?;
    ScalarField2D::new(grid, out.into_values())
}

/// Forward latency on a single sample, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub precision: &'static str,
    pub timings_ms: Vec<f64>,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub parameter_count: usize,
}

pub const BENCH_WARMUP: usize = 3;

/// Latency of the 64-bit forward pass.
pub fn bench_inference(model: &FnoModel, grid: &Grid2D, iters: usize) -> Result<LatencyStats> {
    bench_inference_as::<f64>(model, grid, iters)
}

/// Latency of the forward pass evaluated in precision `T`. Parameter
/// conversion happens before timing starts.
pub fn bench_inference_as<T: Precision>(
    model: &FnoModel,
    grid: &Grid2D,
    iters: usize,
) -> Result<LatencyStats> {
    if iters < 10 {
        return Err(Error::Config(format!(
            "need at least 10 iterations, got {iters}"
        )));
    }
    let c_in = model.config.c_in;
    let values: Vec<f64> = (0..c_in * grid.len())
        .map(|k| ((k % grid.width) as f64 * 0.37 + (k / grid.width) as f64 * 0.11).sin())
        .collect();
    let batch = FieldBatch::new(1, c_in, *grid, values)?;
    let fast = InferenceModel::<T>::from_model(model);
    for _ in 0..BENCH_WARMUP {
        fast.forward(&batch)?;
    }
    let mut timings_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let started = Instant::now();
        std::hint::black_box(fast.forward(&batch)?);
        timings_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = timings_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted[((q * (iters - 1) as f64).round() as usize).min(iters - 1)];
    Ok(LatencyStats {
        precision: T::NAME,
        min_ms: sorted[0],
        median_ms: quantile(0.5),
        p95_ms: quantile(0.95),
        parameter_count: model.parameter_count(),
        timings_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, FnoConfig};

    fn toy_dataset(n: usize, grid: Grid2D) -> Dataset {
        let hw = grid.len();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for s in 0..n {
            let t = s as f64 / n as f64;
            let shift = s as f64 * 0.7;
            for k in 0..hw {
                let (i, j) = ((k / grid.width) as f64, (k % grid.width) as f64);
                inputs.push((0.4 * j + shift).sin() + 0.3 * (0.8 * i).cos());
            }
            inputs.extend(std::iter::repeat_n(t, hw));
            for k in 0..hw {
                let (i, j) = ((k / grid.width) as f64, (k % grid.width) as f64);
                targets.push((0.4 * j + shift + 0.5).sin() - 0.2 * (0.8 * i).cos() + 0.5);
            }
        }
        Dataset::new(
            FieldBatch::new(n, 2, grid, inputs).unwrap(),
            FieldBatch::new(n, 1, grid, targets).unwrap(),
            1.0,
            "toy".into(),
        )
        .unwrap()
    }

    fn tiny_config() -> FnoConfig {
        FnoConfig {
            c_in: 2,
            c_out: 1,
            width: 8,
            modes_x: 3,
            modes_y: 3,
            n_layers: 2,
            use_norm: true,
        }
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let data = toy_dataset(10, Grid2D::new(8, 8).unwrap());
        let config = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let (train, val) = split_indices(&data, &config).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
        assert_eq!(
            split_indices(&data, &config).unwrap(),
            (train.clone(), val.clone())
        );
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn temporal_split_orders_by_time() {
        let data = toy_dataset(50, Grid2D::new(4, 4).unwrap());
        let config = TrainConfig {
            split_fraction: 0.6,
            split_mode: SplitMode::Temporal,
            ..TrainConfig::default()
        };
        let (train, val) = split_dataset(&data, &config).unwrap();
        assert_eq!((train.n(), val.n()), (30, 20));
        let last_train = (0..train.n())
            .map(|s| train.time(s))
            .fold(f64::MIN, f64::max);
        let first_val = (0..val.n()).map(|s| val.time(s)).fold(f64::MAX, f64::min);
        assert!(last_train <= first_val);
    }

    #[test]
    fn split_rejects_empty_partitions() {
        let data = toy_dataset(2, Grid2D::new(4, 4).unwrap());
        let config = TrainConfig {
            split_fraction: 0.1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            split_indices(&data, &config),
            Err(Error::Split(_))
        ));
        let one = data.subset(&[0]);
        assert!(matches!(
            split_indices(&one, &TrainConfig::default()),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn one_epoch_with_large_batch_takes_one_step() {
        let data = toy_dataset(4, Grid2D::new(8, 8).unwrap());
        let mut model = init_model(tiny_config(), 1).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 100,
            split_fraction: 0.5,
            ..TrainConfig::default()
        };
        let (history, state) = train(&mut model, &data, &config).unwrap();
        assert_eq!(state.step, 1);
        assert_eq!(history.len(), 1);
    }

    #[test]
    fn training_is_reproducible_and_logs_epochs() {
        let data = toy_dataset(6, Grid2D::new(8, 8).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            split_fraction: 0.5,
            seed: 8,
            loss_log_path: Some(dir.path().join("loss.txt")),
            ..TrainConfig::default()
        };
        let mut a = init_model(tiny_config(), 2).unwrap();
        let mut b = a.clone();
        let (ha, _) = train(&mut a, &data, &config).unwrap();
        let (hb, _) = train(&mut b, &data, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.train_loss, hb.train_loss);
        assert_eq!(ha.val_loss, hb.val_loss);
        let log = std::fs::read_to_string(dir.path().join("loss.txt")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(' ').count() == 4));
    }

    #[test]
    fn memorizes_five_samples() {
        let data = toy_dataset(5, Grid2D::new(16, 16).unwrap());
        let mut model = init_model(tiny_config(), 4).unwrap();
        let config = TrainConfig {
            epochs: 500,
            batch_size: 5,
            optim: OptimConfig {
                lr: 1e-2,
                weight_decay: 0.0,
                ..OptimConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut state = AdamWState::new(&model.config);
        let history = fit(&mut model, &data, &data, &config, &mut state).unwrap();
        let final_loss = *history.train_loss.last().unwrap();
        assert!(final_loss < 1e-2, "final loss {final_loss}");
        let report = evaluate(&model, &data, Space::Rdf).unwrap();
        assert!(report.overall.r2 >= 0.999, "r2 {}", report.overall.r2);
    }

    #[test]
    fn evaluation_does_not_touch_parameters() {
        let data = toy_dataset(3, Grid2D::new(8, 8).unwrap());
        let model = init_model(tiny_config(), 5).unwrap();
        let before = model.clone();
        let report = evaluate(&model, &data, Space::Rdf).unwrap();
        assert_eq!(model, before);
        assert_eq!(report.per_time.len(), 3);
        assert_eq!(report.n_samples, 3);
    }

    #[test]
    fn alpha_space_perfect_prediction() {
        // A model whose output equals its first input channel.
        let config = FnoConfig {
            width: 1,
            n_layers: 1,
            use_norm: false,
            modes_x: 1,
            modes_y: 1,
            ..tiny_config()
        };
        let mut model = FnoModel::zeros(config).unwrap();
        model.params.lift = vec![1.0, 0.0];
        model.params.layers[0].local = vec![1.0];
        model.params.proj = vec![1.0];
        let grid = Grid2D::new(4, 4).unwrap();
        let zeta: Vec<f64> = (0..16).map(|k| k as f64 - 7.5).collect();
        let mut inputs = zeta.clone();
        inputs.extend([0.5; 16]);
        let data = Dataset::new(
            FieldBatch::new(1, 2, grid, inputs).unwrap(),
            FieldBatch::new(1, 1, grid, zeta).unwrap(),
            1.0,
            String::new(),
        )
        .unwrap();
        let report = evaluate(&model, &data, Space::Alpha).unwrap();
        assert_eq!(report.overall.mse, 0.0);
        assert_eq!(report.overall.r2, 1.0);
    }

    #[test]
    fn bench_records_requested_iterations() {
        let model = init_model(tiny_config(), 6).unwrap();
        let stats = bench_inference(&model, &Grid2D::new(16, 16).unwrap(), 10).unwrap();
        assert_eq!(stats.timings_ms.len(), 10);
        assert!(stats.min_ms <= stats.median_ms && stats.median_ms <= stats.p95_ms);
        assert!(stats.median_ms <= stats.min_ms * 10.0 + 1.0);
        assert_eq!(stats.parameter_count, model.parameter_count());
        assert!(bench_inference(&model, &Grid2D::new(16, 16).unwrap(), 9).is_err());
    }
}
