//! `fnoflow`: generate interface-dynamics data, train and evaluate the
//! operator surrogate, predict from text grids, and benchmark inference.

mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fnoflow::datagen::{
    import_grid_text, read_dataset, write_dataset, write_grid_text, BlobsCase, Dataset,
    ForecastCase,
};
use fnoflow::field_fft::Grid2D;
use fnoflow::interface::{rdf_to_alpha, RdfParams};
use fnoflow::model::{init_model, load_model, save_checkpoint, FnoConfig, FnoModel};
use fnoflow::optim::{LrSchedule, OptimConfig};
use fnoflow::pipeline::{
    bench_inference_as, evaluate, predict, split_dataset, train, LatencyStats, Space, SplitMode,
    TrainConfig,
};
use fnoflow::Error;

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "fnoflow",
    version,
    about = "Fourier neural operator surrogate for liquid-vapour interface dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate interface transport and write a training dataset (.fnds).
    Gen(GenArgs),
    /// Train a model on a dataset and write a checkpoint (.fnck).
    Train(TrainArgs),
    /// Compute validation metrics for a trained model.
    Eval(EvalArgs),
    /// Predict a future volume-fraction field from a text grid.
    Predict(PredictArgs),
    /// Measure single-sample forward latency.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseKind {
    /// One collapsing column, forecast pairs over evenly spaced frames.
    Forecast,
    /// Random blobs, two pairs per simulation.
    Blobs,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario to simulate.
    #[arg(long, value_enum)]
    case: CaseKind,
    /// Grid rows and columns.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    grid: Vec<usize>,
    /// Frames (forecast) or simulations (blobs). Defaults: 50 and 200.
    #[arg(long)]
    n: Option<usize>,
    /// Snapshot times for blobs; the first must be 0.
    #[arg(long, num_args = 3, value_names = ["T0", "T1", "T2"], default_values_t = [0.0, 0.25, 0.5])]
    snapshots: Vec<f64>,
    /// Velocity field, e.g. "vortex:period=2,amp=0.35+fall:v=0.15". Defaults depend on the case.
    #[arg(long)]
    flow: Option<String>,
    /// Interface half-width in cells. Defaults: 1 (forecast) and 3 (blobs).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Seed for blob placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final time of a forecast run.
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    /// Courant number of the advection step.
    #[arg(long, default_value_t = 0.5)]
    cfl: f64,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Temporal,
    Random,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Temporal => SplitMode::Temporal,
            SplitArg::Random => SplitMode::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args)]
struct SplitArgs {
    /// Fraction of samples used for training.
    #[arg(long, default_value_t = 0.9)]
    split: f64,
    /// Temporal keeps the earliest samples for training; random shuffles first.
    #[arg(long, value_enum, default_value = "random")]
    split_mode: SplitArg,
    /// Seed for initialization, the split and epoch shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (.fnds).
    #[arg(long)]
    data: PathBuf,
    /// Passes over the training split.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// AdamW learning rate.
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Decoupled weight decay.
    #[arg(long, default_value_t = 1e-4)]
    wd: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[command(flatten)]
    split: SplitArgs,
    /// Retained Fourier modes along rows and columns.
    #[arg(long, num_args = 2, value_names = ["KX", "KY"], default_values_t = [20, 20])]
    modes: Vec<usize>,
    /// Hidden channel width.
    #[arg(long, default_value_t = 96)]
    width: usize,
    /// Number of Fourier layers.
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Per-channel spatial normalization in hidden layers; it cancels the
    /// constant time channel, so it is off by default.
    #[arg(long, value_enum, default_value = "off")]
    norm: Switch,
    /// Learning-rate schedule.
    #[arg(long, value_enum, default_value = "constant")]
    lr_schedule: ScheduleArg,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log ("epoch train_loss val_loss seconds").
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpaceArg {
    Rdf,
    Alpha,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint (.fnck).
    #[arg(long)]
    model: PathBuf,
    /// Dataset (.fnds).
    #[arg(long)]
    data: PathBuf,
    /// Field space for metrics; alpha binarizes prediction and truth.
    #[arg(long, value_enum, default_value = "both")]
    space: SpaceArg,
    /// Samples to evaluate; train and val repeat the split used in training.
    #[arg(long, value_enum, default_value = "all")]
    subset: Subset,
    #[command(flatten)]
    split: SplitArgs,
    /// Report path (key = value lines).
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldSpace {
    Alpha,
    Rdf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model checkpoint (.fnck).
    #[arg(long)]
    model: PathBuf,
    /// Volume-fraction text grid.
    #[arg(long)]
    input: PathBuf,
    /// Time-channel value of the prediction.
    #[arg(long)]
    t: f64,
    /// Interface half-width in cells.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Field written to the output grid.
    #[arg(long, value_enum, default_value = "alpha")]
    output_space: FieldSpace,
    /// Output text grid.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

#[derive(Args)]
struct BenchArgs {
    /// Model checkpoint; defaults to a freshly initialized model with the
    /// standard architecture.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Grid rows and columns.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [84, 84])]
    grid: Vec<usize>,
    /// Timed iterations after warm-up.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Floating-point precision of the forward pass.
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Optional report path (key = value lines).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Split(_) | Error::Geometry(_) | Error::Stability { .. } => 1,
        Error::Divergence { .. } | Error::Optimizer { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Predict(args) => run_predict(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("FNO_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("FNO_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write_manifest(manifest: &RunManifest) -> fnoflow::Result<()> {
    let path = manifest.write()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn grid_flag(grid: &[usize]) -> fnoflow::Result<(usize, usize)> {
    match grid {
        [h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(Error::Config(format!(
            "grid must be two positive sizes, got {grid:?}"
        ))),
    }
}

fn run_gen(args: GenArgs) -> fnoflow::Result<()> {
    let (height, width) = grid_flag(&args.grid)?;
    let mut manifest = RunManifest::new("gen");
    let dataset = match args.case {
        CaseKind::Forecast => {
            let defaults = ForecastCase::default();
            let case = ForecastCase {
                height,
                width,
                frames: args.n.unwrap_or(defaults.frames),
                t_end: args.t_end,
                flow: args.flow.unwrap_or(defaults.flow),
                epsilon: args.epsilon.unwrap_or(defaults.epsilon),
                cfl: args.cfl,
                ..defaults
            };
            manifest
                .flag("case", "forecast")
                .flag("grid", format!("{height} {width}"))
                .flag("n", case.frames)
                .flag("flow", &case.flow)
                .flag("epsilon", case.epsilon)
                .flag("t-end", case.t_end)
                .flag("cfl", case.cfl);
            case.build()?
        }
        CaseKind::Blobs => {
            let defaults = BlobsCase::default();
            let case = BlobsCase {
                height,
                width,
                simulations: args.n.unwrap_or(defaults.simulations),
                snapshots: args.snapshots.clone(),
                flow: args.flow.unwrap_or(defaults.flow),
                epsilon: args.epsilon.unwrap_or(defaults.epsilon),
                seed: args.seed,
                cfl: args.cfl,
                ..defaults
            };
            manifest
                .flag("case", "blobs")
                .flag("grid", format!("{height} {width}"))
                .flag("n", case.simulations)
                .flag("snapshots", join(&case.snapshots))
                .flag("flow", &case.flow)
                .flag("epsilon", case.epsilon)
                .flag("cfl", case.cfl);
            case.build()?
        }
    };
    manifest
        .flag("seed", args.seed)
        .seed("generation", args.seed);
    write_dataset(&dataset, &args.out)?;
    manifest.flag("out", args.out.display()).output(&args.out);
    write_manifest(&manifest)?;
    eprintln!("wrote {} samples to {}", dataset.n(), args.out.display());
    Ok(())
}

fn train_config(split: &SplitArgs) -> TrainConfig {
    TrainConfig {
        split_fraction: split.split,
        split_mode: split.split_mode.into(),
        seed: split.seed,
        ..TrainConfig::default()
    }
}

fn run_train(args: TrainArgs) -> fnoflow::Result<()> {
    let dataset = read_dataset(&args.data)?;
    let model_config = FnoConfig {
        c_in: 2,
        c_out: 1,
        width: args.width,
        modes_x: args.modes[0],
        modes_y: args.modes[1],
        n_layers: args.layers,
        use_norm: matches!(args.norm, Switch::On),
    };
    let n_train = (args.split.split * dataset.n() as f64).round() as u64;
    let steps = args.epochs as u64 * n_train.div_ceil(args.batch.max(1) as u64);
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        optim: OptimConfig {
            lr: args.lr,
            weight_decay: args.wd,
            schedule: match args.lr_schedule {
                ScheduleArg::Constant => LrSchedule::Constant,
                ScheduleArg::Cosine => LrSchedule::Cosine {
                    total_steps: steps.max(1),
                },
            },
            ..OptimConfig::default()
        },
        loss_log_path: args.log.clone(),
        ..train_config(&args.split)
    };
    config.validate()?;
    let mut model = init_model(model_config, args.split.seed)?;
    let (history, state) = train(&mut model, &dataset, &config)?;
    save_checkpoint(&model, &state, &args.out)?;

    let mut manifest = RunManifest::new("train");
    manifest
        .flag("data", args.data.display())
        .flag("epochs", args.epochs)
        .flag("lr", args.lr)
        .flag("wd", args.wd)
        .flag("batch", args.batch)
        .flag("split", args.split.split)
        .flag("split-mode", config.split_mode.name())
        .flag("modes", join(&args.modes))
        .flag("width", args.width)
        .flag("layers", args.layers)
        .flag("norm", if model_config.use_norm { "on" } else { "off" })
        .flag("lr-schedule", config.optim.schedule.name())
        .flag("seed", args.split.seed)
        .flag("out", args.out.display())
        .seed("init", args.split.seed)
        .seed("split", args.split.seed)
        .seed("shuffle", args.split.seed)
        .input(&args.data)
        .output(&args.out);
    if let Some(log) = &args.log {
        manifest.flag("log", log.display());
    }
    write_manifest(&manifest)?;
    if let (Some(t), Some(v)) = (history.train_loss.last(), history.val_loss.last()) {
        eprintln!(
            "trained {} epochs: train loss {t:.6e}, validation loss {v:.6e}",
            history.len()
        );
    }
    Ok(())
}

fn select_subset(dataset: Dataset, subset: Subset, split: &SplitArgs) -> fnoflow::Result<Dataset> {
    if subset == Subset::All {
        return Ok(dataset);
    }
    let (train_set, val_set) = split_dataset(&dataset, &train_config(split))?;
    Ok(if subset == Subset::Train {
        train_set
    } else {
        val_set
    })
}

fn run_eval(args: EvalArgs) -> fnoflow::Result<()> {
    let model = load_model(&args.model)?;
    let dataset = select_subset(read_dataset(&args.data)?, args.subset, &args.split)?;
    let spaces: &[Space] = match args.space {
        SpaceArg::Rdf => &[Space::Rdf],
        SpaceArg::Alpha => &[Space::Alpha],
        SpaceArg::Both => &[Space::Rdf, Space::Alpha],
    };
    let mut text = String::new();
    for &space in spaces {
        let report = evaluate(&model, &dataset, space)?;
        eprintln!(
            "{}: r2 {:.6}, relative error {:.6}, mse {:.6e}",
            space.name(),
            report.overall.r2,
            report.overall.relative_error,
            report.overall.mse
        );
        text.push_str(&report.to_text());
    }
    fs::write(&args.report, text)?;

    let mut manifest = RunManifest::new("eval");
    manifest
        .flag("model", args.model.display())
        .flag("data", args.data.display())
        .flag(
            "space",
            match args.space {
                SpaceArg::Rdf => "rdf",
                SpaceArg::Alpha => "alpha",
                SpaceArg::Both => "both",
            },
        )
        .flag(
            "subset",
            match args.subset {
                Subset::All => "all",
                Subset::Train => "train",
                Subset::Val => "val",
            },
        )
        .flag("split", args.split.split)
        .flag("split-mode", SplitMode::from(args.split.split_mode).name())
        .flag("seed", args.split.seed)
        .flag("report", args.report.display())
        .seed("split", args.split.seed)
        .input(&args.model)
        .input(&args.data)
        .output(&args.report);
    write_manifest(&manifest)
}

fn run_predict(args: PredictArgs) -> fnoflow::Result<()> {
    let model = load_model(&args.model)?;
    let zeta = import_grid_text(&args.input, args.epsilon)?;
    let out = predict(&model, &zeta, args.t)?;
    let (field, space) = match args.output_space {
        FieldSpace::Alpha => (
            rdf_to_alpha(&out, &RdfParams::with_epsilon(args.epsilon)?)?,
            "alpha",
        ),
        FieldSpace::Rdf => (out, "rdf"),
    };
    write_grid_text(&field, &args.out)?;

    let mut manifest = RunManifest::new("predict");
    manifest
        .flag("model", args.model.display())
        .flag("input", args.input.display())
        .flag("t", args.t)
        .flag("epsilon", args.epsilon)
        .flag("output-space", space)
        .flag("out", args.out.display())
        .seed("none", 0)
        .input(&args.model)
        .input(&args.input)
        .output(&args.out);
    write_manifest(&manifest)
}

fn bench_text(stats: &LatencyStats, grid: &Grid2D) -> String {
    format!(
        "precision = {}\ngrid = {} {}\niters = {}\nparameter_count = {}\nmin_ms = {:.6}\nmedian_ms = {:.6}\np95_ms = {:.6}\n",
        stats.precision,
        grid.height,
        grid.width,
        stats.timings_ms.len(),
        stats.parameter_count,
        stats.min_ms,
        stats.median_ms,
        stats.p95_ms
    )
}

fn run_bench(args: BenchArgs) -> fnoflow::Result<()> {
    const DEFAULT_MODEL_SEED: u64 = 0;
    let model: FnoModel = match &args.model {
        Some(path) => load_model(path)?,
        None => init_model(FnoConfig::default(), DEFAULT_MODEL_SEED)?,
    };
    let (h, w) = grid_flag(&args.grid)?;
    let grid = Grid2D::new(h, w)?;
    let stats = match args.precision {
        PrecisionArg::F64 => bench_inference_as::<f64>(&model, &grid, args.iters)?,
        PrecisionArg::F32 => bench_inference_as::<f32>(&model, &grid, args.iters)?,
    };
    let text = bench_text(&stats, &grid);
    print!("{text}");
    let Some(report) = &args.report else {
        return Ok(());
    };
    fs::write(report, &text)?;
    let mut manifest = RunManifest::new("bench");
    manifest
        .flag("grid", format!("{h} {w}"))
        .flag("iters", args.iters)
        .flag("precision", stats.precision)
        .flag("report", report.display())
        .seed("model", DEFAULT_MODEL_SEED)
        .output(report);
    match &args.model {
        Some(path) => {
            manifest.flag("model", path.display()).input(path);
        }
        None => {
            manifest.flag("model", "default");
        }
    }
    write_manifest(&manifest)
}
