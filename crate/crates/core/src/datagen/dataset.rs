use super::advect::Frame;
use crate::error::{Error, Result};
use crate::field_fft::{FieldBatch, Grid2D, ScalarField2D};
use crate::interface::{alpha_to_rdf, rdf_to_alpha, RdfParams};

/// Training pairs: inputs `[n, 2, H, W]` (initial `ζ`, broadcast time) and
/// targets `[n, 1, H, W]`. Fields are in cell units on a unit-spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: FieldBatch,
    targets: FieldBatch,
    epsilon: f64,
    provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: FieldBatch,
        targets: FieldBatch,
        epsilon: f64,
        provenance: String,
    ) -> Result<Self> {
        if inputs.channels() != 2 || targets.channels() != 1 {
            return Err(Error::Shape(format!(
                "dataset needs 2 input and 1 target channels, got {} and {}",
                inputs.channels(),
                targets.channels()
            )));
        }
        if inputs.n() != targets.n() || !inputs.grid().same_shape(targets.grid()) {
            return Err(Error::Shape(
                "inputs and targets disagree in count or grid".into(),
            ));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        for s in 0..inputs.n() {
            let time = inputs.channel(s, 1);
            if time.iter().any(|&t| t != time[0]) {
                return Err(Error::Shape(format!(
                    "time channel of sample {s} is not spatially constant"
                )));
            }
        }
        Ok(Self {
            inputs,
            targets,
            epsilon,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.n()
    }

    pub fn grid(&self) -> &Grid2D {
        self.inputs.grid()
    }

    pub fn inputs(&self) -> &FieldBatch {
        &self.inputs
    }

    pub fn targets(&self) -> &FieldBatch {
        &self.targets
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Time-channel value of sample `s`.
    pub fn time(&self, s: usize) -> f64 {
        self.inputs.channel(s, 1)[0]
    }

    /// Samples `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            targets: self.targets.select(indices),
            epsilon: self.epsilon,
            provenance: self.provenance.clone(),
        }
    }
}

/// Maps a level set (physical length units) to the field a volume-fraction
/// pipeline would produce: `α` from the tanh profile of width `ε` cells,
/// then `ζ = ε·atanh(1 − 2α)`. The result is in cell units, saturating at
/// `±params.saturation()`, on the unit-spaced grid.
pub fn level_set_to_rdf(phi: &ScalarField2D, params: &RdfParams) -> Result<ScalarField2D> {
    let grid = *phi.grid();
    let cells = phi
        .map(|p| p / grid.min_spacing())?
        .with_grid(grid.unit())?;
    alpha_to_rdf(&rdf_to_alpha(&cells, params)?, params)
}

fn pair_values(zeta0: &ScalarField2D, time: f64, inputs: &mut Vec<f64>) {
    inputs.extend_from_slice(zeta0.values());
    inputs.extend(std::iter::repeat_n(time, zeta0.values().len()));
}

fn check_frame_grids(frames: &[Frame], grid: &Grid2D) -> Result<()> {
    if frames.iter().any(|f| !f.zeta.grid().same_shape(grid)) {
        return Err(Error::Shape(
            "frames of one simulation must share a grid".into(),
        ));
    }
    Ok(())
}

/// `(ζ₀, t/t_final) → ζ_t` for every frame of one simulation.
pub fn build_forecast_dataset(frames: &[Frame], epsilon: f64) -> Result<Dataset> {
    if frames.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a forecast dataset needs at least 3 frames, got {}",
            frames.len()
        )));
    }
    let params = RdfParams::with_epsilon(epsilon)?;
    let grid = *frames[0].zeta.grid();
    check_frame_grids(frames, &grid)?;
    let t_final = frames[frames.len() - 1].time;
    if t_final.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InsufficientData(
            "final frame time must be positive".into(),
        ));
    }

    let zeta0 = level_set_to_rdf(&frames[0].zeta, &params)?;
    let mut inputs = Vec::with_capacity(frames.len() * 2 * grid.len());
    let mut targets = Vec::with_capacity(frames.len() * grid.len());
    for frame in frames {
        pair_values(&zeta0, frame.time / t_final, &mut inputs);
        targets.extend_from_slice(level_set_to_rdf(&frame.zeta, &params)?.values());
    }
    let n = frames.len();
    Dataset::new(
        FieldBatch::new(n, 2, grid.unit(), inputs)?,
        FieldBatch::new(n, 1, grid.unit(), targets)?,
        epsilon,
        format!("forecast frames={n} t_final={t_final} epsilon={epsilon}"),
    )
}

/// Two pairs per simulation: `(ζ₀, t₁) → ζ_{t₁}` and `(ζ₀, t₂) → ζ_{t₂}`,
/// with the raw snapshot times as the time channel.
pub fn build_pairs_dataset(simulations: &[Vec<Frame>], epsilon: f64) -> Result<Dataset> {
    let first = simulations
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::InsufficientData("no simulations given".into()))?;
    let params = RdfParams::with_epsilon(epsilon)?;
    let grid = *first.zeta.grid();

    let n = 2 * simulations.len();
    let mut inputs = Vec::with_capacity(n * 2 * grid.len());
    let mut targets = Vec::with_capacity(n * grid.len());
    for (k, frames) in simulations.iter().enumerate() {
        if frames.len() != 3 {
            return Err(Error::MalformedSimulation(format!(
                "simulation {k} has {} frames, expected 3 snapshots",
                frames.len()
            )));
        }
        if !(frames[0].time.abs() < 1e-12
            && frames[1].time > frames[0].time
            && frames[2].time > frames[1].time)
        {
            return Err(Error::MalformedSimulation(format!(
                "simulation {k} snapshots must start at t = 0 and increase"
            )));
        }
        check_frame_grids(frames, &grid)?;
        let zeta0 = level_set_to_rdf(&frames[0].zeta, &params)?;
        for frame in &frames[1..] {
            pair_values(&zeta0, frame.time, &mut inputs);
            targets.extend_from_slice(level_set_to_rdf(&frame.zeta, &params)?.values());
        }
    }
    Dataset::new(
        FieldBatch::new(n, 2, grid.unit(), inputs)?,
        FieldBatch::new(n, 1, grid.unit(), targets)?,
        epsilon,
        format!("pairs simulations={} epsilon={epsilon}", simulations.len()),
    )
}
