//! Ready-made generation recipes for the two benchmark scenarios.
//!
//! Both use a physical domain of width 1 with square cells (`dx = dy =
//! 1/W`), so a `H×W` grid spans `[0, 1]×[0, H/W]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::advect::{simulate, SimConfig};
use super::dataset::{build_forecast_dataset, build_pairs_dataset, Dataset};
use super::flow::FlowSpec;
use super::init::InitSpec;
use crate::error::{Error, Result};
use crate::field_fft::Grid2D;

/// Physical grid with unit domain width.
pub fn unit_width_grid(height: usize, width: usize) -> Result<Grid2D> {
    let h = 1.0 / width.max(1) as f64;
    Grid2D::with_spacing(height, width, h, h)
}

/// One liquid column collapsing under a stagnation-point flow, sampled at
/// evenly spaced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub t_end: f64,
    pub flow: String,
    /// `(x0, y0, width, height)` in physical units.
    pub column: (f64, f64, f64, f64),
    pub epsilon: f64,
    pub cfl: f64,
}

impl Default for ForecastCase {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 50,
            t_end: 1.0,
            flow: "stagnation:gamma=0.5,cx=0.5,cy=0.1".into(),
            column: (0.35, 0.1, 0.3, 0.5),
            epsilon: 1.0,
            cfl: 0.5,
        }
    }
}

impl ForecastCase {
    pub fn build(&self) -> Result<Dataset> {
        if self.frames < 3 {
            return Err(Error::Config(format!(
                "a forecast needs at least 3 frames, got {}",
                self.frames
            )));
        }
        let grid = unit_width_grid(self.height, self.width)?;
        let flow = FlowSpec::parse(&self.flow, &grid)?;
        let times: Vec<f64> = (0..self.frames)
            .map(|k| self.t_end * k as f64 / (self.frames - 1) as f64)
            .collect();
        let config = SimConfig::for_cfl(grid, &flow, self.t_end, self.cfl, times)?;
        let (x0, y0, w, h) = self.column;
        let frames = simulate(&InitSpec::column(x0, y0, w, h), &flow, &config)?;
        build_forecast_dataset(&frames, self.epsilon)
    }
}

/// Random blobs transported by a fixed flow, two training pairs per
/// simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsCase {
    pub height: usize,
    pub width: usize,
    pub simulations: usize,
    /// Capture times; the first must be 0.
    pub snapshots: Vec<f64>,
    pub flow: String,
    pub count: (usize, usize),
    /// Radius range in physical units.
    pub radius: (f64, f64),
    /// Clearance from the boundary, in cells.
    pub margin: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub cfl: f64,
}

impl Default for BlobsCase {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            simulations: 200,
            snapshots: vec![0.0, 0.25, 0.5],
            flow: "vortex:period=2,amp=0.35+fall:v=0.15".into(),
            count: (1, 3),
            radius: (0.08, 0.16),
            margin: 4.0,
            epsilon: 3.0,
            seed: 0,
            cfl: 0.5,
        }
    }
}

impl BlobsCase {
    /// Simulations run in parallel; each gets its own seed drawn from
    /// `seed`, and results are assembled in simulation order.
    pub fn build(&self) -> Result<Dataset> {
        if self.simulations == 0 {
            return Err(Error::Config("need at least one simulation".into()));
        }
        let grid = unit_width_grid(self.height, self.width)?;
        let flow = FlowSpec::parse(&self.flow, &grid)?;
        let t_end = self.snapshots.iter().copied().fold(0.0, f64::max);
        let config = SimConfig::for_cfl(grid, &flow, t_end, self.cfl, self.snapshots.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let seeds: Vec<u64> = (0..self.simulations).map(|_| rng.gen()).collect();
        let runs = seeds
            .par_iter()
            .map(|&s| {
                let init = InitSpec::blobs(self.count, self.radius, self.margin, s);
                simulate(&init, &flow, &config)
            })
            .collect::<Result<Vec<_>>>()?;
        build_pairs_dataset(&runs, self.epsilon)
    }
}
