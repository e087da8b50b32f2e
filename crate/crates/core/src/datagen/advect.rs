use super::flow::FlowSpec;
use super::init::{initial_field, InitSpec};
use crate::error::{Error, Result};
use crate::field_fft::{Grid2D, ScalarField2D};

/// Tolerance on snapshot times lying inside the simulated interval.
const TIME_TOL: f64 = 1e-9;

/// Interpolation of `ζ` at semi-Lagrangian departure points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Bilinear,
    /// Catmull-Rom bicubic, clamped to the values of the enclosing cell.
    #[default]
    Cubic,
}

/// Time stepping controls for [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: Grid2D,
    /// Step size (s).
    pub dt: f64,
    pub n_steps: usize,
    /// Capture times (s); each maps to the nearest step.
    pub snapshot_times: Vec<f64>,
    /// Steps between redistancing passes, 0 disables it.
    pub reinit_every: usize,
    pub interpolation: Interpolation,
}

impl SimConfig {
    /// Picks the largest `dt ≤ cfl·h/max|u|` that divides `t_end` into whole
    /// steps. The speed bound is sampled at the start, middle and end of the
    /// interval.
    pub fn for_cfl(
        grid: Grid2D,
        flow: &FlowSpec,
        t_end: f64,
        cfl: f64,
        snapshot_times: Vec<f64>,
    ) -> Result<Self> {
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::Config(format!("end time must be >= 0, got {t_end}")));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Config(format!(
                "CFL target must lie in (0, 1], got {cfl}"
            )));
        }
        let speed = [0.0, 0.5 * t_end, t_end]
            .iter()
            .map(|&t| flow.max_speed(&grid, t))
            .fold(0.0, f64::max);
        let (dt, n_steps) = if t_end == 0.0 {
            (1.0, 0)
        } else if speed == 0.0 {
            (t_end, 1)
        } else {
            let n = (t_end * speed / (cfl * grid.min_spacing())).ceil().max(1.0) as usize;
            (t_end / n as f64, n)
        };
        let config = Self {
            grid,
            dt,
            n_steps,
            snapshot_times,
            reinit_every: 0,
            interpolation: Interpolation::default(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Snapshot at every step, `t = k·dt` for `k = 0..=n_steps`.
    pub fn every_step(grid: Grid2D, dt: f64, n_steps: usize) -> Self {
        Self {
            grid,
            dt,
            n_steps,
            snapshot_times: (0..=n_steps).map(|k| k as f64 * dt).collect(),
            reinit_every: 0,
            interpolation: Interpolation::default(),
        }
    }

    pub fn end_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        let end = self.end_time();
        for &t in &self.snapshot_times {
            if !(t >= -TIME_TOL && t <= end + TIME_TOL * end.max(1.0)) {
                return Err(Error::Config(format!(
                    "snapshot time {t} lies outside [0, {end}]"
                )));
            }
        }
        Ok(())
    }

    fn snapshot_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
}

/// One captured state of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub zeta: ScalarField2D,
}

/// Bilinear interpolation at fractional index `(fi, fj)`, clamped to the grid.
fn sample_bilinear(values: &[f64], h: usize, w: usize, fi: f64, fj: f64) -> f64 {
    let fi = fi.clamp(0.0, (h - 1) as f64);
    let fj = fj.clamp(0.0, (w - 1) as f64);
    let i0 = (fi.floor() as usize).min(h.saturating_sub(2));
    let j0 = (fj.floor() as usize).min(w.saturating_sub(2));
    let (i1, j1) = ((i0 + 1).min(h - 1), (j0 + 1).min(w - 1));
    let (ti, tj) = (fi - i0 as f64, fj - j0 as f64);
    let top = values[i0 * w + j0] * (1.0 - tj) + values[i0 * w + j1] * tj;
    let bottom = values[i1 * w + j0] * (1.0 - tj) + values[i1 * w + j1] * tj;
    top * (1.0 - ti) + bottom * ti
}

/// Catmull-Rom weights for the samples at offsets −1, 0, 1, 2.
fn catmull_rom(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Bicubic interpolation with edge-replicated neighbors, limited to the
/// range of the four surrounding samples.
fn sample_cubic(values: &[f64], h: usize, w: usize, fi: f64, fj: f64) -> f64 {
    let fi = fi.clamp(0.0, (h - 1) as f64);
    let fj = fj.clamp(0.0, (w - 1) as f64);
    let i0 = (fi.floor() as usize).min(h.saturating_sub(2));
    let j0 = (fj.floor() as usize).min(w.saturating_sub(2));
    let (wi, wj) = (catmull_rom(fi - i0 as f64), catmull_rom(fj - j0 as f64));
    let at = |di: isize, dj: isize| {
        let i = (i0 as isize + di).clamp(0, h as isize - 1) as usize;
        let j = (j0 as isize + dj).clamp(0, w as isize - 1) as usize;
        values[i * w + j]
    };
    let mut sum = 0.0;
    for (a, wa) in wi.iter().enumerate() {
        let row: f64 = wj
            .iter()
            .enumerate()
            .map(|(b, wb)| wb * at(a as isize - 1, b as isize - 1))
            .sum();
        sum += wa * row;
    }
    let corners = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sum.clamp(lo, hi)
}

/// CFL number of one step of size `dt` starting at `t`.
pub fn cfl_number(flow: &FlowSpec, grid: &Grid2D, t: f64, dt: f64) -> f64 {
    let speed = [t, t + 0.5 * dt, t + dt]
        .iter()
        .map(|&s| flow.max_speed(grid, s))
        .fold(0.0, f64::max);
    speed * dt / grid.min_spacing()
}

/// Semi-Lagrangian step from `t` to `t + dt`: midpoint backtrace of each
/// cell center, interpolation at the departure point.
pub fn advect(
    zeta: &ScalarField2D,
    flow: &FlowSpec,
    t: f64,
    dt: f64,
    interpolation: Interpolation,
) -> Result<ScalarField2D> {
    let grid = *zeta.grid();
    let cfl = cfl_number(flow, &grid, t, dt);
    if cfl > 1.0 + 1e-12 {
        return Err(Error::Stability { cfl });
    }
    let (h, w) = (grid.height, grid.width);
    let src = zeta.values();
    let sample = match interpolation {
        Interpolation::Bilinear => sample_bilinear,
        Interpolation::Cubic => sample_cubic,
    };
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..h {
        for j in 0..w {
            let (x, y) = grid.center(i, j);
            let (u1, v1) = flow.velocity_at(x, y, t + dt);
            let (xm, ym) = (x - 0.5 * dt * u1, y - 0.5 * dt * v1);
            let (u2, v2) = flow.velocity_at(xm, ym, t + 0.5 * dt);
            let (xd, yd) = (x - dt * u2, y - dt * v2);
            out.push(sample(src, h, w, yd / grid.dy - 0.5, xd / grid.dx - 0.5));
        }
    }
    ScalarField2D::new(grid, out)
}

/// Runs the level-set transport and captures frames at the snapshot times.
pub fn simulate(init: &InitSpec, flow: &FlowSpec, config: &SimConfig) -> Result<Vec<Frame>> {
    config.validate()?;
    let zeta0 = initial_field(&config.grid, init)?;
    simulate_from(zeta0, flow, config)
}

/// [`simulate`] starting from an explicit initial field.
pub fn simulate_from(
    zeta0: ScalarField2D,
    flow: &FlowSpec,
    config: &SimConfig,
) -> Result<Vec<Frame>> {
    config.validate()?;
    if !zeta0.grid().same_shape(&config.grid) {
        return Err(Error::Shape(
            "initial field does not match the simulation grid".into(),
        ));
    }
    let steps: Vec<usize> = config
        .snapshot_times
        .iter()
        .map(|&t| config.snapshot_step(t))
        .collect();
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&k| steps[k]);

    let mut frames = Vec::with_capacity(order.len());
    let mut pending = order.into_iter().peekable();
    let mut zeta = zeta0;
    for step in 0..=config.n_steps {
        if step > 0 {
            let t = (step - 1) as f64 * config.dt;
            zeta = advect(&zeta, flow, t, config.dt, config.interpolation)?;
            if config.reinit_every > 0 && step % config.reinit_every == 0 {
                zeta = redistance(&zeta);
            }
        }
        while let Some(&k) = pending.peek() {
            if steps[k] != step {
                break;
            }
            frames.push(Frame {
                time: config.snapshot_times[k],
                zeta: zeta.clone(),
            });
            pending.next();
        }
        if pending.peek().is_none() {
            break;
        }
    }
    Ok(frames)
}

/// Solves `((d−a)/dx)² + ((d−b)/dy)² = 1` for the upwind distance `d`.
fn eikonal_update(a: f64, b: f64, dx: f64, dy: f64) -> f64 {
    let one_sided = (a + dx).min(b + dy);
    if !a.is_finite() || !b.is_finite() {
        return one_sided;
    }
    let (wx, wy) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    let sum = wx + wy;
    let mean = (wx * a + wy * b) / sum;
    let disc = mean * mean - (wx * a * a + wy * b * b - 1.0) / sum;
    if disc < 0.0 {
        return one_sided;
    }
    let d = mean + disc.sqrt();
    if d >= a.max(b) {
        d.min(one_sided)
    } else {
        one_sided
    }
}

/// Rebuilds a signed distance function with the same zero level set by
/// fast sweeping from linearly located interface crossings.
pub fn redistance(zeta: &ScalarField2D) -> ScalarField2D {
    let grid = *zeta.grid();
    let (h, w) = (grid.height, grid.width);
    let phi = zeta.values();
    let mut dist = vec![f64::INFINITY; h * w];

    for i in 0..h {
        for j in 0..w {
            let p = phi[i * w + j];
            if p == 0.0 {
                dist[i * w + j] = 0.0;
                continue;
            }
            let crossing =
                |q: f64, spacing: f64| (p * q <= 0.0).then(|| spacing * p.abs() / (p - q).abs());
            let mut ax = f64::INFINITY;
            let mut ay = f64::INFINITY;
            if j > 0 {
                ax = ax.min(crossing(phi[i * w + j - 1], grid.dx).unwrap_or(f64::INFINITY));
            }
            if j + 1 < w {
                ax = ax.min(crossing(phi[i * w + j + 1], grid.dx).unwrap_or(f64::INFINITY));
            }
            if i > 0 {
                ay = ay.min(crossing(phi[(i - 1) * w + j], grid.dy).unwrap_or(f64::INFINITY));
            }
            if i + 1 < h {
                ay = ay.min(crossing(phi[(i + 1) * w + j], grid.dy).unwrap_or(f64::INFINITY));
            }
            dist[i * w + j] = match (ax.is_finite(), ay.is_finite()) {
                (true, true) => 1.0 / (1.0 / (ax * ax) + 1.0 / (ay * ay)).sqrt(),
                (true, false) => ax,
                (false, true) => ay,
                (false, false) => f64::INFINITY,
            };
        }
    }
    if dist.iter().all(|d| !d.is_finite()) {
        // No interface: nothing to measure from.
        return zeta.clone();
    }
    let fixed: Vec<bool> = dist.iter().map(|d| d.is_finite()).collect();

    for _ in 0..2 {
        for (rev_i, rev_j) in [(false, false), (false, true), (true, false), (true, true)] {
            for ii in 0..h {
                let i = if rev_i { h - 1 - ii } else { ii };
                for jj in 0..w {
                    let j = if rev_j { w - 1 - jj } else { jj };
                    if fixed[i * w + j] {
                        continue;
                    }
                    let mut a = f64::INFINITY;
                    if j > 0 {
                        a = a.min(dist[i * w + j - 1]);
                    }
                    if j + 1 < w {
                        a = a.min(dist[i * w + j + 1]);
                    }
                    let mut b = f64::INFINITY;
                    if i > 0 {
                        b = b.min(dist[(i - 1) * w + j]);
                    }
                    if i + 1 < h {
                        b = b.min(dist[(i + 1) * w + j]);
                    }
                    if a.is_finite() || b.is_finite() {
                        let d = eikonal_update(a, b, grid.dx, grid.dy);
                        if d < dist[i * w + j] {
                            dist[i * w + j] = d;
                        }
                    }
                }
            }
        }
    }
    let values = dist
        .iter()
        .zip(phi)
        .map(|(d, p)| if *p < 0.0 { -d } else { *d })
        .collect();
    ScalarField2D::new(grid, values).expect("sweeping reaches every cell of a connected grid")
}
