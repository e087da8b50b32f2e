use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field_fft::{Grid2D, ScalarField2D};

/// Rejection-sampling budget per blob.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Shape of the initial liquid region. Lengths are physical units.
#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    /// Axis-aligned rectangle with lower-left corner `(x0, y0)`.
    Column {
        x0: f64,
        y0: f64,
        width: f64,
        height: f64,
    },
    /// Union of `count` disks; each disk keeps `margin` cells of clearance
    /// from the domain boundary.
    RandomBlobs {
        count: (usize, usize),
        radius: (f64, f64),
        margin: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitSpec {
    pub fn column(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Self {
            kind: InitKind::Column {
                x0,
                y0,
                width,
                height,
            },
            seed: 0,
        }
    }

    pub fn blobs(count: (usize, usize), radius: (f64, f64), margin: f64, seed: u64) -> Self {
        Self {
            kind: InitKind::RandomBlobs {
                count,
                radius,
                margin,
            },
            seed,
        }
    }
}

/// Builds `ζ₀` for either kind of initial condition.
pub fn initial_field(grid: &Grid2D, spec: &InitSpec) -> Result<ScalarField2D> {
    match spec.kind {
        InitKind::Column { .. } => init_column(grid, spec),
        InitKind::RandomBlobs { .. } => init_blobs(grid, spec),
    }
}

/// Exact signed distance to a rectangle, negative inside.
pub fn rectangle_distance(x: f64, y: f64, center: (f64, f64), half: (f64, f64)) -> f64 {
    let qx = (x - center.0).abs() - half.0;
    let qy = (y - center.1).abs() - half.1;
    let outside = qx.max(0.0).hypot(qy.max(0.0));
    let inside = qx.max(qy).min(0.0);
    outside + inside
}

pub fn init_column(grid: &Grid2D, spec: &InitSpec) -> Result<ScalarField2D> {
    let InitKind::Column {
        x0,
        y0,
        width,
        height,
    } = spec.kind
    else {
        return Err(Error::Geometry("init_column needs a column spec".into()));
    };
    let (lx, ly) = (grid.x_extent(), grid.y_extent());
    let tol = 1e-12 * lx.max(ly);
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Geometry(format!(
            "column must have positive size, got {width}x{height}"
        )));
    }
    if x0 < -tol || y0 < -tol || x0 + width > lx + tol || y0 + height > ly + tol {
        return Err(Error::Geometry(format!(
            "column [{x0}, {}]x[{y0}, {}] leaves the domain [0, {lx}]x[0, {ly}]",
            x0 + width,
            y0 + height
        )));
    }
    let center = (x0 + 0.5 * width, y0 + 0.5 * height);
    let half = (0.5 * width, 0.5 * height);
    ScalarField2D::from_fn(*grid, |x, y| rectangle_distance(x, y, center, half))
}

pub fn init_blobs(grid: &Grid2D, spec: &InitSpec) -> Result<ScalarField2D> {
    let InitKind::RandomBlobs {
        count,
        radius,
        margin,
    } = spec.kind
    else {
        return Err(Error::Generation(
            "init_blobs needs a random-blobs spec".into(),
        ));
    };
    if count.0 == 0 || count.0 > count.1 {
        return Err(Error::Generation(format!(
            "invalid blob count range {count:?}"
        )));
    }
    if !(radius.0 > 0.0 && radius.0 <= radius.1 && radius.1.is_finite()) {
        return Err(Error::Generation(format!(
            "invalid blob radius range {radius:?}"
        )));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Generation(format!("invalid margin {margin}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_blobs = rng.gen_range(count.0..=count.1);
    let (lx, ly) = (grid.x_extent(), grid.y_extent());
    let (mx, my) = (margin * grid.dx, margin * grid.dy);

    let mut blobs = Vec::with_capacity(n_blobs);
    for b in 0..n_blobs {
        let placed = (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| {
            let r = if radius.0 == radius.1 {
                radius.0
            } else {
                rng.gen_range(radius.0..=radius.1)
            };
            let cx = rng.gen_range(0.0..lx);
            let cy = rng.gen_range(0.0..ly);
            let fits = cx - r >= mx && cx + r <= lx - mx && cy - r >= my && cy + r <= ly - my;
            fits.then_some((cx, cy, r))
        });
        match placed {
            Some(blob) => blobs.push(blob),
            None => {
                return Err(Error::Generation(format!(
                    "could not place blob {b} after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )))
            }
        }
    }

    blob_union(grid, &blobs)
}

/// Signed distance to a union of disks `(cx, cy, r)`.
pub fn blob_union(grid: &Grid2D, disks: &[(f64, f64, f64)]) -> Result<ScalarField2D> {
    if disks.is_empty() {
        return Err(Error::Generation(
            "a blob union needs at least one disk".into(),
        ));
    }
    ScalarField2D::from_fn(*grid, |x, y| {
        disks
            .iter()
            .map(|&(cx, cy, r)| (x - cx).hypot(y - cy) - r)
            .fold(f64::INFINITY, f64::min)
    })
}
