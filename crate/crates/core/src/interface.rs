//! Volume fraction ↔ reconstructed distance function, binarization and
//! interface geometry.
//!
//! Sign convention: `ζ < 0` in liquid (`α > 0.5`), `ζ > 0` in gas.

use crate::error::{Error, Result};
use crate::field_fft::{Grid2D, ScalarField2D};

/// Slack allowed on `α ∈ [0, 1]` before a value is rejected.
pub const FRACTION_SLACK: f64 = 1e-9;

/// Gradient-norm floor used when normalizing `∇ζ`.
pub const GRADIENT_FLOOR: f64 = 1e-12;

/// Smoothing parameters of the `α ↔ ζ` mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdfParams {
    /// Smoothing length ε, in grid-spacing units.
    pub epsilon: f64,
    /// Clamp margin δ keeping `atanh` finite at `α ∈ {0, 1}`.
    pub delta: f64,
}

impl Default for RdfParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-6,
        }
    }
}

impl RdfParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let params = Self { epsilon, delta };
        params.validate()?;
        Ok(params)
    }

    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, Self::default().delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 0.5), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Largest `|ζ|` the clamped mapping can produce.
    pub fn saturation(&self) -> f64 {
        self.epsilon * (1.0 - 2.0 * self.delta).atanh()
    }

    fn zeta(&self, alpha: f64) -> f64 {
        let a = alpha.clamp(self.delta, 1.0 - self.delta);
        self.epsilon * (1.0 - 2.0 * a).atanh()
    }

    fn alpha(&self, zeta: f64) -> f64 {
        0.5 * (1.0 - (zeta / self.epsilon).tanh())
    }
}

/// Liquid and gas values of a material property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseProps {
    pub xi_liquid: f64,
    pub xi_gas: f64,
}

fn check_fractions(alpha: &ScalarField2D) -> Result<()> {
    for (index, &value) in alpha.values().iter().enumerate() {
        if !(-FRACTION_SLACK..=1.0 + FRACTION_SLACK).contains(&value) {
            return Err(Error::InvalidFraction { index, value });
        }
    }
    Ok(())
}

/// `ζ = ε·atanh(1 − 2·clamp(α, δ, 1−δ))`.
pub fn alpha_to_rdf(alpha: &ScalarField2D, params: &RdfParams) -> Result<ScalarField2D> {
    params.validate()?;
    check_fractions(alpha)?;
    alpha.map(|a| params.zeta(a))
}

/// `α = (1 − tanh(ζ/ε)) / 2`.
pub fn rdf_to_alpha(zeta: &ScalarField2D, params: &RdfParams) -> Result<ScalarField2D> {
    params.validate()?;
    zeta.map(|z| params.alpha(z))
}

/// Liquid indicator: 1 where `ζ < 0`, 0 elsewhere.
pub fn binarize(zeta: &ScalarField2D) -> ScalarField2D {
    zeta.map(|z| if z < 0.0 { 1.0 } else { 0.0 })
        .expect("indicator values are finite")
}

/// Pointwise `α·ξ₁ + (1−α)·ξ₂`.
pub fn mixture_property(alpha: &ScalarField2D, props: &PhaseProps) -> Result<ScalarField2D> {
    if !(props.xi_liquid.is_finite() && props.xi_gas.is_finite()) {
        return Err(Error::Config("phase properties must be finite".into()));
    }
    check_fractions(alpha)?;
    alpha.map(|a| a * props.xi_liquid + (1.0 - a) * props.xi_gas)
}

/// Central differences in the interior, one-sided at the boundary.
fn gradient(values: &[f64], grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (grid.height, grid.width);
    let at = |i: usize, j: usize| values[i * w + j];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            gx[i * w + j] = if w < 2 {
                0.0
            } else if j == 0 {
                (at(i, 1) - at(i, 0)) / grid.dx
            } else if j == w - 1 {
                (at(i, j) - at(i, j - 1)) / grid.dx
            } else {
                (at(i, j + 1) - at(i, j - 1)) / (2.0 * grid.dx)
            };
            gy[i * w + j] = if h < 2 {
                0.0
            } else if i == 0 {
                (at(1, j) - at(0, j)) / grid.dy
            } else if i == h - 1 {
                (at(i, j) - at(i - 1, j)) / grid.dy
            } else {
                (at(i + 1, j) - at(i - 1, j)) / (2.0 * grid.dy)
            };
        }
    }
    (gx, gy)
}

/// Unit normal pointing into the liquid, `−∇ζ/|∇ζ|`.
fn liquid_normal(zeta: &ScalarField2D) -> (Vec<f64>, Vec<f64>) {
    let (mut nx, mut ny) = gradient(zeta.values(), zeta.grid());
    for (x, y) in nx.iter_mut().zip(ny.iter_mut()) {
        let norm = x.hypot(*y).max(GRADIENT_FLOOR);
        *x = -*x / norm;
        *y = -*y / norm;
    }
    (nx, ny)
}

/// Interface curvature `q = −∇·(∇ψ/|∇ψ|)` of the liquid-positive level set
/// `ψ = −ζ`; a liquid disk of radius `R` has `q = 1/R`.
pub fn curvature(zeta: &ScalarField2D) -> ScalarField2D {
    let grid = *zeta.grid();
    let (nx, ny) = liquid_normal(zeta);
    let (dnx_dx, _) = gradient(&nx, &grid);
    let (_, dny_dy) = gradient(&ny, &grid);
    let values = dnx_dx.iter().zip(&dny_dy).map(|(a, b)| -(a + b)).collect();
    ScalarField2D::new(grid, values).expect("curvature of a finite field is finite")
}

/// Continuum surface force `f = σ·q·n` with `n` the liquid-pointing normal.
/// Returns the `(x, y)` components.
pub fn surface_tension_force(
    zeta: &ScalarField2D,
    sigma: f64,
) -> Result<(ScalarField2D, ScalarField2D)> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!(
            "surface tension must be >= 0, got {sigma}"
        )));
    }
    let grid = *zeta.grid();
    let q = curvature(zeta);
    let (nx, ny) = liquid_normal(zeta);
    let fx = q
        .values()
        .iter()
        .zip(&nx)
        .map(|(q, n)| sigma * q * n)
        .collect();
    let fy = q
        .values()
        .iter()
        .zip(&ny)
        .map(|(q, n)| sigma * q * n)
        .collect();
    Ok((ScalarField2D::new(grid, fx)?, ScalarField2D::new(grid, fy)?))
}

/// Cells where geometric diagnostics are reliable: `|ζ| ≤ half_width` and
/// `|∇ζ| > 0.5`.
pub fn interface_band(zeta: &ScalarField2D, half_width: f64) -> Vec<bool> {
    let (gx, gy) = gradient(zeta.values(), zeta.grid());
    zeta.values()
        .iter()
        .zip(gx.iter().zip(&gy))
        .map(|(z, (x, y))| z.abs() <= half_width && x.hypot(*y) > 0.5)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid2D {
        Grid2D::new(n, n).unwrap()
    }

    fn circle(n: usize, r: f64) -> ScalarField2D {
        let c = n as f64 / 2.0;
        ScalarField2D::from_fn(grid(n), |x, y| (x - c).hypot(y - c) - r).unwrap()
    }

    #[test]
    fn half_fraction_maps_to_zero() {
        let alpha = ScalarField2D::constant(grid(4), 0.5);
        let zeta = alpha_to_rdf(&alpha, &RdfParams::default()).unwrap();
        assert!(zeta.values().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn closed_form_inverse_value() {
        let a = (1.0 - 2f64.tanh()) / 2.0;
        let alpha = ScalarField2D::constant(grid(4), a);
        let zeta = alpha_to_rdf(&alpha, &RdfParams::default()).unwrap();
        assert!((zeta.get(0, 0) - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn full_liquid_is_clamped_and_finite() {
        let alpha = ScalarField2D::constant(grid(4), 1.0);
        let params = RdfParams::new(1.5, 1e-6).unwrap();
        let zeta = alpha_to_rdf(&alpha, &params).unwrap();
        let expected = 1.5 * (-1.0f64 + 2e-6).atanh();
        assert!((zeta.get(1, 1) - expected).abs() <= 1e-12);
        // atanh(1 − x) = ½·ln((2 − x)/x) with x = 2δ.
        let closed_form = -0.5 * ((2.0 - 2e-6) / 2e-6f64).ln();
        assert!((expected / 1.5 - closed_form).abs() < 1e-9);
        assert!((expected / 1.5 + 6.9078).abs() < 1e-4);
        assert!((params.saturation() + expected).abs() <= 1e-9);
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let mut values = vec![0.2; 16];
        values[5] = 1.0 + 1e-6;
        let alpha = ScalarField2D::new(grid(4), values).unwrap();
        let err = alpha_to_rdf(&alpha, &RdfParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidFraction { index: 5, .. }));

        let slack = ScalarField2D::constant(grid(4), 1.0 + 1e-10);
        assert!(alpha_to_rdf(&slack, &RdfParams::default()).is_ok());
    }

    #[test]
    fn rdf_to_alpha_limits() {
        let params = RdfParams::default();
        let zero = rdf_to_alpha(&ScalarField2D::zeros(grid(4)), &params).unwrap();
        assert!(zero.values().iter().all(|&a| a == 0.5));
        let far = rdf_to_alpha(&ScalarField2D::constant(grid(4), 50.0), &params).unwrap();
        assert!(far.values().iter().all(|&a| a < 1e-20));
    }

    #[test]
    fn rdf_round_trip_in_unclamped_range() {
        let params = RdfParams::with_epsilon(0.7).unwrap();
        let zeta = ScalarField2D::from_fn(grid(16), |x, y| (x - y) * 0.3).unwrap();
        let back = alpha_to_rdf(&rdf_to_alpha(&zeta, &params).unwrap(), &params).unwrap();
        for (a, b) in back.values().iter().zip(zeta.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn binarize_uniform_fields() {
        assert!(binarize(&ScalarField2D::constant(grid(4), -3.0))
            .values()
            .iter()
            .all(|&v| v == 1.0));
        assert!(binarize(&ScalarField2D::constant(grid(4), 3.0))
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn binarized_disk_area() {
        for r in [10.0, 17.5, 25.0] {
            let area: f64 = binarize(&circle(64, r)).values().iter().sum();
            let exact = std::f64::consts::PI * r * r;
            assert!(
                (area - exact).abs() / exact <= 0.02,
                "r={r}: {area} vs {exact}"
            );
        }
    }

    #[test]
    fn planar_interface_is_flat() {
        let zeta = ScalarField2D::from_fn(grid(32), |_, y| y - 13.3).unwrap();
        let q = curvature(&zeta);
        assert!(q.values().iter().all(|v| v.abs() <= 1e-8));
        let (fx, fy) = surface_tension_force(&zeta, 2.0).unwrap();
        assert!(fx
            .values()
            .iter()
            .chain(fy.values())
            .all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn circle_curvature_is_inverse_radius_and_positive() {
        let zeta = circle(96, 20.0);
        let q = curvature(&zeta);
        let band = interface_band(&zeta, 0.5);
        assert!(band.iter().filter(|&&b| b).count() > 50);
        for (qv, _) in q.values().iter().zip(&band).filter(|(_, &b)| b) {
            assert!(*qv > 0.0);
            assert!((qv - 0.05).abs() / 0.05 <= 0.05, "q = {qv}");
        }
    }

    #[test]
    fn surface_tension_points_radially_inward() {
        let zeta = circle(96, 20.0);
        let (fx, fy) = surface_tension_force(&zeta, 1.0).unwrap();
        let band = interface_band(&zeta, 0.5);
        let g = *zeta.grid();
        for i in 0..96 {
            for j in 0..96 {
                if !band[i * 96 + j] {
                    continue;
                }
                let (x, y) = g.center(i, j);
                let (rx, ry) = (x - 48.0, y - 48.0);
                let (ax, ay) = (fx.get(i, j), fy.get(i, j));
                let mag = ax.hypot(ay);
                assert!((mag - 0.05).abs() / 0.05 <= 0.05);
                // Inward: force anti-parallel to the radius vector.
                let cos = -(ax * rx + ay * ry) / (mag * rx.hypot(ry));
                assert!(cos >= 5f64.to_radians().cos(), "angle off at ({i},{j})");
            }
        }
        let (zx, zy) = surface_tension_force(&zeta, 0.0).unwrap();
        assert!(zx.values().iter().chain(zy.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn mixture_rule() {
        let props = PhaseProps {
            xi_liquid: 1000.0,
            xi_gas: 1.0,
        };
        let at = |a: f64| {
            mixture_property(&ScalarField2D::constant(grid(4), a), &props)
                .unwrap()
                .get(0, 0)
        };
        assert_eq!(at(1.0), 1000.0);
        assert_eq!(at(0.0), 1.0);
        assert!((at(0.25) - 250.75).abs() < 1e-12);
    }
}
