use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::field_fft::Grid2D;

/// Prescribed analytic velocity field. Coordinates and speeds are physical
/// units (length, seconds).
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSpec {
    /// Solid-body rotation with angular velocity `omega` (1/s).
    RigidRotation { omega: f64, center: (f64, f64) },
    /// Time-reversing deformation vortex on a domain of size `extent`,
    /// modulated by `cos(πt/period)`.
    SingleVortex {
        period: f64,
        amplitude: f64,
        extent: (f64, f64),
    },
    /// Hyperbolic stagnation flow: stretches along `x`, compresses along `y`.
    StagnationCollapse { gamma: f64, center: (f64, f64) },
    /// Uniform downward translation at `speed`.
    UniformFall { speed: f64 },
    /// Pointwise sum of the component flows.
    Superposition(Vec<FlowSpec>),
}

impl FlowSpec {
    /// Velocity `(u, v)` at `(x, y)` and time `t`.
    pub fn velocity_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        match self {
            FlowSpec::RigidRotation { omega, center } => {
                (-omega * (y - center.1), omega * (x - center.0))
            }
            FlowSpec::SingleVortex {
                period,
                amplitude,
                extent,
            } => {
                let (lx, ly) = *extent;
                let (xs, ys) = (PI * x / lx, PI * y / ly);
                let m = amplitude * (PI * t / period).cos();
                (
                    -m * lx * xs.sin().powi(2) * (2.0 * ys).sin(),
                    m * ly * ys.sin().powi(2) * (2.0 * xs).sin(),
                )
            }
            FlowSpec::StagnationCollapse { gamma, center } => {
                (gamma * (x - center.0), -gamma * (y - center.1))
            }
            FlowSpec::UniformFall { speed } => (0.0, -speed),
            FlowSpec::Superposition(parts) => parts.iter().fold((0.0, 0.0), |(u, v), p| {
                let (pu, pv) = p.velocity_at(x, y, t);
                (u + pu, v + pv)
            }),
        }
    }

    /// Largest speed over the cell centers of `grid` at time `t`.
    pub fn max_speed(&self, grid: &Grid2D, t: f64) -> f64 {
        let mut max = 0.0f64;
        for i in 0..grid.height {
            for j in 0..grid.width {
                let (x, y) = grid.center(i, j);
                let (u, v) = self.velocity_at(x, y, t);
                max = max.max(u.hypot(v));
            }
        }
        max
    }

    /// Parses `kind:key=value,...` terms joined by `+`, e.g.
    /// `vortex:period=2,amp=0.5+fall:v=0.2`. Missing keys take defaults
    /// relative to `grid`'s physical extent.
    pub fn parse(text: &str, grid: &Grid2D) -> Result<Self> {
        let terms = text
            .split('+')
            .map(|term| Self::parse_term(term.trim(), grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(match terms.len() {
            1 => terms.into_iter().next().unwrap(),
            _ => FlowSpec::Superposition(terms),
        })
    }

    fn parse_term(term: &str, grid: &Grid2D) -> Result<Self> {
        let (kind, args) = term.split_once(':').unwrap_or((term, ""));
        let mut pairs = Vec::new();
        for kv in args.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("flow parameter `{kv}` is not key=value")))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("flow parameter `{kv}` is not a number")))?;
            if !value.is_finite() {
                return Err(Error::Config(format!(
                    "flow parameter `{kv}` is not finite"
                )));
            }
            pairs.push((k.trim().to_string(), value));
        }
        let allowed: &[&str] = match kind {
            "rotation" => &["omega", "cx", "cy"],
            "vortex" => &["period", "amp"],
            "stagnation" => &["gamma", "cx", "cy"],
            "fall" => &["v"],
            other => {
                return Err(Error::Config(format!(
                    "unknown flow kind `{other}` (expected rotation, vortex, stagnation or fall)"
                )))
            }
        };
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "flow `{kind}` has no parameter `{k}` (allowed: {})",
                allowed.join(", ")
            )));
        }
        let get = |key: &str, default: f64| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map_or(default, |(_, v)| *v)
        };
        let (lx, ly) = (grid.x_extent(), grid.y_extent());
        Ok(match kind {
            "rotation" => FlowSpec::RigidRotation {
                omega: get("omega", 2.0 * PI),
                center: (get("cx", 0.5 * lx), get("cy", 0.5 * ly)),
            },
            "vortex" => {
                let period = get("period", 1.0);
                if period <= 0.0 {
                    return Err(Error::Config("vortex period must be > 0".into()));
                }
                FlowSpec::SingleVortex {
                    period,
                    amplitude: get("amp", 1.0),
                    extent: (lx, ly),
                }
            }
            "stagnation" => FlowSpec::StagnationCollapse {
                gamma: get("gamma", 1.0),
                center: (get("cx", 0.5 * lx), get("cy", 0.0)),
            },
            _ => FlowSpec::UniformFall {
                speed: get("v", 0.1),
            },
        })
    }
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowSpec::RigidRotation { omega, center } => {
                write!(f, "rotation:omega={omega},cx={},cy={}", center.0, center.1)
            }
            FlowSpec::SingleVortex {
                period, amplitude, ..
            } => write!(f, "vortex:period={period},amp={amplitude}"),
            FlowSpec::StagnationCollapse { gamma, center } => {
                write!(
                    f,
                    "stagnation:gamma={gamma},cx={},cy={}",
                    center.0, center.1
                )
            }
            FlowSpec::UniformFall { speed } => write!(f, "fall:v={speed}"),
            FlowSpec::Superposition(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::with_spacing(n, n, 1.0 / n as f64, 1.0 / n as f64).unwrap()
    }

    /// Central-difference divergence at every interior cell center.
    fn max_divergence(flow: &FlowSpec, grid: &Grid2D, t: f64) -> f64 {
        // Fourth-order central differences.
        let h = 5e-4;
        let d = |f: &dyn Fn(f64) -> f64, z: f64| {
            (8.0 * (f(z + h) - f(z - h)) - (f(z + 2.0 * h) - f(z - 2.0 * h))) / (12.0 * h)
        };
        let mut max = 0.0f64;
        for i in 1..grid.height - 1 {
            for j in 1..grid.width - 1 {
                let (x, y) = grid.center(i, j);
                let du = d(&|xx| flow.velocity_at(xx, y, t).0, x);
                let dv = d(&|yy| flow.velocity_at(x, yy, t).1, y);
                max = max.max((du + dv).abs());
            }
        }
        max
    }

    #[test]
    fn rotation_center_is_fixed() {
        let flow = FlowSpec::RigidRotation {
            omega: 3.0,
            center: (0.4, 0.6),
        };
        assert_eq!(flow.velocity_at(0.4, 0.6, 1.0), (0.0, 0.0));
    }

    #[test]
    fn prescribed_flows_are_divergence_free() {
        let grid = unit_grid(32);
        let flows = [
            FlowSpec::StagnationCollapse {
                gamma: 1.7,
                center: (0.5, 0.1),
            },
            FlowSpec::RigidRotation {
                omega: 2.0,
                center: (0.5, 0.5),
            },
            FlowSpec::parse("vortex:period=2,amp=0.7+fall:v=0.3", &grid).unwrap(),
        ];
        for flow in &flows {
            assert!(max_divergence(flow, &grid, 0.3) <= 1e-10, "{flow}");
        }
        let wide = Grid2D::with_spacing(16, 32, 0.1, 0.05).unwrap();
        let vortex = FlowSpec::parse("vortex", &wide).unwrap();
        assert!(max_divergence(&vortex, &wide, 0.1) <= 1e-10);
    }

    #[test]
    fn vortex_vanishes_at_half_period() {
        let grid = unit_grid(16);
        let flow = FlowSpec::parse("vortex:period=2,amp=1.5", &grid).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let (x, y) = grid.center(i, j);
                let (u, v) = flow.velocity_at(x, y, 1.0);
                assert!(u.abs() < 1e-15 && v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parse_display_round_trip() {
        let grid = unit_grid(16);
        for text in [
            "rotation:omega=1.5,cx=0.25,cy=0.5",
            "stagnation:gamma=0.8,cx=0.5,cy=0.1",
            "vortex:period=2,amp=0.5+fall:v=0.2",
        ] {
            let flow = FlowSpec::parse(text, &grid).unwrap();
            assert_eq!(flow.to_string(), text);
            assert_eq!(FlowSpec::parse(&flow.to_string(), &grid).unwrap(), flow);
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        let grid = unit_grid(16);
        for bad in [
            "swirl",
            "fall:v",
            "fall:v=abc",
            "fall:speed=1",
            "vortex:period=0",
        ] {
            assert!(FlowSpec::parse(bad, &grid).is_err(), "{bad}");
        }
    }
}
