//! Analytic ellipse phantoms.

use serde::{Deserialize, Serialize};

use crate::dose::normalize;
use crate::error::{Error, Result};
use crate::geometry::Image;

/// One ellipse in the unit square `[-1, 1]^2` (x to the right, y up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the ellipse's own x and y directions.
    pub semi_axes: [f64; 2],
    /// Counter-clockwise rotation (radians).
    pub rotation: f64,
    /// Added to every pixel whose centre lies inside.
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsePhantomSpec {
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantomSpec {
    /// Shepp-Logan head with the higher-contrast intensities of Toft's
    /// modified version.
    pub fn shepp_logan() -> Self {
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            // intensity, a, b, x0, y0, rotation (degrees)
            (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
            (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
            (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
            (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
            (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
            (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
            (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
            (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
            (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
            (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
        ];
        EllipsePhantomSpec {
            ellipses: TABLE
                .iter()
                .map(|&(intensity, a, b, x0, y0, deg)| Ellipse {
                    center: [x0, y0],
                    semi_axes: [a, b],
                    rotation: deg.to_radians(),
                    intensity,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.ellipses.iter().enumerate() {
            let finite = e.center.iter().chain(&e.semi_axes).all(|v| v.is_finite())
                && e.rotation.is_finite()
                && e.intensity.is_finite();
            if !finite || e.semi_axes.iter().any(|&a| a <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ellipse {k} has non-finite parameters or a non-positive semi-axis"
                )));
            }
        }
        Ok(())
    }

    /// Samples the phantom at pixel centres of an `n x n` grid spanning the
    /// unit square.
    pub fn rasterize(&self, n: usize) -> Result<Image> {
        self.validate()?;
        let half = 0.5 * n as f64;
        let c = 0.5 * (n as f64 - 1.0);
        Ok(Image::from_fn(n, n, |i, j| {
            let x = (j as f64 - c) / half;
            let y = (c - i as f64) / half;
            self.ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum()
        }))
    }
}

/// Normalized `n x n` Shepp-Logan phantom.
pub fn shepp_logan(n: usize) -> Result<Image> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!(
            "shepp_logan needs n >= 16, got {n}"
        )));
    }
    Ok(normalize(&EllipsePhantomSpec::shepp_logan().rasterize(n)?).image)
}
