//! Fan-beam acquisition geometry and the dense image/sinogram containers
//! shared by the projector, FBP and the dose simulator.
//!
//! Conventions:
//! * Image row 0 is the top of the field of view; pixel `(i, j)` has its
//!   centre at `x = (j - (M-1)/2) * pixel_size`, `y = ((N-1)/2 - i) * pixel_size`.
//! * At view angle `beta` the source sits at `source_axis_dist * (cos beta, sin beta)`
//!   and the flat detector is centred on the opposite side of the rotation
//!   axis, with bins running along `(-sin beta, cos beta)`.
//! * View `k` is acquired at `beta_k = k * angle_range / num_angles`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source-to-axis distance used by the default geometry (mm).
pub const DEFAULT_SOURCE_AXIS_DIST: f64 = 500.0;
/// Axis-to-detector distance used by the default geometry (mm).
pub const DEFAULT_AXIS_DETECTOR_DIST: f64 = 500.0;
/// Edge length of the default square field of view (mm). Chosen so that a
/// normalized phantom produces line integrals of a few units.
pub const DEFAULT_FOV_MM: f64 = 12.8;
/// Extra detector coverage beyond the field-of-view diagonal.
pub const DEFAULT_DETECTOR_MARGIN: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanBeamGeometry {
    pub num_angles: usize,
    pub num_bins: usize,
    /// mm
    pub source_axis_dist: f64,
    /// mm
    pub axis_detector_dist: f64,
    /// `[rows, cols]`
    pub image_size: [usize; 2],
    /// mm
    pub pixel_size: f64,
    /// Full width of the flat detector (mm).
    pub detector_width: f64,
    /// Angular span covered by the views (radians), starting at 0.
    pub angle_range: f64,
}

impl FanBeamGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_angles: usize,
        num_bins: usize,
        source_axis_dist: f64,
        axis_detector_dist: f64,
        image_size: [usize; 2],
        pixel_size: f64,
        detector_width: f64,
        angle_range: f64,
    ) -> Result<Self> {
        let g = FanBeamGeometry {
            num_angles,
            num_bins,
            source_axis_dist,
            axis_detector_dist,
            image_size,
            pixel_size,
            detector_width,
            angle_range,
        };
        g.validate()?;
        Ok(g)
    }

    /// Full-rotation geometry whose detector covers the field-of-view
    /// diagonal with a 10% margin and whose bins, demagnified to the
    /// rotation axis, are about one pixel wide.
    pub fn with_default_detector(
        num_angles: usize,
        image_size: [usize; 2],
        pixel_size: f64,
        source_axis_dist: f64,
        axis_detector_dist: f64,
    ) -> Result<Self> {
        let half_diag = half_diagonal(image_size, pixel_size);
        let radius = half_diag * (1.0 + DEFAULT_DETECTOR_MARGIN);
        if !(source_axis_dist > radius) {
            return Err(Error::InvalidGeometry(format!(
                "source at {source_axis_dist} mm is inside the field of view (radius {radius:.3} mm)"
            )));
        }
        let sdd = source_axis_dist + axis_detector_dist;
        let half_width = sdd * radius / (source_axis_dist.powi(2) - radius.powi(2)).sqrt();
        let detector_width = 2.0 * half_width;
        let magnification = sdd / source_axis_dist;
        let num_bins = (detector_width / (pixel_size * magnification)).ceil().max(1.0) as usize;
        Self::new(
            num_angles,
            num_bins,
            source_axis_dist,
            axis_detector_dist,
            image_size,
            pixel_size,
            detector_width,
            2.0 * PI,
        )
    }

    /// Square `size`x`size` image over [`DEFAULT_FOV_MM`] with the default
    /// 500 mm / 500 mm distances.
    pub fn desk(size: usize, num_angles: usize) -> Result<Self> {
        Self::with_default_detector(
            num_angles,
            [size, size],
            DEFAULT_FOV_MM / size as f64,
            DEFAULT_SOURCE_AXIS_DIST,
            DEFAULT_AXIS_DETECTOR_DIST,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        if self.num_angles == 0 || self.num_bins == 0 {
            return bad("num_angles and num_bins must be at least 1".into());
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image_size must be non-empty".into());
        }
        for (name, v) in [
            ("source_axis_dist", self.source_axis_dist),
            ("axis_detector_dist", self.axis_detector_dist),
            ("pixel_size", self.pixel_size),
            ("detector_width", self.detector_width),
            ("angle_range", self.angle_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        let half_diag = half_diagonal(self.image_size, self.pixel_size);
        if self.source_axis_dist <= half_diag {
            return bad(format!(
                "source_axis_dist {} mm does not clear the field of view (half diagonal {half_diag:.3} mm)",
                self.source_axis_dist
            ));
        }
        let coverage = self.coverage_radius();
        if half_diag > coverage {
            return bad(format!(
                "field of view half diagonal {half_diag:.3} mm exceeds detector coverage {coverage:.3} mm"
            ));
        }
        Ok(())
    }

    /// Radius of the disc around the rotation axis seen by every view.
    pub fn coverage_radius(&self) -> f64 {
        let half_w = 0.5 * self.detector_width;
        let sdd = self.source_to_detector();
        self.source_axis_dist * half_w / (sdd * sdd + half_w * half_w).sqrt()
    }

    pub fn source_to_detector(&self) -> f64 {
        self.source_axis_dist + self.axis_detector_dist
    }

    pub fn rows(&self) -> usize {
        self.image_size[0]
    }

    pub fn cols(&self) -> usize {
        self.image_size[1]
    }

    pub fn bin_width(&self) -> f64 {
        self.detector_width / self.num_bins as f64
    }

    /// Detector coordinate of the centre of bin `b` (mm).
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 + 0.5) * self.bin_width() - 0.5 * self.detector_width
    }

    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * self.angle_step()
    }

    pub fn angle_step(&self) -> f64 {
        self.angle_range / self.num_angles as f64
    }

    pub fn sinogram_shape(&self) -> [usize; 2] {
        [self.num_angles, self.num_bins]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: FanBeamGeometry = serde_json::from_str(text).map_err(|e| {
            Error::InvalidGeometry(format!("malformed geometry JSON: {e}"))
        })?;
        g.validate()?;
        Ok(g)
    }
}

fn half_diagonal(image_size: [usize; 2], pixel_size: f64) -> f64 {
    let (n, m) = (image_size[0] as f64, image_size[1] as f64);
    0.5 * pixel_size * (n * n + m * m).sqrt()
}

/// Dense `rows x cols` real image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Image::from_vec", &[rows * cols], &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "image entry {pos} is not finite"
            )));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Image { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_dims(&self, context: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::dims(context, &[rows, cols], &[self.rows, self.cols]));
        }
        Ok(())
    }
}

/// Line integrals indexed by `(view, detector bin)`, row-major by view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    num_angles: usize,
    num_bins: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(num_angles: usize, num_bins: usize) -> Self {
        Sinogram {
            num_angles,
            num_bins,
            data: vec![0.0; num_angles * num_bins],
        }
    }

    pub fn for_geometry(geom: &FanBeamGeometry) -> Self {
        Self::zeros(geom.num_angles, geom.num_bins)
    }

    pub fn from_vec(num_angles: usize, num_bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_angles * num_bins {
            return Err(Error::dims(
                "Sinogram::from_vec",
                &[num_angles * num_bins],
                &[data.len()],
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sinogram entry {pos} is not finite"
            )));
        }
        Ok(Sinogram {
            num_angles,
            num_bins,
            data,
        })
    }

    pub fn num_angles(&self) -> usize {
        self.num_angles
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.num_angles, self.num_bins]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, view: usize) -> &[f64] {
        &self.data[view * self.num_bins..(view + 1) * self.num_bins]
    }

    #[inline]
    pub fn get(&self, view: usize, bin: usize) -> f64 {
        self.data[view * self.num_bins + bin]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub(crate) fn check_geometry(&self, context: &'static str, geom: &FanBeamGeometry) -> Result<()> {
        if self.num_angles != geom.num_angles || self.num_bins != geom.num_bins {
            return Err(Error::dims(
                context,
                &[geom.num_angles, geom.num_bins],
                &[self.num_angles, self.num_bins],
            ));
        }
        Ok(())
    }
}
