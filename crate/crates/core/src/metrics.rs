//! Image quality indices: MSE, PSNR and windowed SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;

pub fn mse(x_hat: &Image, x: &Image) -> Result<f64> {
    x_hat.check_dims("mse", x.rows(), x.cols())?;
    let n = x.len() as f64;
    Ok(x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10 log10(max(x)^2 / MSE)` with `x` the ground truth. Returns
/// `f64::INFINITY` when the images are identical.
pub fn psnr(x_hat: &Image, x: &Image) -> Result<f64> {
    x_hat.check_dims("psnr", x.rows(), x.cols())?;
    let peak = x.max();
    if x.min() == peak {
        return Err(Error::InvalidArgument(
            "psnr: ground truth is constant".into(),
        ));
    }
    let err = mse(x_hat, x)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Side of the square uniform window; odd.
    pub window: usize,
    /// Fixed dynamic range. `None` uses `max - min` of the ground truth.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            window: 7,
            dynamic_range: None,
        }
    }
}

/// Mean SSIM over every window position fully inside the image.
///
/// Window statistics use a uniform window; variances and the covariance use
/// the unbiased `1/(n-1)` normalization.
pub fn ssim(x_hat: &Image, x: &Image, cfg: &SsimConfig) -> Result<f64> {
    x_hat.check_dims("ssim", x.rows(), x.cols())?;
    if !(cfg.k1 > 0.0 && cfg.k2 > 0.0) || cfg.window % 2 == 0 || cfg.window < 3 {
        return Err(Error::InvalidArgument(
            "ssim: k1, k2 must be positive and the window odd and at least 3".into(),
        ));
    }
    let w = cfg.window;
    let (rows, cols) = (x.rows(), x.cols());
    if rows < w || cols < w {
        return Err(Error::InvalidArgument(format!(
            "ssim: image {rows}x{cols} is smaller than the {w}x{w} window"
        )));
    }
    let range = cfg.dynamic_range.unwrap_or_else(|| x.max() - x.min());
    let c1 = (cfg.k1 * range).powi(2);
    let c2 = (cfg.k2 * range).powi(2);

    let a = SummedArea::new(x_hat, |v| v);
    let b = SummedArea::new(x, |v| v);
    let aa = SummedArea::new(x_hat, |v| v * v);
    let bb = SummedArea::new(x, |v| v * v);
    let ab = SummedArea::from_pair(x_hat, x);

    let np = (w * w) as f64;
    let cov_norm = np / (np - 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=rows - w {
        for j in 0..=cols - w {
            let mu_a = a.window(i, j, w) / np;
            let mu_b = b.window(i, j, w) / np;
            let var_a = cov_norm * (aa.window(i, j, w) / np - mu_a * mu_a);
            let var_b = cov_norm * (bb.window(i, j, w) / np - mu_b * mu_b);
            let cov = cov_norm * (ab.window(i, j, w) / np - mu_a * mu_b);
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Inclusive prefix sums with a zero border row/column.
struct SummedArea {
    cols: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(img: &Image, f: impl Fn(f64) -> f64) -> Self {
        Self::build(img.rows(), img.cols(), |k| f(img.data()[k]))
    }

    fn from_pair(a: &Image, b: &Image) -> Self {
        Self::build(a.rows(), a.cols(), |k| a.data()[k] * b.data()[k])
    }

    fn build(rows: usize, cols: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = cols + 1;
        let mut table = vec![0.0; (rows + 1) * stride];
        for i in 0..rows {
            let mut row_sum = 0.0;
            for j in 0..cols {
                row_sum += value(i * cols + j);
                table[(i + 1) * stride + j + 1] = table[i * stride + j + 1] + row_sum;
            }
        }
        SummedArea { cols: stride, table }
    }

    #[inline]
    fn window(&self, i: usize, j: usize, w: usize) -> f64 {
        let s = self.cols;
        self.table[(i + w) * s + j + w] - self.table[i * s + j + w] - self.table[(i + w) * s + j]
            + self.table[i * s + j]
    }
}
