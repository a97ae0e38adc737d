//! TV-regularized least squares, `min_x 1/2 ||Ax - y||^2 + lambda ||grad x||_1`,
//! with anisotropic TV and a first-order primal-dual solver.
//!
//! The data term is handled by an explicit gradient step in the primal
//! update and the TV term through its dual variable (the Condat-Vu form of
//! the Chambolle-Pock iteration):
//!
//! ```text
//! x+ = x - tau (A^T (A x - y) + D^T q)
//! q+ = clip_lambda(q + sigma D (2 x+ - x))
//! ```
//!
//! which converges for `1/tau - sigma ||D||^2 >= ||A||^2 / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Image, Sinogram};
use crate::projector::{backproject, project};

/// Upper bound of `||D||^2` for 2-D forward differences.
const GRAD_NORM_SQ: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    pub lambda: f64,
    pub iterations: usize,
    /// Dual step as a fraction of its largest admissible value when the
    /// primal step is `1/||A||^2`.
    pub step_ratio: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            lambda: 2.15e-7,
            iterations: 200,
            step_ratio: 1.0,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tv lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.step_ratio > 0.0 && self.step_ratio.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tv step_ratio must be positive, got {}",
                self.step_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TvResult {
    pub image: Image,
    /// Objective at the start of every iteration, then at the returned iterate.
    pub objective: Vec<f64>,
}

pub fn tv_reconstruct(
    sino: &Sinogram,
    geom: &FanBeamGeometry,
    cfg: &TvConfig,
    init: &Image,
) -> Result<Image> {
    Ok(tv_reconstruct_with_history(sino, geom, cfg, init)?.image)
}

pub fn tv_reconstruct_with_history(
    sino: &Sinogram,
    geom: &FanBeamGeometry,
    cfg: &TvConfig,
    init: &Image,
) -> Result<TvResult> {
    cfg.validate()?;
    sino.check_geometry("tv_reconstruct", geom)?;
    init.check_dims("tv_reconstruct", geom.rows(), geom.cols())?;
    if cfg.iterations == 0 {
        let objective = vec![objective(sino, geom, cfg.lambda, init)?];
        return Ok(TvResult {
            image: init.clone(),
            objective,
        });
    }

    let lipschitz = operator_norm_sq(geom)?;
    let sigma = cfg.step_ratio * lipschitz / (2.0 * GRAD_NORM_SQ);
    let tau = 0.99 / (0.5 * lipschitz + sigma * GRAD_NORM_SQ);

    let (rows, cols) = (geom.rows(), geom.cols());
    let mut x = init.clone();
    let mut qx = Image::zeros(rows, cols);
    let mut qy = Image::zeros(rows, cols);
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let mut residual = project(&x, geom)?;
        for (r, y) in residual.data_mut().iter_mut().zip(sino.data()) {
            *r -= y;
        }
        history.push(0.5 * residual.dot(&residual) + cfg.lambda * anisotropic_tv(&x));
        let data_grad = backproject(&residual, geom)?;
        let div = grad_adjoint(&qx, &qy);
        let mut x_new = x.clone();
        for ((v, g), d) in x_new.data_mut().iter_mut().zip(data_grad.data()).zip(div.data()) {
            *v -= tau * (g + d);
        }
        let extrapolated = Image::from_fn(rows, cols, |i, j| 2.0 * x_new.get(i, j) - x.get(i, j));
        let (gx, gy) = grad(&extrapolated);
        for (q, g) in qx.data_mut().iter_mut().zip(gx.data()) {
            *q = (*q + sigma * g).clamp(-cfg.lambda, cfg.lambda);
        }
        for (q, g) in qy.data_mut().iter_mut().zip(gy.data()) {
            *q = (*q + sigma * g).clamp(-cfg.lambda, cfg.lambda);
        }
        x = x_new;
    }
    history.push(objective(sino, geom, cfg.lambda, &x)?);
    Ok(TvResult {
        image: x,
        objective: history,
    })
}

pub fn objective(sino: &Sinogram, geom: &FanBeamGeometry, lambda: f64, x: &Image) -> Result<f64> {
    let ax = project(x, geom)?;
    let misfit: f64 = ax
        .data()
        .iter()
        .zip(sino.data())
        .map(|(a, y)| (a - y) * (a - y))
        .sum();
    Ok(0.5 * misfit + lambda * anisotropic_tv(x))
}

/// Unnormalized anisotropic TV: sum of absolute horizontal and vertical
/// forward differences.
pub fn anisotropic_tv(x: &Image) -> f64 {
    let (rows, cols) = (x.rows(), x.cols());
    let mut total = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            if j + 1 < cols {
                total += (x.get(i, j + 1) - x.get(i, j)).abs();
            }
            if i + 1 < rows {
                total += (x.get(i + 1, j) - x.get(i, j)).abs();
            }
        }
    }
    total
}

/// Forward differences `(horizontal, vertical)`; zero in the last column/row.
pub fn grad(x: &Image) -> (Image, Image) {
    let (rows, cols) = (x.rows(), x.cols());
    let gx = Image::from_fn(rows, cols, |i, j| {
        if j + 1 < cols { x.get(i, j + 1) - x.get(i, j) } else { 0.0 }
    });
    let gy = Image::from_fn(rows, cols, |i, j| {
        if i + 1 < rows { x.get(i + 1, j) - x.get(i, j) } else { 0.0 }
    });
    (gx, gy)
}

/// Transpose of [`grad`].
pub fn grad_adjoint(gx: &Image, gy: &Image) -> Image {
    let (rows, cols) = (gx.rows(), gx.cols());
    Image::from_fn(rows, cols, |i, j| {
        let mut v = 0.0;
        if j + 1 < cols {
            v -= gx.get(i, j);
        }
        if j > 0 {
            v += gx.get(i, j - 1);
        }
        if i + 1 < rows {
            v -= gy.get(i, j);
        }
        if i > 0 {
            v += gy.get(i - 1, j);
        }
        v
    })
}

/// Power-iteration estimate of `||A^T A||`, padded by 5%.
pub fn operator_norm_sq(geom: &FanBeamGeometry) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7f4a_7c15);
    let mut v = Image::from_fn(geom.rows(), geom.cols(), |_, _| rng.random_range(0.0..1.0));
    let mut estimate = 0.0;
    for _ in 0..30 {
        let norm = v.norm();
        for x in v.data_mut() {
            *x /= norm;
        }
        let w = backproject(&project(&v, geom)?, geom)?;
        estimate = w.dot(&v);
        v = w;
    }
    Ok(1.05 * estimate)
}
