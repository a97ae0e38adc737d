//! Per-image unsupervised reconstruction: a convolutional network maps the
//! FBP image to a refined image and is trained against the measured
//! sinogram with an l1 data term plus TV.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::{fbp_reconstruct, FilterSpec};
use crate::geometry::{FanBeamGeometry, Image, Sinogram};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::nn::{AdamW, AdamWConfig, Network, NetworkSpec, Sgd, Tensor4};
use crate::projector::{backproject, project};

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1/NM) * (sum |x[i][j+1] - x[i][j]| + sum |x[i+1][j] - x[i][j]|)`.
pub fn tv_value(img: &Image) -> Result<f64> {
    let [rows, cols] = img.dims();
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "tv_value needs at least 2x2 pixels, got {rows}x{cols}"
        )));
    }
    let x = img.data();
    let mut total = 0.0;
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        total += row.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>();
        if i + 1 < rows {
            let next = &x[(i + 1) * cols..(i + 2) * cols];
            total += row.iter().zip(next).map(|(a, b)| (b - a).abs()).sum::<f64>();
        }
    }
    Ok(total / img.len() as f64)
}

/// Subgradient of [`tv_value`] with `sign(0) = 0`, added into `grad`.
fn add_tv_subgradient(img: &Image, grad: &mut Image) {
    let (rows, cols) = (img.rows(), img.cols());
    let scale = 1.0 / img.len() as f64;
    let x = img.data();
    let g = grad.data_mut();
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            if j + 1 < cols {
                let s = scale * sign(x[k + 1] - x[k]);
                g[k + 1] += s;
                g[k] -= s;
            }
            if i + 1 < rows {
                let s = scale * sign(x[k + cols] - x[k]);
                g[k + cols] += s;
                g[k] -= s;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossValue {
    /// `data_term + tv`.
    pub value: f64,
    /// `(1/NM) ||y - A x||_1`.
    pub data_term: f64,
    pub tv: f64,
    /// Subgradient with respect to the image.
    pub grad: Image,
}

/// Training loss `(1/NM) ||y - A x||_1 + tv_value(x)` and its subgradient.
/// Both terms enter with unit weight.
pub fn loss(y: &Sinogram, x_hat: &Image, geom: &FanBeamGeometry) -> Result<LossValue> {
    y.check_geometry("loss", geom)?;
    x_hat.check_dims("loss", geom.rows(), geom.cols())?;
    let scale = 1.0 / x_hat.len() as f64;
    let mut residual = project(x_hat, geom)?;
    let mut misfit = 0.0;
    for (r, yv) in residual.data_mut().iter_mut().zip(y.data()) {
        let d = *r - yv;
        misfit += d.abs();
        *r = sign(d);
    }
    let mut grad = backproject(&residual, geom)?;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    add_tv_subgradient(x_hat, &mut grad);
    let data_term = misfit * scale;
    let tv = tv_value(x_hat)?;
    Ok(LossValue {
        value: data_term + tv,
        data_term,
        tv,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMode {
    /// Iterate with the highest PSNR against a supplied ground truth.
    BestPsnr,
    /// Iterate with the lowest training loss.
    BestLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Network initialization seed.
    pub seed: u64,
    pub checkpoint_mode: CheckpointMode,
    /// Record every `curve_stride`-th iteration.
    pub curve_stride: usize,
    pub optimizer: OptimizerKind,
    /// AdamW decoupled weight decay; ignored by SGD.
    pub weight_decay: f64,
    pub network: NetworkSpec,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            iterations: 2000,
            lr: 1e-3,
            seed: 0,
            checkpoint_mode: CheckpointMode::BestLoss,
            curve_stride: 1,
            optimizer: OptimizerKind::Adamw,
            weight_decay: AdamWConfig::default().weight_decay,
            network: NetworkSpec::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.curve_stride == 0 {
            return Err(Error::InvalidArgument("curve_stride must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be finite and nonnegative, got {}",
                self.weight_decay
            )));
        }
        self.network.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ReconReport {
    pub final_image: Image,
    /// Iteration whose network output was selected; `None` when no
    /// iteration ran.
    pub best_iteration: Option<usize>,
    /// Iteration index of every curve sample.
    pub curve_iterations: Vec<usize>,
    pub loss_curve: Vec<f64>,
    /// Present when a ground truth was supplied.
    pub psnr_curve: Option<Vec<f64>>,
    pub ssim_curve: Option<Vec<f64>>,
    pub seconds_per_iteration: f64,
}

fn to_tensor(img: &Image) -> Tensor4<f32> {
    Tensor4::from_vec(
        [1, 1, img.rows(), img.cols()],
        img.data().iter().map(|&v| v as f32).collect(),
    )
    .expect("length matches image")
}

fn to_image(t: &Tensor4<f32>) -> Result<Image> {
    Image::from_vec(
        t.height(),
        t.width(),
        t.data.iter().map(|&v| v as f64).collect(),
    )
}

enum Optimizer {
    AdamW(AdamW<f32>),
    Sgd(Sgd),
}

/// Trains a freshly initialized network on one sinogram.
///
/// Iteration `k` evaluates the network at the current parameters, records
/// the loss (and PSNR/SSIM when `ground_truth` is given), then takes one
/// optimizer step. The returned image is the network output of the
/// iteration chosen by `cfg.checkpoint_mode`.
pub fn reconstruct(
    y: &Sinogram,
    geom: &FanBeamGeometry,
    fbp_spec: &FilterSpec,
    cfg: &ReconConfig,
    ground_truth: Option<&Image>,
) -> Result<ReconReport> {
    cfg.validate()?;
    y.check_geometry("reconstruct", geom)?;
    if let Some(gt) = ground_truth {
        gt.check_dims("reconstruct ground truth", geom.rows(), geom.cols())?;
    }
    if cfg.checkpoint_mode == CheckpointMode::BestPsnr && ground_truth.is_none() {
        return Err(Error::InvalidArgument(
            "checkpoint_mode best_psnr requires a ground truth image".into(),
        ));
    }
    let x0 = to_tensor(&fbp_reconstruct(y, geom, fbp_spec)?);
    let mut net = Network::<f32>::new(cfg.network, cfg.seed)?;
    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Adamw => Optimizer::AdamW(AdamW::new(AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        })?),
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr: cfg.lr }),
    };
    let ssim_cfg = SsimConfig::default();

    let mut report = ReconReport {
        final_image: Image::zeros(geom.rows(), geom.cols()),
        best_iteration: None,
        curve_iterations: Vec::new(),
        loss_curve: Vec::new(),
        psnr_curve: ground_truth.map(|_| Vec::new()),
        ssim_curve: ground_truth.map(|_| Vec::new()),
        seconds_per_iteration: 0.0,
    };
    if cfg.iterations == 0 {
        report.final_image = to_image(&net.forward(&x0)?)?;
        return Ok(report);
    }

    let mut best_score = f64::NEG_INFINITY;
    let start = Instant::now();
    for k in 0..cfg.iterations {
        let out = net.forward(&x0)?;
        let x_hat = to_image(&out)?;
        let l = loss(y, &x_hat, geom)?;
        let quality = match ground_truth {
            Some(gt) => Some((psnr(&x_hat, gt)?, ssim(&x_hat, gt, &ssim_cfg)?)),
            None => None,
        };
        if k % cfg.curve_stride == 0 {
            report.curve_iterations.push(k);
            report.loss_curve.push(l.value);
            if let (Some((p, s)), Some(pc), Some(sc)) =
                (quality, report.psnr_curve.as_mut(), report.ssim_curve.as_mut())
            {
                pc.push(p);
                sc.push(s);
            }
        }
        let score = match cfg.checkpoint_mode {
            CheckpointMode::BestPsnr => quality.map_or(f64::NEG_INFINITY, |q| q.0),
            CheckpointMode::BestLoss => -l.value,
        };
        if score > best_score || report.best_iteration.is_none() {
            best_score = score;
            report.best_iteration = Some(k);
            report.final_image = x_hat;
        }
        if k % 100 == 0 {
            log::info!("iteration {k}: loss {:.6e}", l.value);
        }

        net.zero_grad();
        net.backward(&to_tensor(&l.grad))?;
        let mut params = net.parameters_mut();
        match &mut optimizer {
            Optimizer::AdamW(opt) => opt.step(&mut params)?,
            Optimizer::Sgd(opt) => opt.step(&mut params),
        }
        net.check_parameters()?;
    }
    report.seconds_per_iteration = start.elapsed().as_secs_f64() / cfg.iterations as f64;
    Ok(report)
}
