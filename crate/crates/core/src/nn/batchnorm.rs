//! Batch normalization over `(batch, height, width)`, always with batch
//! statistics.

use crate::error::{Error, Result};

use super::{Real, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `gamma` and `beta` shaped `(1, ch, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
    pub eps: f64,
}

impl<T: Real> BatchNormParams<T> {
    /// `gamma = 1`, `beta = 0`.
    pub fn identity(channels: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "batchnorm eps must be positive, got {eps}"
            )));
        }
        Ok(BatchNormParams {
            gamma: Tensor4::parameter([1, channels, 1, 1], vec![T::one(); channels])?,
            beta: Tensor4::parameter([1, channels, 1, 1], vec![T::zero(); channels])?,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone)]
struct Cache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub params: BatchNormParams<T>,
    cache: Option<Cache<T>>,
}

/// `(sum f(x), sum g(x, y))` in `f64` over paired slices, with independent
/// partial sums so the loop vectorizes.
fn pair_sums<T: Real>(a: &[T], b: &[T], bias: f64) -> (f64, f64) {
    const LANES: usize = 8;
    let mut s1 = [0.0f64; LANES];
    let mut s2 = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for k in 0..LANES {
            let u = xa[k].as_f64() - bias;
            s1[k] += u;
            s2[k] += u * (xb[k].as_f64() - bias);
        }
    }
    let mut t1: f64 = s1.iter().sum();
    let mut t2: f64 = s2.iter().sum();
    for (xa, xb) in ra.iter().zip(rb) {
        let u = xa.as_f64() - bias;
        t1 += u;
        t2 += u * (xb.as_f64() - bias);
    }
    (t1, t2)
}

/// Visits the `(batch, channel)` planes of channel `c`.
fn planes<T>(data: &[T], shape: [usize; 4], c: usize) -> impl Iterator<Item = &[T]> {
    let [n, ch, h, w] = shape;
    let hw = h * w;
    (0..n).map(move |b| &data[(b * ch + c) * hw..(b * ch + c + 1) * hw])
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(params: BatchNormParams<T>) -> Self {
        BatchNorm2d {
            params,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [n, ch, h, w] = x.shape();
        if ch != self.params.channels() {
            return Err(Error::dims(
                "batchnorm channels",
                &[self.params.channels()],
                &[ch],
            ));
        }
        let count = n * h * w;
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm needs at least 2 values per channel, got {count}"
            )));
        }
        let hw = h * w;
        let mut normalized = Tensor4::zeros(x.shape());
        let mut out = Tensor4::zeros(x.shape());
        let mut inv_std = vec![0.0; ch];
        for c in 0..ch {
            let mean = planes(&x.data, x.shape(), c)
                .map(|p| pair_sums(p, p, 0.0).0)
                .sum::<f64>()
                / count as f64;
            let var = planes(&x.data, x.shape(), c)
                .map(|p| pair_sums(p, p, mean).1)
                .sum::<f64>()
                / count as f64;
            let s = 1.0 / (var + self.params.eps).sqrt();
            inv_std[c] = s;
            let (g, bt) = (self.params.gamma.data[c], self.params.beta.data[c]);
            let (mean_t, s_t) = (T::of(mean), T::of(s));
            for b in 0..n {
                let off = (b * ch + c) * hw;
                let src = &x.data[off..off + hw];
                let nrm = &mut normalized.data[off..off + hw];
                let dst = &mut out.data[off..off + hw];
                for ((xv, nv), ov) in src.iter().zip(nrm.iter_mut()).zip(dst.iter_mut()) {
                    let xh = (*xv - mean_t) * s_t;
                    *nv = xh;
                    *ov = g * xh + bt;
                }
            }
        }
        self.cache = Some(Cache {
            normalized,
            inv_std,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let Cache {
            normalized,
            inv_std,
        } = self.cache.take().ok_or(Error::MissingForward("batchnorm"))?;
        let shape = normalized.shape();
        if grad_out.shape() != shape {
            return Err(Error::dims("batchnorm upstream gradient", &shape, &grad_out.shape()));
        }
        let [n, ch, h, w] = shape;
        let (hw, count) = (h * w, (n * h * w) as f64);
        let mut grad_in = Tensor4::zeros(shape);
        let mut grad_gamma = vec![T::zero(); ch];
        let mut grad_beta = vec![T::zero(); ch];
        for c in 0..ch {
            let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
            for (gp, xp) in planes(&grad_out.data, shape, c).zip(planes(&normalized.data, shape, c)) {
                let (s1, s2) = pair_sums(gp, xp, 0.0);
                sum_dy += s1;
                sum_dy_xh += s2;
            }
            grad_beta[c] = T::of(sum_dy);
            grad_gamma[c] = T::of(sum_dy_xh);
            let scale = self.params.gamma.data[c].as_f64() * inv_std[c];
            let (mean_dy, mean_dy_xh) = (T::of(sum_dy / count), T::of(sum_dy_xh / count));
            let scale = T::of(scale);
            for b in 0..n {
                let off = (b * ch + c) * hw;
                let gy = &grad_out.data[off..off + hw];
                let nrm = &normalized.data[off..off + hw];
                let dst = &mut grad_in.data[off..off + hw];
                for ((d, &g), &xh) in dst.iter_mut().zip(gy).zip(nrm) {
                    *d = scale * (g - mean_dy - xh * mean_dy_xh);
                }
            }
        }
        self.params.gamma.accumulate_grad(&grad_gamma);
        self.params.beta.accumulate_grad(&grad_beta);
        Ok(grad_in)
    }
}
