//! 3x3 convolution, stride 1, zero padding 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::real::matmul;
use super::winograd::{self, Tiling, XI};
use super::{Real, Tensor4};

/// Input channel count from which [`ConvAlgorithm::Auto`] switches to
/// Winograd.
const WINOGRAD_MIN_CHANNELS: usize = 16;

/// Tiles per Winograd band; keeps a band's transformed data in cache.
const BAND_TILES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvAlgorithm {
    /// Winograd for wide inputs, im2col otherwise.
    #[default]
    Auto,
    Im2col,
    Winograd,
}

/// Weights `(out_ch, in_ch, 3, 3)` and bias `(1, out_ch, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Real> ConvLayerParams<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayerParams {
            weight: Tensor4::parameter(
                [out_ch, in_ch, 3, 3],
                vec![T::zero(); out_ch * in_ch * 9],
            )
            .expect("length matches shape"),
            bias: Tensor4::parameter([1, out_ch, 1, 1], vec![T::zero(); out_ch])
                .expect("length matches shape"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub params: ConvLayerParams<T>,
    pub algorithm: ConvAlgorithm,
    input: Option<Tensor4<T>>,
    scratch: [Vec<T>; 2],
}

impl<T: Real> Conv2d<T> {
    pub fn new(params: ConvLayerParams<T>) -> Self {
        Conv2d {
            params,
            algorithm: ConvAlgorithm::Auto,
            input: None,
            scratch: [Vec::new(), Vec::new()],
        }
    }

    fn use_winograd(&self) -> bool {
        match self.algorithm {
            ConvAlgorithm::Auto => self.params.in_channels() >= WINOGRAD_MIN_CHANNELS,
            ConvAlgorithm::Im2col => false,
            ConvAlgorithm::Winograd => true,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (ci, co) = (self.params.in_channels(), self.params.out_channels());
        if x.channels() != ci {
            return Err(Error::dims("conv2d input channels", &[ci], &[x.channels()]));
        }
        let [n, _, h, w] = x.shape();
        let mut out = Tensor4::zeros([n, co, h, w]);
        let (wt, bias) = (&self.params.weight.data, &self.params.bias.data);
        let (in_len, out_len) = (ci * h * w, co * h * w);
        if self.use_winograd() {
            let tiling = Tiling::new(h, w);
            let bands = winograd::bands(tiling, BAND_TILES);
            let u = winograd::transform_weights(wt, co, ci);
            let [v, m] = &mut self.scratch;
            for b in 0..n {
                let xb = &x.data[b * in_len..(b + 1) * in_len];
                let ob = &mut out.data[b * out_len..(b + 1) * out_len];
                for &band in &bands {
                    reserve(v, XI * band.stride(tiling, ci));
                    reserve(m, XI * band.stride(tiling, co));
                    winograd::transform_input(xb, ci, tiling, band, v);
                    winograd::batched_forward(&u, v, co, ci, tiling, band, m);
                    winograd::transform_output(m, co, tiling, band, bias, ob);
                }
            }
        } else {
            let mut cols = vec![T::zero(); ci * 9 * h * w];
            for b in 0..n {
                im2col(&x.data[b * in_len..(b + 1) * in_len], ci, h, w, &mut cols);
                let dst = &mut out.data[b * out_len..(b + 1) * out_len];
                for (c, plane) in dst.chunks_mut(h * w).enumerate() {
                    plane.iter_mut().for_each(|v| *v = bias[c]);
                }
                matmul(false, false, co, h * w, ci * 9, wt, &cols, T::one(), dst);
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.take().ok_or(Error::MissingForward("conv2d"))?;
        let (ci, co) = (self.params.in_channels(), self.params.out_channels());
        let [n, _, h, w] = x.shape();
        if grad_out.shape() != [n, co, h, w] {
            return Err(Error::dims(
                "conv2d upstream gradient",
                &[n, co, h, w],
                &grad_out.shape(),
            ));
        }
        let (in_len, out_len, hw) = (ci * h * w, co * h * w, h * w);
        let mut grad_in = Tensor4::zeros(x.shape());
        let mut grad_w = vec![T::zero(); co * ci * 9];
        let mut grad_b = vec![T::zero(); co];
        for b in 0..n {
            for (c, plane) in grad_out.data[b * out_len..(b + 1) * out_len]
                .chunks(hw)
                .enumerate()
            {
                grad_b[c] += plane.iter().copied().sum();
            }
        }

        if self.use_winograd() {
            let tiling = Tiling::new(h, w);
            let bands = winograd::bands(tiling, BAND_TILES);
            let u = winograd::transform_weights(&self.params.weight.data, co, ci);
            let mut du = vec![T::zero(); u.len()];
            let [v, dm] = &mut self.scratch;
            for b in 0..n {
                let xb = &x.data[b * in_len..(b + 1) * in_len];
                let gb = &grad_out.data[b * out_len..(b + 1) * out_len];
                let gib = &mut grad_in.data[b * in_len..(b + 1) * in_len];
                for &band in &bands {
                    reserve(v, XI * band.stride(tiling, ci));
                    reserve(dm, XI * band.stride(tiling, co));
                    winograd::transform_input(xb, ci, tiling, band, v);
                    winograd::transform_output_adjoint(gb, co, tiling, band, dm);
                    winograd::batched_grad_u(dm, v, co, ci, tiling, band, &mut du);
                    // v is no longer needed; reuse it for dV.
                    winograd::batched_grad_v(&u, dm, co, ci, tiling, band, v);
                    winograd::transform_input_adjoint(v, ci, tiling, band, gib);
                }
            }
            winograd::transform_weights_adjoint(&du, co, ci, &mut grad_w);
        } else {
            let k = ci * 9;
            let mut cols = vec![T::zero(); k * hw];
            let mut dcols = vec![T::zero(); k * hw];
            for b in 0..n {
                let gy = &grad_out.data[b * out_len..(b + 1) * out_len];
                im2col(&x.data[b * in_len..(b + 1) * in_len], ci, h, w, &mut cols);
                matmul(false, true, co, k, hw, gy, &cols, T::one(), &mut grad_w);
                matmul(
                    true,
                    false,
                    k,
                    hw,
                    co,
                    &self.params.weight.data,
                    gy,
                    T::zero(),
                    &mut dcols,
                );
                col2im(
                    &dcols,
                    ci,
                    h,
                    w,
                    &mut grad_in.data[b * in_len..(b + 1) * in_len],
                );
            }
        }
        self.params.weight.accumulate_grad(&grad_w);
        self.params.bias.accumulate_grad(&grad_b);
        Ok(grad_in)
    }
}

fn reserve<T: Real>(buf: &mut Vec<T>, len: usize) {
    if buf.len() < len {
        buf.resize(len, T::zero());
    }
}

/// `cols[(c*9 + kr*3 + kc) * h*w + y*w + x] = input[c][y+kr-1][x+kc-1]`,
/// zero outside the plane.
fn im2col<T: Real>(input: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let src = &input[c * hw..(c + 1) * hw];
        for kr in 0..3 {
            for kc in 0..3 {
                let dst = &mut cols[(c * 9 + kr * 3 + kc) * hw..(c * 9 + kr * 3 + kc + 1) * hw];
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + kr as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    shifted_copy(srow, row, kc);
                }
            }
        }
    }
}

/// `row[x] = srow[x + kc - 1]` with zero fill.
#[inline]
fn shifted_copy<T: Real>(srow: &[T], row: &mut [T], kc: usize) {
    let w = row.len();
    match kc {
        0 => {
            row[0] = T::zero();
            row[1..].copy_from_slice(&srow[..w - 1]);
        }
        1 => row.copy_from_slice(srow),
        _ => {
            row[..w - 1].copy_from_slice(&srow[1..]);
            row[w - 1] = T::zero();
        }
    }
}

/// Transpose of [`im2col`], accumulated into `grad`.
fn col2im<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, grad: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let dst = &mut grad[c * hw..(c + 1) * hw];
        for kr in 0..3 {
            for kc in 0..3 {
                let src = &cols[(c * 9 + kr * 3 + kc) * hw..(c * 9 + kr * 3 + kc + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + kr as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let row = &src[y * w..(y + 1) * w];
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kc as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += row[x];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let len = shape.iter().product();
        Tensor4::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_conv(ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Conv2d<f64> {
        let mut p = ConvLayerParams::zeros(ci, co);
        p.weight.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        p.bias.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        Conv2d::new(p)
    }

    /// Direct triple loop, independent of both fast paths.
    fn naive(x: &Tensor4<f64>, p: &ConvLayerParams<f64>) -> Vec<f64> {
        let [n, ci, h, w] = x.shape();
        let co = p.out_channels();
        let mut out = vec![0.0; n * co * h * w];
        for b in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = p.bias.data[o];
                        for c in 0..ci {
                            for kr in 0..3 {
                                for kc in 0..3 {
                                    let sy = y as isize + kr as isize - 1;
                                    let sx = xx as isize + kc as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += p.weight.data[((o * ci + c) * 3 + kr) * 3 + kc]
                                        * x.data[((b * ci + c) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out[((b * co + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    const ALGORITHMS: [ConvAlgorithm; 2] = [ConvAlgorithm::Im2col, ConvAlgorithm::Winograd];

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 1, 7, 9], &mut rng);
        for alg in ALGORITHMS {
            let mut p = ConvLayerParams::zeros(1, 1);
            p.weight.data[4] = 1.0;
            let mut conv = Conv2d::new(p);
            conv.algorithm = alg;
            let y = conv.forward(&x).unwrap();
            for (a, b) in y.data.iter().zip(&x.data) {
                assert!((a - b).abs() < 1e-12, "{alg:?}");
            }
        }
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let (c, bias) = (0.7f64, 0.25);
        let x = Tensor4::from_vec([1, 2, 6, 6], vec![c; 72]).unwrap();
        for alg in ALGORITHMS {
            let mut p = ConvLayerParams::zeros(2, 1);
            p.weight.data.iter_mut().for_each(|v| *v = 1.0);
            p.bias.data[0] = bias;
            let mut conv = Conv2d::new(p);
            conv.algorithm = alg;
            let y = conv.forward(&x).unwrap();
            for i in 1..5 {
                for j in 1..5 {
                    // Nine taps per channel, two channels.
                    assert!((y.data[i * 6 + j] - (18.0 * c + bias)).abs() < 1e-12);
                }
            }
            assert!((y.data[0] - (8.0 * c + bias)).abs() < 1e-12);
        }
    }

    #[test]
    fn both_paths_match_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(ci, co, h, w) in &[(3, 5, 9, 11), (4, 2, 4, 4), (2, 3, 13, 6), (1, 1, 1, 1)] {
            let x = random([2, ci, h, w], &mut rng);
            let mut conv = random_conv(ci, co, &mut rng);
            let expected = naive(&x, &conv.params);
            for alg in ALGORITHMS {
                conv.algorithm = alg;
                let y = conv.forward(&x).unwrap();
                for (a, b) in y.data.iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-10, "{alg:?} {ci}x{co} {h}x{w}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_missing_forward() {
        let mut conv = Conv2d::new(ConvLayerParams::<f64>::zeros(2, 3));
        assert!(conv.forward(&Tensor4::zeros([1, 1, 4, 4])).is_err());
        assert!(matches!(
            conv.backward(&Tensor4::zeros([1, 3, 4, 4])),
            Err(Error::MissingForward(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([1, 3, 8, 8], &mut rng);
        for alg in ALGORITHMS {
            let mut conv = random_conv(3, 4, &mut rng);
            conv.algorithm = alg;
            conv.forward(&x).unwrap();
            let gi = conv.backward(&Tensor4::zeros([1, 4, 8, 8])).unwrap();
            assert!(gi.data.iter().all(|&v| v == 0.0));
            assert!(conv.params.weight.grad.as_ref().unwrap().iter().all(|&v| v == 0.0));
            assert!(conv.params.bias.grad.as_ref().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn impulse_gradient_is_flipped_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random([1, 1, 7, 7], &mut rng);
        for alg in ALGORITHMS {
            let mut conv = random_conv(1, 1, &mut rng);
            conv.algorithm = alg;
            conv.forward(&x).unwrap();
            let mut g = Tensor4::zeros([1, 1, 7, 7]);
            g.data[3 * 7 + 3] = 1.0;
            let gi = conv.backward(&g).unwrap();
            let k = &conv.params.weight.data;
            for i in 0..7 {
                for j in 0..7 {
                    let (di, dj) = (i as isize - 3, j as isize - 3);
                    let expected = if di.abs() <= 1 && dj.abs() <= 1 {
                        // input (3+di, 3+dj) feeds output (3,3) through tap (1+di, 1+dj).
                        k[((1 + di) * 3 + 1 + dj) as usize]
                    } else {
                        0.0
                    };
                    assert!((gi.data[i * 7 + j] - expected).abs() < 1e-12, "{alg:?} {i},{j}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ci, co, h, w) = (3, 2, 6, 7);
        let x = random([2, ci, h, w], &mut rng);
        let r = random([2, co, h, w], &mut rng);
        // Loss = <r, conv(x)>.
        let loss = |conv: &mut Conv2d<f64>, x: &Tensor4<f64>| -> f64 {
            let y = conv.forward(x).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        for alg in ALGORITHMS {
            let mut conv = random_conv(ci, co, &mut rng);
            conv.algorithm = alg;
            loss(&mut conv, &x);
            let gi = conv.backward(&r).unwrap();
            let gw = conv.params.weight.grad.clone().unwrap();
            let gb = conv.params.bias.grad.clone().unwrap();
            let eps = 1e-6;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            for k in 0..gw.len() {
                let mut c = conv.clone();
                c.params.weight.data[k] += eps;
                let lp = loss(&mut c, &x);
                c.params.weight.data[k] -= 2.0 * eps;
                let lm = loss(&mut c, &x);
                assert!(rel((lp - lm) / (2.0 * eps), gw[k]) < 1e-5, "{alg:?} w{k}");
            }
            for k in 0..gb.len() {
                let mut c = conv.clone();
                c.params.bias.data[k] += eps;
                let lp = loss(&mut c, &x);
                c.params.bias.data[k] -= 2.0 * eps;
                let lm = loss(&mut c, &x);
                assert!(rel((lp - lm) / (2.0 * eps), gb[k]) < 1e-5, "{alg:?} b{k}");
            }
            for k in (0..x.len()).step_by(7) {
                let mut xp = x.clone();
                xp.data[k] += eps;
                let lp = loss(&mut conv.clone(), &xp);
                xp.data[k] -= 2.0 * eps;
                let lm = loss(&mut conv.clone(), &xp);
                assert!(rel((lp - lm) / (2.0 * eps), gi.data[k]) < 1e-5, "{alg:?} x{k}");
            }
        }
    }
}
