//! Winograd F(4x4, 3x3) convolution with exact reverse-mode rules.
//!
//! Forward, per 4x4 output tile and channel pair:
//!
//! ```text
//! Y = A^T [ (G g G^T) . (B^T d B) ] A
//! ```
//!
//! with `d` the 6x6 input tile (one-pixel zero padding included) and `g` the
//! 3x3 kernel. The elementwise product summed over input channels becomes
//! 36 independent GEMMs. Backward applies the transposed transforms, so
//! the gradients are those of the computed function, not an approximation
//! of the direct convolution.

use super::real::matmul;
use super::Real;

pub(crate) const TILE: usize = 4;
const ALPHA: usize = 6;
pub(crate) const XI: usize = ALPHA * ALPHA;

/// `G`, 6x3.
const G: [[f64; 3]; 6] = [
    [1.0 / 4.0, 0.0, 0.0],
    [-1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0],
    [1.0 / 24.0, 1.0 / 12.0, 1.0 / 6.0],
    [1.0 / 24.0, -1.0 / 12.0, 1.0 / 6.0],
    [0.0, 0.0, 1.0],
];

/// `B^T d` for a length-6 vector.
#[inline(always)]
fn bt<T: Real>(d: [T; 6]) -> [T; 6] {
    let (c2, c4, c5) = (T::of(2.0), T::of(4.0), T::of(5.0));
    [
        c4 * d[0] - c5 * d[2] + d[4],
        -c4 * d[1] - c4 * d[2] + d[3] + d[4],
        c4 * d[1] - c4 * d[2] - d[3] + d[4],
        -c2 * d[1] - d[2] + c2 * d[3] + d[4],
        c2 * d[1] - d[2] - c2 * d[3] + d[4],
        c4 * d[1] - c5 * d[3] + d[5],
    ]
}

/// `B v`, the transpose of [`bt`].
#[inline(always)]
fn b<T: Real>(v: [T; 6]) -> [T; 6] {
    let (c2, c4, c5) = (T::of(2.0), T::of(4.0), T::of(5.0));
    [
        c4 * v[0],
        -c4 * v[1] + c4 * v[2] - c2 * v[3] + c2 * v[4] + c4 * v[5],
        -c5 * v[0] - c4 * v[1] - c4 * v[2] - v[3] - v[4],
        v[1] - v[2] + c2 * v[3] - c2 * v[4] - c5 * v[5],
        v[0] + v[1] + v[2] + v[3] + v[4],
        v[5],
    ]
}

/// `A^T m`, 6 -> 4.
#[inline(always)]
fn at<T: Real>(m: [T; 6]) -> [T; 4] {
    let (c2, c4, c8) = (T::of(2.0), T::of(4.0), T::of(8.0));
    [
        m[0] + m[1] + m[2] + m[3] + m[4],
        m[1] - m[2] + c2 * m[3] - c2 * m[4],
        m[1] + m[2] + c4 * m[3] + c4 * m[4],
        m[1] - m[2] + c8 * m[3] - c8 * m[4] + m[5],
    ]
}

/// `A g`, the transpose of [`at`], 4 -> 6.
#[inline(always)]
fn a<T: Real>(g: [T; 4]) -> [T; 6] {
    let (c2, c4, c8) = (T::of(2.0), T::of(4.0), T::of(8.0));
    [
        g[0],
        g[0] + g[1] + g[2] + g[3],
        g[0] - g[1] + g[2] - g[3],
        g[0] + c2 * g[1] + c4 * g[2] + c8 * g[3],
        g[0] - c2 * g[1] + c4 * g[2] - c8 * g[3],
        g[3],
    ]
}

/// Tile grid covering an `h x w` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tiling {
    pub h: usize,
    pub w: usize,
    pub th: usize,
    pub tw: usize,
}

impl Tiling {
    pub fn new(h: usize, w: usize) -> Self {
        Tiling {
            h,
            w,
            th: h.div_ceil(TILE),
            tw: w.div_ceil(TILE),
        }
    }

    /// Width of a zero-padded strip row: one pixel left, enough on the right
    /// for the last tile.
    fn strip_width(&self) -> usize {
        TILE * self.tw + 2
    }
}

/// `U[xi][co][ci] = (G g G^T)[xi]` for weights laid out `(co, ci, 3, 3)`.
pub(crate) fn transform_weights<T: Real>(weights: &[T], out_ch: usize, in_ch: usize) -> Vec<T> {
    let pairs = out_ch * in_ch;
    let mut u = vec![T::zero(); XI * pairs];
    let g: Vec<[T; 3]> = G.iter().map(|r| [T::of(r[0]), T::of(r[1]), T::of(r[2])]).collect();
    for pair in 0..pairs {
        let k = &weights[pair * 9..pair * 9 + 9];
        // tmp = G k (6x3)
        let mut tmp = [[T::zero(); 3]; ALPHA];
        for (r, grow) in g.iter().enumerate() {
            for c in 0..3 {
                tmp[r][c] = grow[0] * k[c] + grow[1] * k[3 + c] + grow[2] * k[6 + c];
            }
        }
        // U = tmp G^T (6x6)
        for r in 0..ALPHA {
            for (c, gcol) in g.iter().enumerate() {
                u[(r * ALPHA + c) * pairs + pair] =
                    tmp[r][0] * gcol[0] + tmp[r][1] * gcol[1] + tmp[r][2] * gcol[2];
            }
        }
    }
    u
}

/// Transpose of [`transform_weights`]: `dg = G^T dU G`, accumulated into
/// `grad_weights`.
pub(crate) fn transform_weights_adjoint<T: Real>(
    du: &[T],
    out_ch: usize,
    in_ch: usize,
    grad_weights: &mut [T],
) {
    let pairs = out_ch * in_ch;
    let g: Vec<[T; 3]> = G.iter().map(|r| [T::of(r[0]), T::of(r[1]), T::of(r[2])]).collect();
    for pair in 0..pairs {
        // tmp = dU G (6x3)
        let mut tmp = [[T::zero(); 3]; ALPHA];
        for (r, row) in tmp.iter_mut().enumerate() {
            for (c, grow) in g.iter().enumerate() {
                let v = du[(r * ALPHA + c) * pairs + pair];
                row[0] += v * grow[0];
                row[1] += v * grow[1];
                row[2] += v * grow[2];
            }
        }
        // dg = G^T tmp (3x3)
        let dst = &mut grad_weights[pair * 9..pair * 9 + 9];
        for (r, grow) in g.iter().enumerate() {
            for kr in 0..3 {
                for kc in 0..3 {
                    dst[kr * 3 + kc] += grow[kr] * tmp[r][kc];
                }
            }
        }
    }
}

/// Padding added to every transform-point plane so the 36 planes of a
/// block do not alias to the same cache sets.
const PLANE_PAD: usize = 16;

/// A band of tile rows `ty0..ty1` processed together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Band {
    pub ty0: usize,
    pub ty1: usize,
}

impl Band {
    /// Tiles in the band.
    pub fn tiles(&self, tiling: Tiling) -> usize {
        (self.ty1 - self.ty0) * tiling.tw
    }

    /// Distance between consecutive transform-point planes for
    /// `channels` channels.
    pub fn stride(&self, tiling: Tiling, channels: usize) -> usize {
        channels * self.tiles(tiling) + PLANE_PAD
    }
}

/// Splits the tile rows into bands of at most `max_tiles` tiles.
pub(crate) fn bands(tiling: Tiling, max_tiles: usize) -> Vec<Band> {
    let rows = (max_tiles / tiling.tw.max(1)).max(1);
    (0..tiling.th)
        .step_by(rows)
        .map(|ty0| Band {
            ty0,
            ty1: (ty0 + rows).min(tiling.th),
        })
        .collect()
}

/// Applies a 1-D transform lane by lane: `out[k][t] = f(d[.][t])[k]`, with
/// `out` laid out `[k][n]`.
#[inline(always)]
fn lanes<T: Real, const I: usize, const O: usize>(
    d: [&[T]; I],
    out: &mut [T],
    f: impl Fn([T; I]) -> [T; O],
) {
    let n = out.len() / O;
    let d: [&[T]; I] = std::array::from_fn(|k| &d[k][..n]);
    let o: [&mut [T]; O] = {
        let mut rest = &mut out[..O * n];
        std::array::from_fn(|_| {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(n);
            rest = tail;
            head
        })
    };
    for t in 0..n {
        let y = f(std::array::from_fn(|k| d[k][t]));
        for k in 0..O {
            o[k][t] = y[k];
        }
    }
}

fn rows<T, const N: usize>(buf: &[T], len: usize) -> [&[T]; N] {
    std::array::from_fn(|k| &buf[k * len..(k + 1) * len])
}

/// `V[xi][c][t] = (B^T d B)[xi]` for every channel and tile of the band.
/// `input` is `channels x h x w`; `v` holds at least `XI * stride` values.
pub(crate) fn transform_input<T: Real>(
    input: &[T],
    channels: usize,
    tiling: Tiling,
    band: Band,
    v: &mut [T],
) {
    let Tiling { h, w, tw, .. } = tiling;
    let nb = band.tiles(tiling);
    let plane = band.stride(tiling, channels);
    let sw = tiling.strip_width();
    let mut strip = vec![T::zero(); ALPHA * sw];
    let mut ct = vec![T::zero(); ALPHA * sw];
    let mut cols = vec![T::zero(); ALPHA * tw];
    let mut tmp = vec![T::zero(); ALPHA * tw];

    for ch in 0..channels {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for ty in band.ty0..band.ty1 {
            // Zero-padded strip of input rows 4*ty - 1 ..= 4*ty + 4.
            for r in 0..ALPHA {
                let y = (TILE * ty + r) as isize - 1;
                let dst = &mut strip[r * sw..(r + 1) * sw];
                if y >= 0 && (y as usize) < h {
                    dst[0] = T::zero();
                    dst[1..1 + w].copy_from_slice(&src[y as usize * w..(y as usize + 1) * w]);
                    dst[1 + w..].iter_mut().for_each(|s| *s = T::zero());
                } else {
                    dst.iter_mut().for_each(|s| *s = T::zero());
                }
            }
            // Column transform along whole strip rows.
            lanes(rows::<T, ALPHA>(&strip, sw), &mut ct, bt);
            let base = ch * nb + (ty - band.ty0) * tw;
            for k1 in 0..ALPHA {
                let row = &ct[k1 * sw..(k1 + 1) * sw];
                for t in 0..tw {
                    for c in 0..ALPHA {
                        cols[c * tw + t] = row[TILE * t + c];
                    }
                }
                lanes(rows::<T, ALPHA>(&cols, tw), &mut tmp, bt);
                for k2 in 0..ALPHA {
                    let off = (k1 * ALPHA + k2) * plane + base;
                    v[off..off + tw].copy_from_slice(&tmp[k2 * tw..(k2 + 1) * tw]);
                }
            }
        }
    }
}

/// Transpose of [`transform_input`]: scatters `dV` back onto the input
/// plane (`channels x h x w`), accumulating into `grad_input`.
pub(crate) fn transform_input_adjoint<T: Real>(
    dv: &[T],
    channels: usize,
    tiling: Tiling,
    band: Band,
    grad_input: &mut [T],
) {
    let Tiling { h, w, tw, .. } = tiling;
    let nb = band.tiles(tiling);
    let plane = band.stride(tiling, channels);
    let sw = tiling.strip_width();
    let mut strip = vec![T::zero(); ALPHA * sw];
    let mut ct = vec![T::zero(); ALPHA * sw];
    let mut cols = vec![T::zero(); ALPHA * tw];

    for ch in 0..channels {
        let dst = &mut grad_input[ch * h * w..(ch + 1) * h * w];
        for ty in band.ty0..band.ty1 {
            let base = ch * nb + (ty - band.ty0) * tw;
            ct.iter_mut().for_each(|s| *s = T::zero());
            for k1 in 0..ALPHA {
                let d: [&[T]; ALPHA] = std::array::from_fn(|k2| {
                    let off = (k1 * ALPHA + k2) * plane + base;
                    &dv[off..off + tw]
                });
                lanes(d, &mut cols, b);
                // Overlapping tiles: accumulate.
                let row = &mut ct[k1 * sw..(k1 + 1) * sw];
                for t in 0..tw {
                    for c in 0..ALPHA {
                        row[TILE * t + c] += cols[c * tw + t];
                    }
                }
            }
            lanes(rows::<T, ALPHA>(&ct, sw), &mut strip, b);
            for r in 0..ALPHA {
                let y = (TILE * ty + r) as isize - 1;
                if y >= 0 && (y as usize) < h {
                    let row = &mut dst[y as usize * w..(y as usize + 1) * w];
                    for (g, s) in row.iter_mut().zip(&strip[r * sw + 1..r * sw + 1 + w]) {
                        *g += *s;
                    }
                }
            }
        }
    }
}

/// `Y = A^T M A` per tile, cropped to `h x w`, plus `bias`, written to
/// `out` (`channels x h x w`).
pub(crate) fn transform_output<T: Real>(
    m: &[T],
    channels: usize,
    tiling: Tiling,
    band: Band,
    bias: &[T],
    out: &mut [T],
) {
    let Tiling { h, w, tw, .. } = tiling;
    let nb = band.tiles(tiling);
    let plane = band.stride(tiling, channels);
    // s[k1][j][t] = (A^T M[k1, :])[j]
    let mut s = vec![T::zero(); ALPHA * TILE * tw];
    let mut col = vec![T::zero(); ALPHA * tw];
    let mut y4 = vec![T::zero(); TILE * tw];

    for ch in 0..channels {
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for ty in band.ty0..band.ty1 {
            let base = ch * nb + (ty - band.ty0) * tw;
            for k1 in 0..ALPHA {
                let d: [&[T]; ALPHA] = std::array::from_fn(|k2| {
                    let off = (k1 * ALPHA + k2) * plane + base;
                    &m[off..off + tw]
                });
                lanes(d, &mut s[k1 * TILE * tw..(k1 + 1) * TILE * tw], at);
            }
            for j in 0..TILE {
                for k1 in 0..ALPHA {
                    col[k1 * tw..(k1 + 1) * tw]
                        .copy_from_slice(&s[(k1 * TILE + j) * tw..(k1 * TILE + j + 1) * tw]);
                }
                lanes(rows::<T, ALPHA>(&col, tw), &mut y4, at);
                for i in 0..TILE {
                    let y = TILE * ty + i;
                    if y >= h {
                        break;
                    }
                    let row = &mut dst[y * w..(y + 1) * w];
                    for (t, &val) in y4[i * tw..(i + 1) * tw].iter().enumerate() {
                        if let Some(o) = row.get_mut(TILE * t + j) {
                            *o = val + bias[ch];
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`transform_output`] (without the bias): `dM = A dY A^T`,
/// written to `dm`.
pub(crate) fn transform_output_adjoint<T: Real>(
    grad_out: &[T],
    channels: usize,
    tiling: Tiling,
    band: Band,
    dm: &mut [T],
) {
    let Tiling { h, w, tw, .. } = tiling;
    let nb = band.tiles(tiling);
    let plane = band.stride(tiling, channels);
    // g[i][t] for one column offset j
    let mut g = vec![T::zero(); TILE * tw];
    // s[j][k1][t] = (A dY[:, j])[k1]
    let mut s = vec![T::zero(); TILE * ALPHA * tw];
    let mut sj = vec![T::zero(); TILE * tw];
    let mut tmp = vec![T::zero(); ALPHA * tw];

    for ch in 0..channels {
        let src = &grad_out[ch * h * w..(ch + 1) * h * w];
        for ty in band.ty0..band.ty1 {
            let base = ch * nb + (ty - band.ty0) * tw;
            for j in 0..TILE {
                for i in 0..TILE {
                    let y = TILE * ty + i;
                    let gi = &mut g[i * tw..(i + 1) * tw];
                    if y >= h {
                        gi.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let row = &src[y * w..(y + 1) * w];
                    for (t, v) in gi.iter_mut().enumerate() {
                        *v = row.get(TILE * t + j).copied().unwrap_or(T::zero());
                    }
                }
                lanes(rows::<T, TILE>(&g, tw), &mut s[j * ALPHA * tw..(j + 1) * ALPHA * tw], a);
            }
            for k1 in 0..ALPHA {
                for j in 0..TILE {
                    sj[j * tw..(j + 1) * tw]
                        .copy_from_slice(&s[(j * ALPHA + k1) * tw..(j * ALPHA + k1 + 1) * tw]);
                }
                lanes(rows::<T, TILE>(&sj, tw), &mut tmp, a);
                for k2 in 0..ALPHA {
                    let off = (k1 * ALPHA + k2) * plane + base;
                    dm[off..off + tw].copy_from_slice(&tmp[k2 * tw..(k2 + 1) * tw]);
                }
            }
        }
    }
}

/// `M[xi] = U[xi] . V[xi]` for all 36 transform points of a band.
pub(crate) fn batched_forward<T: Real>(
    u: &[T],
    v: &[T],
    out_ch: usize,
    in_ch: usize,
    tiling: Tiling,
    band: Band,
    m: &mut [T],
) {
    let nb = band.tiles(tiling);
    let (sv, sm) = (band.stride(tiling, in_ch), band.stride(tiling, out_ch));
    for xi in 0..XI {
        matmul(
            false,
            false,
            out_ch,
            nb,
            in_ch,
            &u[xi * out_ch * in_ch..(xi + 1) * out_ch * in_ch],
            &v[xi * sv..xi * sv + in_ch * nb],
            T::zero(),
            &mut m[xi * sm..xi * sm + out_ch * nb],
        );
    }
}

/// `dU[xi] += dM[xi] . V[xi]^T`.
pub(crate) fn batched_grad_u<T: Real>(
    dm: &[T],
    v: &[T],
    out_ch: usize,
    in_ch: usize,
    tiling: Tiling,
    band: Band,
    du: &mut [T],
) {
    let nb = band.tiles(tiling);
    let (sv, sm) = (band.stride(tiling, in_ch), band.stride(tiling, out_ch));
    for xi in 0..XI {
        matmul(
            false,
            true,
            out_ch,
            in_ch,
            nb,
            &dm[xi * sm..xi * sm + out_ch * nb],
            &v[xi * sv..xi * sv + in_ch * nb],
            T::one(),
            &mut du[xi * out_ch * in_ch..(xi + 1) * out_ch * in_ch],
        );
    }
}

/// `dV[xi] = U[xi]^T . dM[xi]`.
pub(crate) fn batched_grad_v<T: Real>(
    u: &[T],
    dm: &[T],
    out_ch: usize,
    in_ch: usize,
    tiling: Tiling,
    band: Band,
    dv: &mut [T],
) {
    let nb = band.tiles(tiling);
    let (sv, sm) = (band.stride(tiling, in_ch), band.stride(tiling, out_ch));
    for xi in 0..XI {
        matmul(
            true,
            false,
            in_ch,
            nb,
            out_ch,
            &u[xi * out_ch * in_ch..(xi + 1) * out_ch * in_ch],
            &dm[xi * sm..xi * sm + out_ch * nb],
            T::zero(),
            &mut dv[xi * sv..xi * sv + in_ch * nb],
        );
    }
}
