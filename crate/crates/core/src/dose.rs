//! Low-dose measurement simulation: Poisson photon counts through the
//! normalized object, and the post-log conversion back to line integrals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Image, Sinogram};
use crate::projector::project;

/// Source intensities (photons per ray) of the three dose levels.
pub const INTENSITY_PRESETS: [f64; 3] = [1e3, 1e4, 5e4];

/// Counts below this are clamped before taking the log.
pub const COUNT_FLOOR: f64 = 0.1;

/// Means at or above this are sampled with the rounded normal approximation.
pub const NORMAL_APPROX_THRESHOLD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

/// Additive background (scatter and electronic noise) in counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Background {
    Uniform(f64),
    PerBin(Vec<f64>),
}

impl Default for Background {
    fn default() -> Self {
        Background::Uniform(0.0)
    }
}

impl Background {
    #[inline]
    pub fn at(&self, bin: usize) -> f64 {
        match self {
            Background::Uniform(v) => *v,
            Background::PerBin(v) => v[bin],
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        let ok = match self {
            Background::Uniform(v) => v.is_finite() && *v >= 0.0,
            Background::PerBin(v) => {
                if v.len() != len {
                    return Err(Error::dims("background", &[len], &[v.len()]));
                }
                v.iter().all(|b| b.is_finite() && *b >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "background must be finite and nonnegative".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountsSinogram {
    pub num_angles: usize,
    pub num_bins: usize,
    pub counts: Vec<f64>,
    pub intensity: f64,
    pub background: Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub image: Image,
    /// The input was constant, so the output is all zeros.
    pub degenerate: bool,
}

/// Min-max normalization to [0, 1].
pub fn normalize(img: &Image) -> Normalized {
    let (lo, hi) = (img.min(), img.max());
    let range = hi - lo;
    if !(range > 0.0) {
        log::warn!("normalize: constant image, returning zeros");
        return Normalized {
            image: Image::zeros(img.rows(), img.cols()),
            degenerate: true,
        };
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v - lo) / range;
    }
    Normalized {
        image: out,
        degenerate: false,
    }
}

/// Draws `Poisson(I * exp(-[A x]_i) + background_i)` for every ray.
///
/// Each bin gets its own generator derived from `(seed, bin)`, so results do
/// not depend on the order bins are visited in.
pub fn simulate_counts(
    img: &Image,
    geom: &FanBeamGeometry,
    intensity: f64,
    background: &Background,
    seed: RngSeed,
) -> Result<CountsSinogram> {
    if !(intensity.is_finite() && intensity >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "intensity must be finite and nonnegative, got {intensity}"
        )));
    }
    let rays = geom.num_angles * geom.num_bins;
    background.validate(rays)?;
    if img.min() < 0.0 || img.max() > 1.0 {
        log::warn!("simulate_counts: image is not normalized to [0, 1]");
    }
    let line_integrals = project(img, geom)?;
    let counts = line_integrals
        .data()
        .iter()
        .enumerate()
        .map(|(bin, &l)| {
            let mean = intensity * (-l).exp() + background.at(bin);
            let mut rng = bin_rng(seed, bin as u64);
            sample_poisson(mean, &mut rng)
        })
        .collect();
    Ok(CountsSinogram {
        num_angles: geom.num_angles,
        num_bins: geom.num_bins,
        counts,
        intensity,
        background: background.clone(),
    })
}

/// Post-log transform `-ln(max(c - background, COUNT_FLOOR) / I)`.
pub fn counts_to_sinogram(c: &CountsSinogram) -> Result<Sinogram> {
    if !(c.intensity > 0.0) {
        return Err(Error::InvalidArgument(
            "post-log conversion needs a positive intensity".into(),
        ));
    }
    c.background.validate(c.counts.len())?;
    let data = c
        .counts
        .iter()
        .enumerate()
        .map(|(bin, &n)| -((n - c.background.at(bin)).max(COUNT_FLOOR) / c.intensity).ln())
        .collect();
    Sinogram::from_vec(c.num_angles, c.num_bins, data)
}

/// Inversion sampling below [`NORMAL_APPROX_THRESHOLD`], rounded normal
/// approximation (clamped at zero) above it.
pub fn sample_poisson(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean >= NORMAL_APPROX_THRESHOLD {
        let z: f64 = rng.sample(StandardNormal);
        return (mean + mean.sqrt() * z).round().max(0.0);
    }
    let u: f64 = rng.random();
    let mut k = 0u32;
    let mut p = (-mean).exp();
    let mut cdf = p;
    // The tail beyond ~mean + 20 sqrt(mean) carries no probability in f64.
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k as f64
}

fn bin_rng(seed: RngSeed, bin: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed.0 ^ splitmix64(bin.wrapping_add(0x632b_e59b_d9b4_e019))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
