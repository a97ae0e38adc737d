//! Raw little-endian f32 arrays with a JSON sidecar, and binary PGM.
//!
//! A raw array `foo.f32` is described by `foo.json`:
//!
//! ```json
//! {"dims": [N, M], "dtype": "f32le", "min": 0.0, "max": 1.0, "description": "..."}
//! ```
//!
//! Sidecars of simulated data may also carry `geometry`, `intensity`,
//! `seed` and `background`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dose::Background;
use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Image, Sinogram};

pub const RAW_DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: [usize; 2],
    pub dtype: String,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<FanBeamGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
}

impl Sidecar {
    pub fn new(dims: [usize; 2], data: &[f64], description: impl Into<String>) -> Self {
        let min = data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Sidecar {
            dims,
            dtype: RAW_DTYPE.to_string(),
            min: if data.is_empty() { 0.0 } else { min },
            max: if data.is_empty() { 0.0 } else { max },
            description: description.into(),
            geometry: None,
            intensity: None,
            seed: None,
            background: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `data` as f32 LE to `path` and the sidecar next to it.
pub fn write_raw(path: &Path, data: &[f64], sidecar: &Sidecar) -> Result<()> {
    let expected = sidecar.dims[0] * sidecar.dims[1];
    if data.len() != expected {
        return Err(Error::dims("write_raw", &[expected], &[data.len()]));
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    let side = sidecar_path(path);
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: side.clone(), source: e })?;
    if sidecar.dtype != RAW_DTYPE {
        return Err(Error::Format {
            path: side,
            offset: 0,
            message: format!("unsupported dtype {:?}", sidecar.dtype),
        });
    }
    Ok(sidecar)
}

/// Reads a raw array and its sidecar. The file length must match the
/// sidecar dims exactly.
pub fn read_raw(path: &Path) -> Result<(Vec<f64>, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.dims[0] * sidecar.dims[1] * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "file holds {} bytes but sidecar dims {:?} need {expected}",
                bytes.len(),
                sidecar.dims
            ),
        });
    }
    let mut data = Vec::with_capacity(expected / 4);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (k * 4) as u64,
                message: "non-finite value".into(),
            });
        }
        data.push(v);
    }
    Ok((data, sidecar))
}

pub fn read_raw_image(path: &Path) -> Result<Image> {
    let (data, side) = read_raw(path)?;
    Image::from_vec(side.dims[0], side.dims[1], data)
}

pub fn read_raw_sinogram(path: &Path) -> Result<(Sinogram, Sidecar)> {
    let (data, side) = read_raw(path)?;
    let sino = Sinogram::from_vec(side.dims[0], side.dims[1], data)?;
    Ok((sino, side))
}

/// Writes an image. `.pgm` selects 16-bit PGM (values clamped to [0, 1]);
/// anything else is raw f32 with a sidecar.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    if is_pgm(path) {
        write_pgm(img, path, 16)
    } else {
        write_raw(path, img.data(), &Sidecar::new(img.dims(), img.data(), "image"))
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    if is_pgm(path) {
        read_pgm(path)
    } else {
        read_raw_image(path)
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Binary (P5) PGM with 8 or 16 bits per sample. `[0, 1]` maps linearly
/// onto `[0, maxval]`.
pub fn write_pgm(img: &Image, path: &Path, bits: u32) -> Result<()> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "PGM bit depth must be 8 or 16, got {bits}"
            )))
        }
    };
    let mut out = Vec::with_capacity(32 + img.len() * 2);
    write!(out, "P5\n{} {}\n{}\n", img.cols(), img.rows(), maxval).unwrap();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail(0, "missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fail(pos, "malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fail(start, "header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(fail(pos, "missing whitespace after header".into()));
    }
    pos += 1;
    let [cols, rows, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(fail(pos, format!("invalid maxval {maxval}")));
    }
    let width = if maxval > 255 { 2 } else { 1 };
    let need = rows * cols * width;
    if bytes.len() - pos < need {
        return Err(fail(
            bytes.len(),
            format!("truncated pixel data: need {need} bytes after offset {pos}"),
        ));
    }
    let raster = &bytes[pos..pos + need];
    let data = (0..rows * cols)
        .map(|k| {
            let q = if width == 2 {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as f64
            } else {
                raster[k] as f64
            };
            q / maxval as f64
        })
        .collect();
    Image::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f32_image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(rows, cols, |_, _| rng.random_range(-2.0f32..2.0) as f64)
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        let img = f32_image(7, 5, 1);
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back, img);
        let side = read_sidecar(&path).unwrap();
        assert_eq!(side.dims, [7, 5]);
        assert_eq!(side.dtype, "f32le");
    }

    #[test]
    fn pgm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::from_fn(9, 11, |_, _| rng.random_range(0.0..1.0));
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn pgm8_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = Image::from_fn(4, 3, |i, j| (i * 3 + j) as f64 / 11.0);
        write_pgm(&img, &path, 8).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-15);
        }
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        write_image(&f32_image(4, 4, 3), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        match read_image(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 58),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_malformed_pgm_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        fs::write(&path, b"P5\n4 4\n65535\n\x00\x01").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
        fs::write(&path, b"P2\n4 4\n255\n").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { offset: 0, .. })));
        fs::write(&path, b"P5\n# comment\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(read_pgm(&path).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn sidecar_dims_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        write_image(&f32_image(4, 4, 3), &path).unwrap();
        let mut side = read_sidecar(&path).unwrap();
        side.dims = [4, 5];
        fs::write(sidecar_path(&path), serde_json::to_string(&side).unwrap()).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));
    }
}
