//! Steps shared by the subcommands: phantom loading, simulation, running
//! one reconstruction method and writing its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tomoforge::dose::{counts_to_sinogram, normalize, simulate_counts, Background, RngSeed};
use tomoforge::fbp::{fbp_reconstruct, FilterSpec};
use tomoforge::io::{read_image, write_raw, Sidecar};
use tomoforge::metrics::{psnr, ssim, SsimConfig};
use tomoforge::phantom::{shepp_logan, EllipsePhantomSpec};
use tomoforge::recon::{reconstruct, ReconConfig};
use tomoforge::tv::{tv_reconstruct_with_history, TvConfig};
use tomoforge::{FanBeamGeometry, Image, Sinogram};

use crate::config::Method;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.f32";
pub const COUNTS_FILE: &str = "counts.f32";
pub const SINOGRAM_FILE: &str = "sinogram.f32";

/// `shepp-logan`, an ellipse list (`.json`) or an image file, rescaled to
/// [0, 1].
pub fn load_phantom(source: &str, size: usize) -> Result<Image> {
    if source == "shepp-logan" {
        return Ok(shepp_logan(size)?);
    }
    let path = Path::new(source);
    let img = if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        let spec: EllipsePhantomSpec = serde_json::from_str(&text)
            .with_context(|| format!("parsing ellipse phantom {source}"))?;
        spec.rasterize(size)?
    } else {
        read_image(path)?
    };
    if img.dims() != [size, size] {
        bail!(
            "phantom {source} is {}x{}, geometry expects {size}x{size}",
            img.rows(),
            img.cols()
        );
    }
    Ok(normalize(&img).image)
}

pub struct Simulated {
    pub counts: Vec<f64>,
    pub sinogram: Sinogram,
}

pub fn simulate(
    phantom: &Image,
    geom: &FanBeamGeometry,
    intensity: f64,
    background: &Background,
    seed: u64,
) -> Result<Simulated> {
    let counts = simulate_counts(phantom, geom, intensity, background, RngSeed(seed))?;
    let sinogram = counts_to_sinogram(&counts)?;
    Ok(Simulated {
        counts: counts.counts,
        sinogram,
    })
}

/// Writes ground truth, counts and post-log sinogram into `dir` and returns
/// their paths.
pub fn write_simulation(
    dir: &Path,
    phantom: &Image,
    sim: &Simulated,
    geom: &FanBeamGeometry,
    intensity: f64,
    background: &Background,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let dims = sim.sinogram.dims();
    let tag = |mut s: Sidecar| {
        s.geometry = Some(geom.clone());
        s.intensity = Some(intensity);
        s.seed = Some(seed);
        s.background = Some(background.clone());
        s
    };
    let files = [
        (GROUND_TRUTH_FILE, phantom.dims(), phantom.data(), "ground truth"),
        (COUNTS_FILE, dims, &sim.counts[..], "photon counts"),
        (SINOGRAM_FILE, dims, sim.sinogram.data(), "post-log sinogram"),
    ];
    let mut written = Vec::new();
    for (name, dims, data, description) in files {
        let path = dir.join(name);
        write_raw(&path, data, &tag(Sidecar::new(dims, data, description)))?;
        written.push(path.clone());
        written.push(tomoforge::io::sidecar_path(&path));
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy)]
pub struct MethodSettings<'a> {
    pub fbp: &'a FilterSpec,
    pub tv: &'a TvConfig,
    pub proposed: &'a ReconConfig,
}

#[derive(Debug, Clone, Default)]
pub struct Curves {
    pub iterations: Vec<usize>,
    pub loss: Vec<f64>,
    pub psnr: Option<Vec<f64>>,
    pub ssim: Option<Vec<f64>>,
}

impl Curves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,psnr,ssim\n");
        for (k, (&it, &loss)) in self.iterations.iter().zip(&self.loss).enumerate() {
            let p = self.psnr.as_ref().map_or(String::new(), |c| fmt_num(c[k]));
            let s = self.ssim.as_ref().map_or(String::new(), |c| fmt_num(c[k]));
            writeln!(out, "{it},{},{p},{s}", fmt_num(loss)).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub method: &'static str,
    pub iterations: usize,
    pub seconds_total: f64,
    pub seconds_per_iteration: f64,
}

pub struct MethodOutput {
    pub image: Image,
    pub curves: Option<Curves>,
    pub timing: Timing,
    /// Resolved settings, echoed next to the result.
    pub echo: serde_json::Value,
}

pub fn run_method(
    method: Method,
    y: &Sinogram,
    geom: &FanBeamGeometry,
    settings: MethodSettings<'_>,
    ground_truth: Option<&Image>,
) -> Result<MethodOutput> {
    let start = Instant::now();
    let timing = |iterations: usize, seconds_per_iteration: f64| Timing {
        method: method.name(),
        iterations,
        seconds_total: start.elapsed().as_secs_f64(),
        seconds_per_iteration,
    };
    match method {
        Method::Fbp => {
            let image = fbp_reconstruct(y, geom, settings.fbp)?;
            Ok(MethodOutput {
                image,
                curves: None,
                timing: timing(0, 0.0),
                echo: serde_json::json!({ "method": "fbp", "fbp": settings.fbp }),
            })
        }
        Method::Tv => {
            let init = fbp_reconstruct(y, geom, settings.fbp)?;
            let result = tv_reconstruct_with_history(y, geom, settings.tv, &init)?;
            let iterations = settings.tv.iterations;
            let curves = Curves {
                iterations: (0..result.objective.len()).collect(),
                loss: result.objective,
                psnr: None,
                ssim: None,
            };
            let t = timing(iterations, 0.0);
            let per = if iterations > 0 {
                t.seconds_total / iterations as f64
            } else {
                0.0
            };
            Ok(MethodOutput {
                image: result.image,
                curves: Some(curves),
                timing: Timing {
                    seconds_per_iteration: per,
                    ..t
                },
                echo: serde_json::json!({ "method": "tv", "fbp": settings.fbp, "tv": settings.tv }),
            })
        }
        Method::Proposed => {
            let cfg = settings.proposed;
            let report = reconstruct(y, geom, settings.fbp, cfg, ground_truth)?;
            Ok(MethodOutput {
                image: report.final_image,
                curves: Some(Curves {
                    iterations: report.curve_iterations,
                    loss: report.loss_curve,
                    psnr: report.psnr_curve,
                    ssim: report.ssim_curve,
                }),
                timing: timing(cfg.iterations, report.seconds_per_iteration),
                echo: serde_json::json!({
                    "method": "proposed",
                    "fbp": settings.fbp,
                    "proposed": cfg,
                    "best_iteration": report.best_iteration,
                }),
            })
        }
    }
}

/// Writes `<stem>.f32` (+ sidecar), `<stem>_curves.csv`, `<stem>_config.json`
/// and `<stem>_timing.json` into `dir`. Returns the written paths; timing
/// is listed last.
pub fn write_method_output(
    dir: &Path,
    stem: &str,
    out: &MethodOutput,
    intensity: Option<f64>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let image_path = dir.join(format!("{stem}.f32"));
    let mut sidecar = Sidecar::new(out.image.dims(), out.image.data(), out.timing.method);
    sidecar.intensity = intensity;
    write_raw(&image_path, out.image.data(), &sidecar)?;
    written.push(image_path.clone());
    written.push(tomoforge::io::sidecar_path(&image_path));
    if let Some(curves) = &out.curves {
        let path = dir.join(format!("{stem}_curves.csv"));
        write_file(&path, curves.to_csv())?;
        written.push(path);
    }
    let path = dir.join(format!("{stem}_config.json"));
    write_file(&path, serde_json::to_string_pretty(&out.echo)? + "\n")?;
    written.push(path);
    let path = dir.join(format!("{stem}_timing.json"));
    write_file(&path, serde_json::to_string_pretty(&out.timing)? + "\n")?;
    written.push(path);
    Ok(written)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip decimal, `inf` for infinities.
pub fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Compact intensity label such as `1e4` or `5e4`.
pub fn fmt_intensity(v: f64) -> String {
    format!("{v:e}")
}

pub struct Quality {
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn quality(x_hat: &Image, truth: &Image) -> Result<Quality> {
    Ok(Quality {
        psnr_db: psnr(x_hat, truth)?,
        ssim: ssim(x_hat, truth, &SsimConfig::default())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_intensity(1e3), "1e3");
        assert_eq!(fmt_intensity(5e4), "5e4");
    }

    #[test]
    fn curves_csv_leaves_missing_columns_empty() {
        let c = Curves {
            iterations: vec![0, 2],
            loss: vec![1.5, 0.25],
            psnr: None,
            ssim: None,
        };
        assert_eq!(c.to_csv(), "iteration,loss,psnr,ssim\n0,1.5,,\n2,0.25,,\n");
    }

    #[test]
    fn phantom_sources() {
        let img = load_phantom("shepp-logan", 32).unwrap();
        assert_eq!(img.dims(), [32, 32]);
        assert!(load_phantom("shepp-logan-x.f32", 32).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disk.json");
        fs::write(
            &path,
            r#"{"ellipses": [{"center": [0, 0], "semi_axes": [0.5, 0.5], "rotation": 0, "intensity": 2}]}"#,
        )
        .unwrap();
        let disk = load_phantom(path.to_str().unwrap(), 16).unwrap();
        assert_eq!(disk.max(), 1.0);
        assert_eq!(disk.min(), 0.0);
    }
}
