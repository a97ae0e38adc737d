//! Every configured method at every intensity on every phantom.
//!
//! Layout of the report directory:
//! * `results.csv`: `phantom,method,intensity,psnr_db,ssim`
//! * `data/<phantom>_<intensity>/`: simulated inputs
//! * `runs/<phantom>_<intensity>/`: reconstructions, curves, config echoes
//! * `timing.json`: seconds per run and per iteration
//! * `manifest.json`: config, artifact list and failures

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tomoforge::metrics::psnr;
use tomoforge::tv::TvConfig;
use tomoforge::{FanBeamGeometry, Image, Sinogram};

use crate::config::{Method, RunConfig};
use crate::pipeline::{
    fmt_intensity, fmt_num, load_phantom, quality, run_method, simulate, write_file,
    write_method_output, write_simulation, MethodOutput, MethodSettings, Timing,
};
use crate::BenchmarkArgs;

pub const RESULTS_HEADER: &str = "phantom,method,intensity,psnr_db,ssim";
pub const THREADS_ENV: &str = "TOMOFORGE_THREADS";

struct Case {
    label: String,
    intensity: f64,
    truth: Image,
    sinogram: Sinogram,
}

#[derive(Serialize)]
struct Failure {
    phantom: String,
    method: Option<&'static str>,
    intensity: f64,
    error: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    geometry: &'a FanBeamGeometry,
    results: String,
    timing: String,
    artifacts: Vec<String>,
    failures: Vec<Failure>,
}

struct CellOutcome {
    row: String,
    artifacts: Vec<PathBuf>,
    timing: Timing,
}

fn phantom_label(source: &str) -> String {
    Path::new(source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| source.to_string())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

/// TV over the configured weight grid, keeping the best PSNR.
fn tv_grid(
    case: &Case,
    geom: &FanBeamGeometry,
    cfg: &RunConfig,
    settings: MethodSettings<'_>,
) -> Result<MethodOutput> {
    let mut best: Option<(f64, MethodOutput)> = None;
    let mut scores = Vec::new();
    for &lambda in &cfg.benchmark.tv_lambdas {
        let tv = TvConfig {
            lambda,
            ..cfg.method.tv
        };
        let out = run_method(
            Method::Tv,
            &case.sinogram,
            geom,
            MethodSettings { tv: &tv, ..settings },
            None,
        )?;
        let score = psnr(&out.image, &case.truth)?;
        scores.push(serde_json::json!({ "lambda": lambda, "psnr_db": fmt_num(score) }));
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, out));
        }
    }
    let (_, mut out) = best.expect("grid is not empty");
    out.echo["lambda_grid"] = serde_json::Value::Array(scores);
    Ok(out)
}

fn run_cell(
    case: &Case,
    method: Method,
    geom: &FanBeamGeometry,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<CellOutcome> {
    let proposed = cfg.method.proposed.resolve(true);
    let settings = MethodSettings {
        fbp: &cfg.method.fbp,
        tv: &cfg.method.tv,
        proposed: &proposed,
    };
    let result = match method {
        Method::Tv => tv_grid(case, geom, cfg, settings)?,
        _ => run_method(method, &case.sinogram, geom, settings, Some(&case.truth))?,
    };
    let q = quality(&result.image, &case.truth)?;
    let dir = out_dir
        .join("runs")
        .join(format!("{}_{}", case.label, fmt_intensity(case.intensity)));
    let artifacts = write_method_output(&dir, method.name(), &result, Some(case.intensity))?;
    let row = format!(
        "{},{},{},{},{}",
        case.label,
        method.name(),
        fmt_intensity(case.intensity),
        fmt_num(q.psnr_db),
        fmt_num(q.ssim)
    );
    Ok(CellOutcome {
        row,
        artifacts,
        timing: result.timing,
    })
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

pub fn run(args: BenchmarkArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    if let Some(out) = args.common.out {
        cfg.io.out = Some(out);
    }
    if let Some(n) = args.iterations {
        cfg.method.proposed.iterations = n;
    }
    let Some(out_dir) = cfg.io.out.clone() else {
        crate::commands::usage_error(
            "benchmark",
            "the following required arguments were not provided:\n  --out <OUT>",
        );
    };
    cfg.validate()?;
    let geom = cfg.geometry.build()?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut failures = Vec::new();
    let mut artifacts = Vec::new();
    let mut cases = Vec::new();
    let sim = &cfg.simulator;
    for source in &cfg.benchmark.phantoms {
        let label = phantom_label(source);
        let truth = match load_phantom(source, cfg.geometry.size) {
            Ok(t) => t,
            Err(e) => {
                for &intensity in &cfg.benchmark.intensities {
                    failures.push(Failure {
                        phantom: label.clone(),
                        method: None,
                        intensity,
                        error: format!("{e:#}"),
                    });
                }
                continue;
            }
        };
        for &intensity in &cfg.benchmark.intensities {
            let dir = out_dir
                .join("data")
                .join(format!("{label}_{}", fmt_intensity(intensity)));
            let simulated = simulate(&truth, &geom, intensity, &sim.background, sim.seed)
                .and_then(|d| {
                    let files =
                        write_simulation(&dir, &truth, &d, &geom, intensity, &sim.background, sim.seed)?;
                    Ok((d, files))
                });
            match simulated {
                Ok((d, files)) => {
                    artifacts.extend(files);
                    cases.push(Case {
                        label: label.clone(),
                        intensity,
                        truth: truth.clone(),
                        sinogram: d.sinogram,
                    });
                }
                Err(e) => failures.push(Failure {
                    phantom: label.clone(),
                    method: None,
                    intensity,
                    error: format!("{e:#}"),
                }),
            }
        }
    }

    let mut methods = cfg.benchmark.methods.clone();
    methods.sort();
    methods.dedup();
    let cells: Vec<(&Case, Method)> = cases
        .iter()
        .flat_map(|c| methods.iter().map(move |&m| (c, m)))
        .collect();
    let outcomes: Vec<Result<CellOutcome>> = thread_pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(case, method)| run_cell(case, method, &geom, &cfg, &out_dir))
            .collect()
    });

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for ((case, method), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(cell) => {
                rows.push((case.label.clone(), *method, case.intensity, cell.row));
                artifacts.extend(cell.artifacts);
                timings.push(serde_json::json!({
                    "phantom": case.label,
                    "intensity": case.intensity,
                    "timing": cell.timing,
                }));
            }
            Err(e) => {
                log::error!("{} {} {}: {e:#}", case.label, method.name(), case.intensity);
                failures.push(Failure {
                    phantom: case.label.clone(),
                    method: Some(method.name()),
                    intensity: case.intensity,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.0, a.1)
            .cmp(&(&b.0, b.1))
            .then(a.2.total_cmp(&b.2))
    });
    let mut csv = String::from(RESULTS_HEADER);
    csv.push('\n');
    for (.., row) in &rows {
        writeln!(csv, "{row}").unwrap();
    }
    let results_path = out_dir.join("results.csv");
    write_file(&results_path, &csv)?;
    let timing_path = out_dir.join("timing.json");
    write_file(&timing_path, serde_json::to_string_pretty(&timings)? + "\n")?;

    let failed = !failures.is_empty();
    let manifest = Manifest {
        config: &cfg,
        geometry: &geom,
        results: relative(&results_path, &out_dir),
        timing: relative(&timing_path, &out_dir),
        artifacts: artifacts.iter().map(|p| relative(p, &out_dir)).collect(),
        failures,
    };
    write_file(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    print!("{csv}");
    if failed {
        eprintln!("benchmark: {} run(s) failed, see manifest.json", manifest.failures.len());
        Ok(ExitCode::FAILURE)
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
