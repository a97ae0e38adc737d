use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use tomoforge::dose::Background;
use tomoforge::io::{read_image, read_raw_sinogram, read_sidecar};

use crate::config::RunConfig;
use crate::pipeline::{
    fmt_intensity, fmt_num, load_phantom, quality, run_method, simulate as simulate_data,
    write_method_output, write_simulation, MethodSettings,
};
use crate::{Cli, EvaluateArgs, ReconstructArgs, SimulateArgs};

pub const EVAL_HEADER: &str = "method,intensity,psnr_db,ssim";

pub fn usage_error(subcommand: &str, message: &str) -> ! {
    let mut cmd = Cli::command();
    let sub = cmd
        .find_subcommand_mut(subcommand)
        .expect("subcommand exists");
    sub.error(clap::error::ErrorKind::MissingRequiredArgument, message)
        .exit()
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig, subcommand: &str) -> PathBuf {
    flag.or_else(|| cfg.io.out.clone())
        .unwrap_or_else(|| usage_error(subcommand, "the following required arguments were not provided:\n  --out <OUT>"))
}

pub fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    if let Some(v) = args.phantom {
        cfg.simulator.phantom = v;
    }
    if let Some(v) = args.size {
        cfg.geometry.size = v;
    }
    if let Some(v) = args.angles {
        cfg.geometry.angles = v;
    }
    if args.intensity.is_some() {
        cfg.simulator.intensity = args.intensity;
    }
    if let Some(v) = args.seed {
        cfg.simulator.seed = v;
    }
    if let Some(v) = args.background {
        cfg.simulator.background = Background::Uniform(v);
    }
    let Some(intensity) = cfg.simulator.intensity else {
        usage_error(
            "simulate",
            "the following required arguments were not provided:\n  --intensity <INTENSITY>",
        );
    };
    let out = output_dir(args.common.out, &cfg, "simulate");
    cfg.validate()?;

    let geom = cfg.geometry.build()?;
    let phantom = load_phantom(&cfg.simulator.phantom, cfg.geometry.size)?;
    let sim = &cfg.simulator;
    let data = simulate_data(&phantom, &geom, intensity, &sim.background, sim.seed)?;
    let written = write_simulation(&out, &phantom, &data, &geom, intensity, &sim.background, sim.seed)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn reconstruct(args: ReconstructArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    let tv = &mut cfg.method.tv;
    let proposed = &mut cfg.method.proposed;
    if let Some(v) = args.iterations {
        tv.iterations = v;
        proposed.iterations = v;
    }
    if let Some(v) = args.lambda {
        tv.lambda = v;
    }
    if let Some(v) = args.lr {
        proposed.lr = v;
    }
    if let Some(v) = args.seed {
        proposed.seed = v;
    }
    if let Some(v) = args.checkpoint_mode {
        proposed.checkpoint_mode = Some(v.into());
    }
    if let Some(v) = args.curve_stride {
        proposed.curve_stride = v;
    }
    if args.sinogram.is_some() {
        cfg.io.sinogram = args.sinogram;
    }
    if args.ground_truth.is_some() {
        cfg.io.ground_truth = args.ground_truth;
    }
    let Some(sino_path) = cfg.io.sinogram.clone() else {
        usage_error(
            "reconstruct",
            "the following required arguments were not provided:\n  --sinogram <SINOGRAM>",
        );
    };
    let out = output_dir(args.common.out, &cfg, "reconstruct");
    cfg.validate()?;

    let (sino, sidecar) = read_raw_sinogram(&sino_path)?;
    let geom = match sidecar.geometry {
        Some(g) => g,
        None => cfg.geometry.build()?,
    };
    let truth = cfg
        .io
        .ground_truth
        .as_deref()
        .map(read_image)
        .transpose()?;
    let recon_cfg = cfg.method.proposed.resolve(truth.is_some());
    let settings = MethodSettings {
        fbp: &cfg.method.fbp,
        tv: &cfg.method.tv,
        proposed: &recon_cfg,
    };
    let result = run_method(args.method, &sino, &geom, settings, truth.as_ref())?;
    let written = write_method_output(&out, args.method.name(), &result, sidecar.intensity)?;
    for path in written {
        println!("{}", path.display());
    }
    log::info!(
        "{}: {:.4} s/iteration",
        args.method.name(),
        result.timing.seconds_per_iteration
    );
    Ok(ExitCode::SUCCESS)
}

/// One `method,intensity,psnr_db,ssim` row.
pub fn evaluation_row(method: &str, intensity: Option<f64>, psnr_db: f64, ssim: f64) -> String {
    let intensity = intensity.map(fmt_intensity).unwrap_or_default();
    format!("{method},{intensity},{},{}", fmt_num(psnr_db), fmt_num(ssim))
}

/// Appends `rows` to a CSV file, writing the header first if the file is
/// new or empty.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let empty = file.metadata()?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(header);
        text.push('\n');
    }
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    file.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let recon = read_image(&args.recon)?;
    let truth = read_image(&args.ground_truth)?;
    if recon.dims() != truth.dims() {
        bail!(
            "reconstruction is {:?} but ground truth is {:?}",
            recon.dims(),
            truth.dims()
        );
    }
    let sidecar = read_sidecar(&args.recon).ok();
    let method = args
        .method
        .or_else(|| sidecar.as_ref().map(|s| s.description.clone()))
        .filter(|m| !m.is_empty())
        .or_else(|| {
            args.recon
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_default();
    let intensity = args.intensity.or(sidecar.and_then(|s| s.intensity));
    let q = quality(&recon, &truth)?;
    let row = evaluation_row(&method, intensity, q.psnr_db, q.ssim);
    println!("{EVAL_HEADER}\n{row}");
    if let Some(csv) = &args.csv {
        append_csv(csv, EVAL_HEADER, &[row])?;
    }
    Ok(ExitCode::SUCCESS)
}
