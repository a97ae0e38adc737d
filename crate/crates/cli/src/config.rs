//! JSON run configuration. Every block is optional; missing fields take
//! their defaults and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tomoforge::dose::{Background, INTENSITY_PRESETS};
use tomoforge::fbp::FilterSpec;
use tomoforge::nn::{AdamWConfig, NetworkSpec};
use tomoforge::recon::{CheckpointMode, OptimizerKind, ReconConfig};
use tomoforge::tv::TvConfig;
use tomoforge::FanBeamGeometry;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub simulator: SimulatorConfig,
    pub method: MethodConfig,
    pub benchmark: BenchmarkConfig,
    pub io: IoConfig,
}

/// Square image with the default desk-scale fan-beam detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub size: usize,
    pub angles: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            size: 128,
            angles: 360,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<FanBeamGeometry> {
        Ok(FanBeamGeometry::desk(self.size, self.angles)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub phantom: String,
    pub intensity: Option<f64>,
    pub seed: u64,
    pub background: Background,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            phantom: "shepp-logan".into(),
            intensity: None,
            seed: 7,
            background: Background::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub fbp: FilterSpec,
    pub tv: TvConfig,
    pub proposed: ProposedConfig,
}

/// Training settings of the proposed method. Without an explicit
/// `checkpoint_mode`, runs with a ground truth select by PSNR and runs
/// without one select by loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposedConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_mode: Option<CheckpointMode>,
    pub curve_stride: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub network: NetworkSpec,
}

impl Default for ProposedConfig {
    fn default() -> Self {
        let base = ReconConfig::default();
        ProposedConfig {
            iterations: base.iterations,
            lr: base.lr,
            seed: base.seed,
            checkpoint_mode: None,
            curve_stride: base.curve_stride,
            optimizer: base.optimizer,
            weight_decay: AdamWConfig::default().weight_decay,
            network: base.network,
        }
    }
}

impl ProposedConfig {
    pub fn resolve(&self, has_ground_truth: bool) -> ReconConfig {
        let mode = self.checkpoint_mode.unwrap_or(if has_ground_truth {
            CheckpointMode::BestPsnr
        } else {
            CheckpointMode::BestLoss
        });
        ReconConfig {
            iterations: self.iterations,
            lr: self.lr,
            seed: self.seed,
            checkpoint_mode: mode,
            curve_stride: self.curve_stride,
            optimizer: self.optimizer,
            weight_decay: self.weight_decay,
            network: self.network,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fbp,
    Tv,
    Proposed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fbp, Method::Tv, Method::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Tv => "tv",
            Method::Proposed => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub phantoms: Vec<String>,
    pub intensities: Vec<f64>,
    pub methods: Vec<Method>,
    /// TV weights tried per cell; the one with the best PSNR is reported.
    pub tv_lambdas: Vec<f64>,
}

pub const DEFAULT_TV_LAMBDAS: [f64; 5] = [1e-2, 3e-2, 1e-1, 3e-1, 1.0];

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            phantoms: vec!["shepp-logan".into()],
            intensities: INTENSITY_PRESETS.to_vec(),
            methods: Method::ALL.to_vec(),
            tv_lambdas: DEFAULT_TV_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out: Option<PathBuf>,
    pub sinogram: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            anyhow::anyhow!("invalid config {} at `{}`: {}", path.display(), e.path(), e.inner())
        })?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Checks every block before any computation starts.
    pub fn validate(&self) -> Result<()> {
        self.geometry.build().context("geometry")?;
        if let Some(i) = self.simulator.intensity {
            if !(i > 0.0 && i.is_finite()) {
                bail!("simulator.intensity must be positive, got {i}");
            }
        }
        self.method.fbp.validate().context("method.fbp")?;
        self.method.tv.validate().context("method.tv")?;
        self.method
            .proposed
            .resolve(false)
            .validate()
            .context("method.proposed")?;
        let b = &self.benchmark;
        if b.phantoms.is_empty() || b.intensities.is_empty() || b.methods.is_empty() {
            bail!("benchmark needs at least one phantom, intensity and method");
        }
        if let Some(i) = b.intensities.iter().find(|i| !(**i > 0.0 && i.is_finite())) {
            bail!("benchmark.intensities must be positive, got {i}");
        }
        if b.tv_lambdas.is_empty() || b.tv_lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            bail!("benchmark.tv_lambdas must be a nonempty list of nonnegative values");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("cfg.json");
        fs::write(&path, text)?;
        RunConfig::load(&path)
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(parse("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse(r#"{"method": {"tv": {"lambda": 1.0, "lamda": 2.0}}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("method.tv"), "{msg}");
    }

    #[test]
    fn checkpoint_mode_follows_ground_truth_availability() {
        let p = ProposedConfig::default();
        assert_eq!(p.resolve(true).checkpoint_mode, CheckpointMode::BestPsnr);
        assert_eq!(p.resolve(false).checkpoint_mode, CheckpointMode::BestLoss);
        let fixed = ProposedConfig {
            checkpoint_mode: Some(CheckpointMode::BestLoss),
            ..p
        };
        assert_eq!(fixed.resolve(true).checkpoint_mode, CheckpointMode::BestLoss);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let cfg = parse(r#"{"method": {"proposed": {"lr": -1.0}}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = parse(r#"{"benchmark": {"intensities": []}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
