use std::path::{Path, PathBuf};

use dasr_core::difficulty::{DifficultyBins, DimHyper};
use dasr_core::resample::{check_scale, Border, KernelSpec};
use dasr_core::srnet::{CbConfig, CbHyper, Routing};
use dasr_core::tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything a run needs. Loaded from a flat JSON object; absent fields take
/// the defaults below. Echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scale: usize,
    /// HR training images (PNG).
    pub hr_dir: Option<PathBuf>,
    /// HR benchmark images (PNG) for `evaluate` and `bench`.
    pub bench_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub store: Option<PathBuf>,
    pub dim_checkpoint: Option<PathBuf>,
    pub cb_checkpoint: Option<PathBuf>,
    pub bins: [f64; 4],
    pub seed: u64,
    /// Extra LR context per patch at inference; 0 is plain tiling.
    pub context_margin: usize,
    pub antialias: bool,
    pub border: Border,
    pub max_images: Option<usize>,
    pub dim_epochs: usize,
    pub dim_batch_size: usize,
    pub cb_epochs: usize,
    pub cb_batch_size: usize,
    pub cb_features: usize,
    pub cb_blocks: usize,
    pub cb_upsample_channels: usize,
    pub patches_per_epoch: Option<usize>,
    pub learning_rate: f32,
    pub halve_every: usize,
    pub augment: bool,
    /// Bicubic PSNR separating the easy and hard halves of patch reports.
    pub split_threshold_db: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cb = CbConfig::new(2);
        RunConfig {
            scale: 2,
            hr_dir: None,
            bench_dir: None,
            output_dir: PathBuf::from("out"),
            store: None,
            dim_checkpoint: None,
            cb_checkpoint: None,
            bins: DifficultyBins::default().boundaries,
            seed: 0,
            context_margin: 0,
            antialias: true,
            border: Border::Replicate,
            max_images: None,
            dim_epochs: 20,
            dim_batch_size: 64,
            cb_epochs: 200,
            cb_batch_size: 64,
            cb_features: cb.features,
            cb_blocks: cb.blocks,
            cb_upsample_channels: cb.upsample_channels,
            patches_per_epoch: None,
            learning_rate: AdamConfig::default().lr,
            halve_every: 100,
            augment: true,
            split_threshold_db: 45.0,
        }
    }
}

/// Evaluation protocol selected with `--mode`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Whole-image degrade → bicubic upscale, shave = scale.
    Bicubic,
    /// Per-patch protocol, every patch through bicubic.
    Pb,
    /// Per-patch protocol, every patch through the complex branch.
    Cb,
    /// Per-patch protocol, routed by the difficulty identifier.
    Adaptive,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self, Failure> {
        match s.to_ascii_lowercase().as_str() {
            "bicubic" => Ok(Mode::Bicubic),
            "pb" => Ok(Mode::Pb),
            "cb" => Ok(Mode::Cb),
            "adaptive" => Ok(Mode::Adaptive),
            other => Err(Failure::input(format!(
                "unknown mode {other:?} (bicubic, pb, cb, adaptive)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bicubic => "bicubic",
            Mode::Pb => "pb",
            Mode::Cb => "cb",
            Mode::Adaptive => "adaptive",
        }
    }

    pub fn routing(self) -> Routing {
        match self {
            Mode::Bicubic | Mode::Pb => Routing::Plain,
            Mode::Cb => Routing::Complex,
            Mode::Adaptive => Routing::Adaptive,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        check_scale(self.scale).map_err(|e| Failure::input(e.to_string()))?;
        self.bins().map_err(|e| Failure::input(e.to_string()))?;
        let positive = [
            ("dim_batch_size", self.dim_batch_size),
            ("cb_batch_size", self.cb_batch_size),
            ("cb_features", self.cb_features),
            ("cb_upsample_channels", self.cb_upsample_channels),
            ("halve_every", self.halve_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Failure::input(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Failure::input("learning_rate must be a positive number"));
        }
        if self.context_margin > 48 {
            return Err(Failure::input("context_margin must not exceed the 48-pixel patch size"));
        }
        Ok(())
    }

    pub fn bins(&self) -> dasr_core::Result<DifficultyBins> {
        DifficultyBins::new(self.bins)
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            antialias: self.antialias,
            border: self.border,
            ..KernelSpec::default()
        }
    }

    pub fn store_path(&self) -> PathBuf {
        self.store
            .clone()
            .unwrap_or_else(|| self.output_dir.join(format!("patches_x{}.dps", self.scale)))
    }

    pub fn dim_path(&self) -> PathBuf {
        self.dim_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(format!("dim_x{}.ckpt", self.scale)))
    }

    pub fn cb_path(&self) -> PathBuf {
        self.cb_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(format!("cb_x{}.ckpt", self.scale)))
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn dim_hyper(&self) -> DimHyper {
        DimHyper {
            epochs: self.dim_epochs,
            batch_size: self.dim_batch_size,
            adam: self.adam(),
            halve_every: self.halve_every,
            seed: self.seed,
            augment: self.augment,
            ..DimHyper::default()
        }
    }

    pub fn cb_hyper(&self) -> CbHyper {
        CbHyper {
            epochs: self.cb_epochs,
            batch_size: self.cb_batch_size,
            adam: self.adam(),
            halve_every: self.halve_every,
            seed: self.seed,
            augment: self.augment,
            patches_per_epoch: self.patches_per_epoch,
        }
    }

    pub fn cb_config(&self) -> CbConfig {
        CbConfig {
            scale: self.scale,
            features: self.cb_features,
            blocks: self.cb_blocks,
            upsample_channels: self.cb_upsample_channels,
        }
    }
}
