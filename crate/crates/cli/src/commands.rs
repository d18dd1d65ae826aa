use std::path::{Path, PathBuf};
use std::time::Instant;

use dasr_core::checkpoint::Checkpoint;
use dasr_core::difficulty::{
    build_dataset, eight_bit_pair, generate_mask, list_pngs, load_store, save_store, train_dim, ClassHistogram,
    DifficultyClassifier, DimModel, LabeledPatch, TrainLog,
};
use dasr_core::image::{read_png, rgb_to_ycbcr, write_png, ycbcr_to_rgb, PlanarImage, Plane, RgbImage};
use dasr_core::metrics::{psnr, ssim};
use dasr_core::patching::{aligned_pairs, PATCH_SIZE};
use dasr_core::resample::{crop_to_multiple, degrade, pb_upscale};
use dasr_core::srnet::{
    super_resolve, train_cb, Branch, CbModel, CbTrainLog, ComplexBranch, Routing, RoutingReport, SrOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::manifest;
use crate::report::{create_dir, write_json, write_json_lines, BenchmarkReport, ReportRow, SplitReport, SplitSide};
use crate::Failure;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub store: PathBuf,
    pub images: usize,
    pub patches: usize,
    pub skipped: Vec<String>,
    pub histogram: ClassHistogram,
    pub degenerate: bool,
    pub manifest_warning: Option<String>,
    pub config: RunConfig,
}

pub fn build_dataset_cmd(cfg: &RunConfig) -> Result<DatasetSummary, Failure> {
    cfg.validate()?;
    let dir = cfg
        .hr_dir
        .as_deref()
        .ok_or_else(|| Failure::input("hr_dir is not set"))?;
    if !dir.is_dir() {
        return Err(Failure::input(format!("{} is not a directory", dir.display())));
    }
    let report = build_dataset(dir, cfg.scale, &cfg.bins()?, &cfg.kernel(), cfg.max_images)?;
    let manifest_warning = manifest::verify(dir, list_pngs(dir)?.len());
    let store = cfg.store_path();
    if let Some(parent) = store.parent() {
        create_dir(parent)?;
    }
    save_store(&store, &report.patches)?;
    let summary = DatasetSummary {
        store,
        images: report.images,
        patches: report.patches.len(),
        skipped: report
            .skipped
            .iter()
            .map(|(p, e)| format!("{}: {e}", p.display()))
            .collect(),
        degenerate: report.histogram.is_degenerate(),
        histogram: report.histogram,
        manifest_warning,
        config: cfg.clone(),
    };
    write_json(&cfg.output_dir.join(format!("histogram_x{}.json", cfg.scale)), &summary)?;
    Ok(summary)
}

/// Training log path next to a checkpoint: `dim_x2.ckpt` → `dim_x2.log.jsonl`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.jsonl")
}

fn load_patches(cfg: &RunConfig) -> Result<Vec<LabeledPatch>, Failure> {
    let path = cfg.store_path();
    if !path.exists() {
        return Err(Failure::missing(format!(
            "patch store {} not found; run build-dataset first",
            path.display()
        )));
    }
    let patches = load_store(&path)?;
    if let Some(first) = patches.first() {
        let s = first.pair.scale()?;
        if s != cfg.scale {
            return Err(Failure::mismatch(format!(
                "patch store is ×{s}, config asks for ×{}",
                cfg.scale
            )));
        }
    }
    Ok(patches)
}

pub fn load_dim(cfg: &RunConfig) -> Result<(DimModel, usize), Failure> {
    let path = cfg.dim_path();
    if !path.exists() {
        return Err(Failure::missing(format!(
            "difficulty checkpoint {} not found; run train-dim first",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    let model = DimModel::from_checkpoint(&ckpt)?;
    if model.meta.scale != cfg.scale {
        return Err(Failure::mismatch(format!(
            "{} was trained for ×{}, config asks for ×{}",
            path.display(),
            model.meta.scale,
            cfg.scale
        )));
    }
    Ok((model, ckpt.parameter_bytes()))
}

pub fn load_cb(cfg: &RunConfig) -> Result<(CbModel, usize), Failure> {
    let path = cfg.cb_path();
    if !path.exists() {
        return Err(Failure::missing(format!(
            "complex-branch checkpoint {} not found; run train-cb first",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    let model = CbModel::from_checkpoint(&ckpt)?;
    if model.config().scale != cfg.scale {
        return Err(Failure::mismatch(format!(
            "{} was trained for ×{}, config asks for ×{}",
            path.display(),
            model.config().scale,
            cfg.scale
        )));
    }
    Ok((model, ckpt.parameter_bytes()))
}

pub fn train_dim_cmd(cfg: &RunConfig) -> Result<TrainLog, Failure> {
    cfg.validate()?;
    let patches = load_patches(cfg)?;
    let (model, log) = train_dim(&patches, cfg.scale, cfg.bins()?, &cfg.dim_hyper())?;
    let path = cfg.dim_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    model.to_checkpoint()?.save(&path)?;
    write_json_lines(&log_path(&path), &log.epochs)?;
    Ok(log)
}

pub fn train_cb_cmd(cfg: &RunConfig) -> Result<CbTrainLog, Failure> {
    cfg.validate()?;
    let (dim, _) = load_dim(cfg)?;
    let patches = load_patches(cfg)?;
    let (model, log) = train_cb(&patches, &dim, cfg.cb_config(), cfg.kernel(), &cfg.cb_hyper())?;
    let path = cfg.cb_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    model.to_checkpoint()?.save(&path)?;
    write_json_lines(&log_path(&path), &log.epochs)?;
    Ok(log)
}

/// Trained models available to a command. Either may be absent.
#[derive(Clone, Copy, Default)]
pub struct Models<'a> {
    pub dim: Option<&'a dyn DifficultyClassifier>,
    pub cb: Option<&'a dyn ComplexBranch>,
}

impl<'a> Models<'a> {
    fn require(&self, mode: Mode) -> Result<(), Failure> {
        if matches!(mode, Mode::Cb | Mode::Adaptive) && self.cb.is_none() {
            return Err(Failure::missing(format!("mode {} needs a complex branch", mode.name())));
        }
        if mode == Mode::Adaptive && self.dim.is_none() {
            return Err(Failure::missing("mode adaptive needs a difficulty identifier"));
        }
        Ok(())
    }
}

struct LoadedModels {
    dim: Option<(DimModel, usize)>,
    cb: Option<(CbModel, usize)>,
}

impl LoadedModels {
    fn for_mode(cfg: &RunConfig, mode: Mode) -> Result<Self, Failure> {
        Ok(LoadedModels {
            dim: if mode == Mode::Adaptive {
                Some(load_dim(cfg)?)
            } else {
                None
            },
            cb: if matches!(mode, Mode::Cb | Mode::Adaptive) {
                Some(load_cb(cfg)?)
            } else {
                None
            },
        })
    }

    fn models(&self) -> Models<'_> {
        Models {
            dim: self.dim.as_ref().map(|(m, _)| m as &dyn DifficultyClassifier),
            cb: self.cb.as_ref().map(|(m, _)| m as &dyn ComplexBranch),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SrArtifacts {
    pub input: PathBuf,
    pub output: PathBuf,
    pub heatmap: PathBuf,
    pub report: PathBuf,
    pub scale: usize,
    pub mode: Mode,
    pub input_dims: (usize, usize),
    pub output_dims: (usize, usize),
    pub plain_fraction: f64,
    pub routing: RoutingReport,
    pub config: RunConfig,
}

/// Per-cell branch map at output resolution: PB white, CB black.
pub fn routing_heatmap(routing: &RoutingReport, width: usize, height: usize, scale: usize) -> Plane {
    let side = PATCH_SIZE * scale;
    let mut map = Plane::filled(width, height, 255.0);
    for cell in &routing.cells {
        if cell.branch == Branch::Complex {
            let (x0, y0) = (cell.col as usize * side, cell.row as usize * side);
            for y in y0..(y0 + side).min(height) {
                for x in x0..(x0 + side).min(width) {
                    map.set(x, y, 0.0);
                }
            }
        }
    }
    map
}

/// Super-resolves one PNG and writes the image, the routing heatmap and a
/// routing report into the output directory.
pub fn super_resolve_cmd(cfg: &RunConfig, input: &Path, mode: Mode) -> Result<SrArtifacts, Failure> {
    cfg.validate()?;
    let mode = if mode == Mode::Bicubic { Mode::Pb } else { mode };
    let loaded = LoadedModels::for_mode(cfg, mode)?;
    let models = loaded.models();
    let lr = rgb_to_ycbcr(&read_png(input)?);
    let opts = SrOptions {
        scale: cfg.scale,
        kernel: cfg.kernel(),
        routing: mode.routing(),
        margin: cfg.context_margin,
    };
    let out = super_resolve(&lr, models.dim, models.cb, &opts).map_err(|e| match e {
        dasr_core::Error::InvalidArgument(m) => Failure::mismatch(m),
        other => other.into(),
    })?;
    let (w, h) = (out.image.width(), out.image.height());
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    create_dir(&cfg.output_dir)?;
    let base = cfg.output_dir.join(format!("{stem}_x{}_{}", cfg.scale, mode.name()));
    let output = base.with_extension("png");
    write_png(&output, &ycbcr_to_rgb(&out.image)?)?;
    let heatmap = PathBuf::from(format!("{}_routing.png", base.display()));
    write_png(
        &heatmap,
        &RgbImage::from_gray(&routing_heatmap(&out.routing, w, h, cfg.scale)),
    )?;
    let report = PathBuf::from(format!("{}_routing.json", base.display()));
    let artifacts = SrArtifacts {
        input: input.to_path_buf(),
        output,
        heatmap,
        report: report.clone(),
        scale: cfg.scale,
        mode,
        input_dims: (lr.width(), lr.height()),
        output_dims: (w, h),
        plain_fraction: out.routing.plain_fraction(),
        routing: out.routing,
        config: cfg.clone(),
    };
    write_json(&report, &artifacts)?;
    Ok(artifacts)
}

/// Y planes of every PNG in `dir`, sorted by file name.
pub fn load_benchmark(dir: &Path, max_images: Option<usize>) -> Result<Vec<(String, Plane)>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::input(format!("{} is not a directory", dir.display())));
    }
    let mut files = list_pngs(dir)?;
    manifest::verify(dir, files.len());
    if let Some(n) = max_images {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Failure::input(format!("no PNG files in {}", dir.display())));
    }
    files
        .par_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, rgb_to_ycbcr(&read_png(p)?).y))
        })
        .collect()
}

fn crop_plane_to_multiple(y: &Plane, scale: usize) -> Result<Plane, Failure> {
    Ok(crop_to_multiple(&PlanarImage::luma(y.clone()), scale)?.y)
}

struct PatchScore {
    row: ReportRow,
    pb_psnr: f64,
    cb_psnr: Option<f64>,
}

fn score_patches(
    name: &str,
    hr_y: &Plane,
    cfg: &RunConfig,
    mode: Mode,
    models: Models,
) -> Result<Vec<PatchScore>, Failure> {
    let (s, kernel) = (cfg.scale, cfg.kernel());
    let (lr, hr) = eight_bit_pair(&crop_plane_to_multiple(hr_y, s)?, s, &kernel)?;
    let pairs = aligned_pairs(&lr, &hr, s, PATCH_SIZE, name)?;
    if pairs.is_empty() {
        log::warn!("{name}: smaller than one {PATCH_SIZE}×{PATCH_SIZE} LR patch, no patches scored");
        return Ok(Vec::new());
    }
    let lrs: Vec<Plane> = pairs.iter().map(|p| p.lr.clone()).collect();
    let pb: Vec<Plane> = lrs
        .iter()
        .map(|p| pb_upscale(p, s, &kernel))
        .collect::<dasr_core::Result<_>>()?;
    let cb = match (mode, models.cb) {
        (Mode::Cb | Mode::Adaptive, Some(cb)) => Some(cb.upscale(&lrs)?),
        _ => None,
    };
    let plain: Vec<bool> = match (mode, models.dim) {
        (Mode::Adaptive, Some(dim)) => dim.classify(&lrs)?.iter().map(|p| generate_mask(p).0).collect(),
        (Mode::Cb, _) => vec![false; lrs.len()],
        _ => vec![true; lrs.len()],
    };
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let pb_psnr = psnr(&pb[i], &pair.hr, 0)?;
            let cb_psnr = cb.as_ref().map(|c| psnr(&c[i], &pair.hr, 0)).transpose()?;
            let (chosen, chosen_psnr) = match (plain[i], &cb, cb_psnr) {
                (false, Some(c), Some(v)) => (&c[i], v),
                _ => (&pb[i], pb_psnr),
            };
            Ok(PatchScore {
                row: ReportRow {
                    file: format!("{name}:r{}c{}", pair.row, pair.col),
                    psnr_db: chosen_psnr,
                    ssim: ssim(chosen, &pair.hr, 0)?,
                    pb_patch_fraction: if plain[i] { 1.0 } else { 0.0 },
                },
                pb_psnr,
                cb_psnr,
            })
        })
        .collect()
}

fn whole_image_row(name: &str, hr_y: &Plane, cfg: &RunConfig) -> Result<ReportRow, Failure> {
    let (s, kernel) = (cfg.scale, cfg.kernel());
    let (lr, hr) = eight_bit_pair(&crop_plane_to_multiple(hr_y, s)?, s, &kernel)?;
    let sr = pb_upscale(&lr, s, &kernel)?.quantized();
    Ok(ReportRow {
        file: name.to_string(),
        psnr_db: psnr(&sr, &hr, s)?,
        ssim: ssim(&sr, &hr, s)?,
        pb_patch_fraction: 1.0,
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn split(scores: &[PatchScore], threshold_db: f64) -> SplitReport {
    let side = |easy: bool| {
        let part: Vec<&PatchScore> = scores.iter().filter(|p| (p.pb_psnr > threshold_db) == easy).collect();
        let has_cb = !part.is_empty() && part.iter().all(|p| p.cb_psnr.is_some());
        SplitSide {
            count: part.len(),
            psnr_db: mean_of(part.iter().map(|p| p.row.psnr_db)),
            pb_psnr_db: mean_of(part.iter().map(|p| p.pb_psnr)),
            cb_psnr_db: if has_cb {
                mean_of(part.iter().filter_map(|p| p.cb_psnr))
            } else {
                None
            },
        }
    };
    SplitReport {
        threshold_db,
        easy: side(true),
        hard: side(false),
    }
}

/// Scores HR luma planes under `mode`. `bicubic` is the whole-image protocol
/// (rounded output, shave = scale, one row per image); the other modes score
/// every full 48×48 LR patch with shave 0, one row per patch, and add the
/// easy/hard split at `cfg.split_threshold_db`.
pub fn evaluate_images(
    dataset: &str,
    images: &[(String, Plane)],
    cfg: &RunConfig,
    mode: Mode,
    models: Models,
) -> Result<BenchmarkReport, Failure> {
    cfg.validate()?;
    models.require(mode)?;
    if images.is_empty() {
        return Err(Failure::input(format!("{dataset}: no images to evaluate")));
    }
    let start = Instant::now();
    let (rows, split_report, shave) = if mode == Mode::Bicubic {
        let rows = images
            .par_iter()
            .map(|(name, y)| whole_image_row(name, y, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        (rows, None, cfg.scale)
    } else {
        let per_image = images
            .par_iter()
            .map(|(name, y)| score_patches(name, y, cfg, mode, models))
            .collect::<Result<Vec<_>, _>>()?;
        let scores: Vec<PatchScore> = per_image.into_iter().flatten().collect();
        if scores.is_empty() {
            return Err(Failure::input(format!(
                "{dataset}: no image holds a full {PATCH_SIZE}×{PATCH_SIZE} LR patch"
            )));
        }
        let split_report = split(&scores, cfg.split_threshold_db);
        (scores.into_iter().map(|p| p.row).collect(), Some(split_report), 0)
    };
    let seconds_per_frame = start.elapsed().as_secs_f64() / images.len() as f64;
    Ok(BenchmarkReport {
        dataset: dataset.to_string(),
        scale: cfg.scale,
        mode: mode.name().to_string(),
        protocol: if mode == Mode::Bicubic { "whole-image" } else { "patch" }.to_string(),
        shave,
        images: images.len(),
        mean: ReportRow::mean(&rows),
        rows,
        split: split_report,
        seconds_per_frame,
        kernel: cfg.kernel(),
        config: cfg.clone(),
    })
}

/// Evaluates `bench_dir` and writes the JSON and CSV reports.
pub fn evaluate_cmd(cfg: &RunConfig, mode: Mode) -> Result<(BenchmarkReport, PathBuf, PathBuf), Failure> {
    cfg.validate()?;
    let dir = cfg
        .bench_dir
        .as_deref()
        .ok_or_else(|| Failure::input("bench_dir is not set"))?;
    let loaded = LoadedModels::for_mode(cfg, mode)?;
    let images = load_benchmark(dir, cfg.max_images)?;
    let report = evaluate_images(&manifest::dataset_name(dir), &images, cfg, mode, loaded.models())?;
    let (json, csv) = report.write(&cfg.output_dir)?;
    Ok((report, json, csv))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingReport {
    pub dataset: String,
    pub scale: usize,
    pub routing: Routing,
    pub frames: usize,
    pub warmup_seconds: f64,
    pub seconds: Vec<f64>,
    pub median_seconds_per_frame: f64,
    pub dim_parameter_bytes: Option<usize>,
    pub cb_parameter_bytes: Option<usize>,
    pub parameter_bytes: usize,
    pub parameter_megabytes: f64,
    pub config: RunConfig,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times full-image super-resolution of each LR frame after one untimed
/// warm-up pass. Returns the warm-up time and per-frame seconds.
pub fn time_frames(frames: &[PlanarImage], models: Models, opts: &SrOptions) -> Result<(f64, Vec<f64>), Failure> {
    let first = frames.first().ok_or_else(|| Failure::input("no frames to time"))?;
    let t = Instant::now();
    super_resolve(first, models.dim, models.cb, opts)?;
    let warmup = t.elapsed().as_secs_f64();
    let seconds = frames
        .iter()
        .map(|f| {
            let t = Instant::now();
            super_resolve(f, models.dim, models.cb, opts)?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok((warmup, seconds))
}

/// Median seconds per frame of full-color super-resolution over `bench_dir`.
/// Uses whichever checkpoints exist: both → adaptive, CB only → complex,
/// none → plain bicubic.
pub fn bench_cmd(cfg: &RunConfig) -> Result<TimingReport, Failure> {
    cfg.validate()?;
    let dir = cfg
        .bench_dir
        .as_deref()
        .ok_or_else(|| Failure::input("bench_dir is not set"))?;
    let cb = if cfg.cb_path().exists() {
        Some(load_cb(cfg)?)
    } else {
        None
    };
    let dim = if cb.is_some() && cfg.dim_path().exists() {
        Some(load_dim(cfg)?)
    } else {
        None
    };
    let routing = match (&dim, &cb) {
        (Some(_), Some(_)) => Routing::Adaptive,
        (None, Some(_)) => Routing::Complex,
        _ => Routing::Plain,
    };
    let loaded = LoadedModels { dim, cb };
    let mut files = list_pngs(dir)?;
    if let Some(n) = cfg.max_images {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Failure::input(format!("no PNG files in {}", dir.display())));
    }
    let kernel = cfg.kernel();
    let frames = files
        .iter()
        .map(|p| {
            let hr = crop_to_multiple(&rgb_to_ycbcr(&read_png(p)?), cfg.scale)?;
            Ok(degrade(&hr, cfg.scale, &kernel)?.try_map_planes(|p| Ok(p.quantized()))?)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let opts = SrOptions {
        scale: cfg.scale,
        kernel,
        routing,
        margin: cfg.context_margin,
    };
    let (warmup_seconds, seconds) = time_frames(&frames, loaded.models(), &opts)?;
    let dim_parameter_bytes = loaded.dim.as_ref().map(|(_, b)| *b);
    let cb_parameter_bytes = loaded.cb.as_ref().map(|(_, b)| *b);
    let parameter_bytes = dim_parameter_bytes.unwrap_or(0) + cb_parameter_bytes.unwrap_or(0);
    let report = TimingReport {
        dataset: manifest::dataset_name(dir),
        scale: cfg.scale,
        routing,
        frames: frames.len(),
        warmup_seconds,
        median_seconds_per_frame: median(&seconds),
        seconds,
        dim_parameter_bytes,
        cb_parameter_bytes,
        parameter_bytes,
        parameter_megabytes: parameter_bytes as f64 / 1e6,
        config: cfg.clone(),
    };
    write_json(
        &cfg.output_dir
            .join(format!("bench_{}_x{}.json", report.dataset, cfg.scale)),
        &report,
    )?;
    Ok(report)
}
