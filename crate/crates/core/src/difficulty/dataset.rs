use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{label_patch, DifficultyBins, LabeledPatch, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::image::{read_png, rgb_to_ycbcr, Plane};
use crate::patching::{reflect_pad, tile, PatchPair, PATCH_SIZE};
use crate::resample::{check_scale, degrade_plane, KernelSpec};

/// The 8-bit benchmark degradation on a luma plane: the HR plane is rounded to
/// integers, downsampled, and the LR result rounded again.
pub fn eight_bit_pair(hr: &Plane, scale: usize, spec: &KernelSpec) -> Result<(Plane, Plane)> {
    let hr = hr.quantized();
    let lr = degrade_plane(&hr, scale, spec)?.quantized();
    Ok((lr, hr))
}

/// Turns one HR luma plane into 48×48 LR / (48s)² HR training pairs.
///
/// The HR plane is cropped to a multiple of `scale`, reflection-padded up to a
/// multiple of 48·scale and degraded as a whole, so the LR tiles line up with
/// the HR crops exactly and every LR pixel is covered.
pub fn prepare_training_pairs(hr_y: &Plane, source: &str, scale: usize, spec: &KernelSpec) -> Result<Vec<PatchPair>> {
    check_scale(scale)?;
    let (w, h) = ((hr_y.width() / scale) * scale, (hr_y.height() / scale) * scale);
    if w == 0 || h == 0 {
        return Err(Error::dim(format!(
            "image {:?} smaller than scale {scale}",
            hr_y.dims()
        )));
    }
    let cropped = hr_y.crop(0, 0, w, h)?;
    let block = PATCH_SIZE * scale;
    let padded = reflect_pad(&cropped, w.div_ceil(block) * block, h.div_ceil(block) * block);
    let (lr, hr) = eight_bit_pair(&padded, scale, spec)?;
    let (lr_patches, grid) = tile(&lr, PATCH_SIZE)?;
    lr_patches
        .into_iter()
        .zip(&grid.cells)
        .map(|(lr, c)| {
            Ok(PatchPair {
                lr,
                hr: hr.crop(c.x0 * scale, c.y0 * scale, block, block)?,
                source: source.to_string(),
                row: c.row,
                col: c.col,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: [usize; NUM_CLASSES],
    pub total: usize,
    pub fractions: [f64; NUM_CLASSES],
}

impl ClassHistogram {
    pub fn from_classes(classes: impl IntoIterator<Item = u8>) -> Self {
        let mut counts = [0usize; NUM_CLASSES];
        for c in classes {
            counts[(c as usize).clamp(1, NUM_CLASSES) - 1] += 1;
        }
        let total = counts.iter().sum::<usize>();
        let fractions = counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
        ClassHistogram {
            counts,
            total,
            fractions,
        }
    }

    /// True when some class holds under 1% of the patches.
    pub fn is_degenerate(&self) -> bool {
        self.fractions.iter().any(|f| *f < 0.01)
    }
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub patches: Vec<LabeledPatch>,
    pub histogram: ClassHistogram,
    pub images: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// PNG files directly inside `dir`, sorted by path.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Labels every 48×48 LR patch of every PNG in `hr_dir` (sorted by file name).
/// Unreadable images are skipped and reported. Output order is (image, cell).
pub fn build_dataset(
    hr_dir: &Path,
    scale: usize,
    bins: &DifficultyBins,
    spec: &KernelSpec,
    max_images: Option<usize>,
) -> Result<BuildReport> {
    check_scale(scale)?;
    bins.validate()?;
    let mut files = list_pngs(hr_dir)?;
    if let Some(n) = max_images {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Error::Dataset(format!("no PNG files in {}", hr_dir.display())));
    }
    let per_image: Vec<(PathBuf, Result<Vec<LabeledPatch>>)> = files
        .par_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let res = read_png(path).and_then(|rgb| {
                let y = rgb_to_ycbcr(&rgb).y;
                prepare_training_pairs(&y, &id, scale, spec)?
                    .into_iter()
                    .map(|pair| {
                        let class = label_patch(&pair, scale, bins, spec)?;
                        Ok(LabeledPatch { pair, class })
                    })
                    .collect()
            });
            (path.clone(), res)
        })
        .collect();

    let mut patches = Vec::new();
    let mut skipped = Vec::new();
    let mut images = 0;
    for (path, res) in per_image {
        match res {
            Ok(p) => {
                images += 1;
                patches.extend(p);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    if images == 0 {
        return Err(Error::Dataset(format!("no readable images in {}", hr_dir.display())));
    }
    let histogram = ClassHistogram::from_classes(patches.iter().map(|p| p.class));
    if histogram.is_degenerate() {
        log::warn!("class histogram is degenerate: {:?}", histogram.counts);
    }
    Ok(BuildReport {
        patches,
        histogram,
        images,
        skipped,
    })
}
