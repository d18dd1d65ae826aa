use serde::{Deserialize, Serialize};

use super::ComplexBranch;
use crate::difficulty::{generate_mask, DifficultyClassifier, ProbVector};
use crate::error::{Error, Result};
use crate::image::{PlanarImage, Plane};
use crate::patching::{stitch, tile_with_margin, PATCH_SIZE};
use crate::resample::{check_scale, pb_upscale, KernelSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// Per-patch choice made by the difficulty identifier.
    #[default]
    Adaptive,
    /// Every patch through the complex branch.
    Complex,
    /// Every patch through bicubic.
    Plain,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SrOptions {
    pub scale: usize,
    pub kernel: KernelSpec,
    pub routing: Routing,
    /// LR context added around each patch before either branch runs.
    pub margin: usize,
}

impl SrOptions {
    pub fn new(scale: usize) -> Self {
        SrOptions {
            scale,
            kernel: KernelSpec::default(),
            routing: Routing::Adaptive,
            margin: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plain,
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedCell {
    pub row: u32,
    pub col: u32,
    pub branch: Branch,
    /// Predicted difficulty class, when the identifier was consulted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs: Option<[f32; 5]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<RoutedCell>,
}

impl RoutingReport {
    pub fn plain_count(&self) -> usize {
        self.cells.iter().filter(|c| c.branch == Branch::Plain).count()
    }

    pub fn plain_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.plain_count() as f64 / self.cells.len() as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct SrOutput {
    pub image: PlanarImage,
    pub routing: RoutingReport,
}

fn core_of(patch: &Plane, margin: usize) -> Result<Plane> {
    if margin == 0 {
        Ok(patch.clone())
    } else {
        patch.crop(margin, margin, PATCH_SIZE, PATCH_SIZE)
    }
}

/// Tiles the LR luma, routes each patch to one branch, reassembles the
/// result and upscales chroma bicubically.
pub fn super_resolve(
    lr: &PlanarImage,
    dim: Option<&dyn DifficultyClassifier>,
    cb: Option<&dyn ComplexBranch>,
    opts: &SrOptions,
) -> Result<SrOutput> {
    let s = opts.scale;
    check_scale(s)?;
    if !lr.y.is_finite() {
        return Err(Error::Numeric("input image contains non-finite values".into()));
    }
    if let Some(d) = dim.and_then(DifficultyClassifier::scale) {
        if d != s {
            return Err(Error::InvalidArgument(format!("identifier is ×{d}, requested ×{s}")));
        }
    }
    if let Some(c) = cb {
        if c.scale() != s {
            return Err(Error::InvalidArgument(format!(
                "complex branch is ×{}, requested ×{s}",
                c.scale()
            )));
        }
    }

    let (patches, grid) = tile_with_margin(&lr.y, PATCH_SIZE, opts.margin)?;
    let probs: Vec<Option<ProbVector>> = match opts.routing {
        Routing::Adaptive => {
            let dim =
                dim.ok_or_else(|| Error::InvalidArgument("adaptive routing needs a difficulty identifier".into()))?;
            let cores = patches
                .iter()
                .map(|p| core_of(p, opts.margin))
                .collect::<Result<Vec<_>>>()?;
            dim.classify(&cores)?.into_iter().map(Some).collect()
        }
        _ => vec![None; patches.len()],
    };
    let branches: Vec<Branch> = probs
        .iter()
        .map(|p| match (opts.routing, p) {
            (Routing::Adaptive, Some(p)) if generate_mask(p).0 => Branch::Plain,
            (Routing::Adaptive, _) | (Routing::Complex, _) => Branch::Complex,
            (Routing::Plain, _) => Branch::Plain,
        })
        .collect();

    let hard: Vec<Plane> = patches
        .iter()
        .zip(&branches)
        .filter(|(_, b)| **b == Branch::Complex)
        .map(|(p, _)| p.clone())
        .collect();
    let mut hard_out = if hard.is_empty() {
        Vec::new()
    } else {
        let cb = cb.ok_or_else(|| Error::InvalidArgument("complex routing needs a complex branch".into()))?;
        cb.upscale(&hard)?
    }
    .into_iter();

    let mut sr_patches = Vec::with_capacity(patches.len());
    for (p, b) in patches.iter().zip(&branches) {
        sr_patches.push(match b {
            Branch::Plain => pb_upscale(p, s, &opts.kernel)?,
            Branch::Complex => hard_out
                .next()
                .ok_or_else(|| Error::dim("complex branch returned too few patches"))?,
        });
    }
    let y = stitch(&sr_patches, &grid, s)?;

    let (w, h) = (lr.width() * s, lr.height() * s);
    let chroma = |p: &Option<Plane>| p.as_ref().map(|p| pb_upscale(p, s, &opts.kernel)).transpose();
    let image = PlanarImage {
        y,
        cb: chroma(&lr.cb)?,
        cr: chroma(&lr.cr)?,
    };
    debug_assert_eq!(image.y.dims(), (w, h));

    let routing = RoutingReport {
        rows: grid.rows(),
        cols: grid.cols(),
        cells: grid
            .cells
            .iter()
            .zip(branches.iter().zip(&probs))
            .map(|(c, (b, p))| RoutedCell {
                row: c.row,
                col: c.col,
                branch: *b,
                class: p.as_ref().map(ProbVector::argmax_class),
                probs: p.map(|p| p.0),
            })
            .collect(),
    };
    Ok(SrOutput { image, routing })
}
