//! Dual-way reconstruction: a trainable complex branch, the bicubic plain
//! branch, mask fusion and the tiled full-image pipeline.

mod cb;
mod pipeline;
mod train;

pub use cb::{CbConfig, CbMetadata, CbModel, CB_ARCH};
pub use pipeline::{super_resolve, Branch, RoutedCell, Routing, RoutingReport, SrOptions, SrOutput};
pub use train::{train_cb, CbHyper, CbTrainLog};

use crate::difficulty::Mask;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::resample::{pb_upscale, KernelSpec};

/// Anything that turns LR luma patches into SR patches of `scale()` times the size.
pub trait ComplexBranch: Sync {
    fn upscale(&self, patches: &[Plane]) -> Result<Vec<Plane>>;
    fn scale(&self) -> usize;
}

/// The plain branch as a [`ComplexBranch`], handy for ablations and stubs.
#[derive(Clone, Copy, Debug)]
pub struct BicubicBranch {
    pub scale: usize,
    pub spec: KernelSpec,
}

impl ComplexBranch for BicubicBranch {
    fn upscale(&self, patches: &[Plane]) -> Result<Vec<Plane>> {
        patches.iter().map(|p| pb_upscale(p, self.scale, &self.spec)).collect()
    }

    fn scale(&self) -> usize {
        self.scale
    }
}

/// `(1 − mask)·cb + mask·pb`, elementwise.
pub fn fuse(mask: Mask, cb_out: &Plane, pb_out: &Plane) -> Result<Plane> {
    if cb_out.dims() != pb_out.dims() {
        return Err(Error::dim(format!(
            "fuse: branch outputs differ in size ({:?} vs {:?})",
            cb_out.dims(),
            pb_out.dims()
        )));
    }
    let m = mask.value();
    let data = cb_out
        .data()
        .iter()
        .zip(pb_out.data())
        .map(|(c, p)| (1.0 - m) * c + m * p)
        .collect();
    Plane::new(cb_out.width(), cb_out.height(), data)
}

/// Same as [`fuse`] with an explicit mask plane.
pub fn fuse_plane(mask: &Plane, cb_out: &Plane, pb_out: &Plane) -> Result<Plane> {
    if mask.dims() != cb_out.dims() || cb_out.dims() != pb_out.dims() {
        return Err(Error::dim("fuse: mask and branch outputs must have identical sizes"));
    }
    let data = mask
        .data()
        .iter()
        .zip(cb_out.data().iter().zip(pb_out.data()))
        .map(|(m, (c, p))| (1.0 - m) * c + m * p)
        .collect();
    Plane::new(cb_out.width(), cb_out.height(), data)
}
