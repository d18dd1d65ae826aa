//! Bicubic-PSNR difficulty labels, the patch classifier and the routing mask.

mod dataset;
mod dim;
mod store;

pub use dataset::{build_dataset, eight_bit_pair, list_pngs, prepare_training_pairs, BuildReport, ClassHistogram};
pub use dim::{train_dim, DimHyper, DimMetadata, DimModel, EpochLog, TrainLog, DIM_ARCH, INPUT_DIVISOR};
pub use store::{load_store, read_store, save_store, write_store, LabeledPatch, STORE_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::metrics::psnr;
use crate::patching::PatchPair;
use crate::resample::{pb_upscale, KernelSpec};

pub const NUM_CLASSES: usize = 5;

/// Four strictly descending PSNR thresholds separating c₁ (easiest) … c₅ (hardest).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBins {
    pub boundaries: [f64; 4],
}

impl Default for DifficultyBins {
    fn default() -> Self {
        DifficultyBins {
            boundaries: [45.0, 37.5, 32.5, 27.5],
        }
    }
}

impl DifficultyBins {
    pub fn new(boundaries: [f64; 4]) -> Result<Self> {
        let ok = boundaries.iter().all(|b| b.is_finite()) && boundaries.windows(2).all(|w| w[0] > w[1]);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bin boundaries must be finite and strictly descending, got {boundaries:?}"
            )));
        }
        Ok(DifficultyBins { boundaries })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.boundaries).map(|_| ())
    }

    /// Class 1..=5. A PSNR equal to a boundary belongs to the easier class.
    pub fn class_of(&self, psnr_db: f64) -> u8 {
        self.boundaries
            .iter()
            .position(|b| psnr_db >= *b)
            .map_or(NUM_CLASSES as u8, |i| i as u8 + 1)
    }
}

/// Difficulty distribution p₁..p₅.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(pub [f32; NUM_CLASSES]);

impl ProbVector {
    pub fn new(p: [f32; NUM_CLASSES]) -> Result<Self> {
        let sum: f32 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Numeric(format!("not a probability vector: {p:?}")));
        }
        Ok(ProbVector(p))
    }

    /// Most likely class in 1..=5; ties resolve to the easier class.
    pub fn argmax_class(&self) -> u8 {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best as u8 + 1
    }
}

/// Binary routing mask: `true` sends the patch to the plain branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(pub bool);

impl Mask {
    pub fn value(self) -> f32 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }

    /// The mask broadcast to a plane of the reconstructed patch size.
    pub fn plane(self, width: usize, height: usize) -> Plane {
        Plane::filled(width, height, self.value())
    }
}

/// 1 iff p₁ attains the maximum; p₁ tied for the maximum counts as attaining it.
pub fn generate_mask(p: &ProbVector) -> Mask {
    let max = p.0.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Mask(p.0[0] >= max)
}

/// Bicubic PSNR of a patch pair, no border shave.
pub fn bicubic_psnr(pair: &PatchPair, scale: usize, spec: &KernelSpec) -> Result<f64> {
    let s = pair.scale()?;
    if s != scale {
        return Err(Error::dim(format!("patch pair has scale {s}, expected {scale}")));
    }
    psnr(&pb_upscale(&pair.lr, scale, spec)?, &pair.hr, 0)
}

/// Difficulty class of a pair from its bicubic PSNR.
pub fn label_patch(pair: &PatchPair, scale: usize, bins: &DifficultyBins, spec: &KernelSpec) -> Result<u8> {
    Ok(bins.class_of(bicubic_psnr(pair, scale, spec)?))
}

/// Something that maps LR patches to difficulty distributions.
pub trait DifficultyClassifier: Sync {
    fn classify(&self, patches: &[Plane]) -> Result<Vec<ProbVector>>;

    /// Scale the classifier was trained for, if it is tied to one.
    fn scale(&self) -> Option<usize>;
}

/// A classifier that returns the same distribution for every patch.
#[derive(Clone, Copy, Debug)]
pub struct FixedClassifier(pub ProbVector);

impl FixedClassifier {
    pub fn all_easy() -> Self {
        FixedClassifier(ProbVector([1.0, 0.0, 0.0, 0.0, 0.0]))
    }

    pub fn all_hard() -> Self {
        FixedClassifier(ProbVector([0.0, 0.0, 0.0, 0.0, 1.0]))
    }
}

impl DifficultyClassifier for FixedClassifier {
    fn classify(&self, patches: &[Plane]) -> Result<Vec<ProbVector>> {
        Ok(vec![self.0; patches.len()])
    }

    fn scale(&self) -> Option<usize> {
        None
    }
}
