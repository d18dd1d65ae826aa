use serde::{Deserialize, Serialize};

use super::ComplexBranch;
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::difficulty::INPUT_DIVISOR;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::resample::{check_scale, pb_upscale, KernelSpec};
use crate::tensor::{kaiming_normal, seeded_rng, Tape, Tensor, Var};

pub const CB_ARCH: &str = "residual-subpixel";
/// Subtracted from the normalised input so the first layer sees zero-mean data.
const INPUT_MEAN: f32 = 0.5;

/// Compact residual network with a sub-pixel upsampler and a global bicubic skip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbConfig {
    pub scale: usize,
    pub features: usize,
    pub blocks: usize,
    /// Channels left after the sub-pixel rearrangement, before the tail conv.
    pub upsample_channels: usize,
}

impl CbConfig {
    pub fn new(scale: usize) -> Self {
        CbConfig {
            scale,
            features: 32,
            blocks: 4,
            upsample_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.features == 0 || self.upsample_channels == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        Ok(())
    }

    fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.features;
        let up = self.scale * self.scale * self.upsample_channels;
        let mut specs = vec![
            ("head.weight".to_string(), vec![f, 1, 3, 3]),
            ("head.bias".to_string(), vec![f]),
        ];
        for b in 0..self.blocks {
            for c in 1..=2 {
                specs.push((format!("body.{b}.conv{c}.weight"), vec![f, f, 3, 3]));
                specs.push((format!("body.{b}.conv{c}.bias"), vec![f]));
            }
        }
        specs.push(("upsample.weight".into(), vec![up, f, 3, 3]));
        specs.push(("upsample.bias".into(), vec![up]));
        specs.push(("tail.weight".into(), vec![1, self.upsample_channels, 3, 3]));
        specs.push(("tail.bias".into(), vec![1]));
        specs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbMetadata {
    pub arch: String,
    pub config: CbConfig,
    pub kernel: KernelSpec,
    pub input_divisor: f32,
    pub seed: u64,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CbModel {
    pub(crate) params: Vec<Tensor>,
    pub meta: CbMetadata,
}

impl CbModel {
    /// Kaiming-initialised body with a zero tail, so the untrained network
    /// reproduces the bicubic upscale exactly.
    pub fn init(config: CbConfig, kernel: KernelSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let params = config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                if name.starts_with("tail") || name.ends_with("bias") {
                    Tensor::zeros(&shape).with_grad()
                } else {
                    kaiming_normal(&shape, &mut rng)
                }
            })
            .collect();
        Ok(CbModel {
            params,
            meta: CbMetadata {
                arch: CB_ARCH.into(),
                config,
                kernel,
                input_divisor: INPUT_DIVISOR,
                seed,
                epochs: 0,
                loss_curve: Vec::new(),
            },
        })
    }

    pub fn config(&self) -> &CbConfig {
        &self.meta.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Records the residual branch; returns the normalised correction [N, 1, sH, sW].
    pub(crate) fn forward_residual(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let head = tape.conv2d(x, p[0], p[1], 1, 1)?;
        let head = tape.relu(head);
        let mut h = head;
        for b in 0..self.meta.config.blocks {
            let i = 2 + 4 * b;
            let r = tape.conv2d(h, p[i], p[i + 1], 1, 1)?;
            let r = tape.relu(r);
            let r = tape.conv2d(r, p[i + 2], p[i + 3], 1, 1)?;
            h = tape.add(h, r)?;
        }
        if self.meta.config.blocks > 0 {
            h = tape.add(h, head)?;
        }
        let i = 2 + 4 * self.meta.config.blocks;
        let up = tape.conv2d(h, p[i], p[i + 1], 1, 1)?;
        let up = tape.pixel_shuffle(up, self.meta.config.scale)?;
        tape.conv2d(up, p[i + 2], p[i + 3], 1, 1)
    }

    pub(crate) fn input_tensor(&self, patches: &[&Plane]) -> Result<Tensor> {
        let first = patches.first().ok_or_else(|| Error::dim("empty patch batch"))?;
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(patches.len() * w * h);
        for p in patches {
            if p.dims() != (w, h) {
                return Err(Error::dim(format!(
                    "mixed patch sizes in batch: {:?} vs {:?}",
                    p.dims(),
                    (w, h)
                )));
            }
            data.extend(p.data().iter().map(|v| v / self.meta.input_divisor - INPUT_MEAN));
        }
        Tensor::new(&[patches.len(), 1, h, w], data)
    }

    /// SR patches: bicubic upscale plus the learned correction, in the [0, 255] domain.
    pub fn forward(&self, patches: &[&Plane]) -> Result<Vec<Plane>> {
        let s = self.meta.config.scale;
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(16) {
            let mut tape = Tape::new();
            let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
            let x = tape.leaf(self.input_tensor(chunk)?);
            let residual = self.forward_residual(&mut tape, &p, x)?;
            let res = tape.value(residual);
            let per = res.numel() / chunk.len();
            for (lr, r) in chunk.iter().zip(res.data().chunks(per)) {
                let mut sr = pb_upscale(lr, s, &self.meta.kernel)?;
                for (v, d) in sr.data_mut().iter_mut().zip(r) {
                    *v += d * self.meta.input_divisor;
                }
                if !sr.is_finite() {
                    return Err(Error::Numeric("complex branch produced a non-finite value".into()));
                }
                out.push(sr);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let tensors = self
            .meta
            .config
            .param_specs()
            .into_iter()
            .zip(&self.params)
            .map(|((name, _), t)| {
                let mut t = t.clone();
                t.zero_grad();
                (name, t)
            })
            .collect();
        Ok(Checkpoint {
            kind: ModelKind::Cb,
            metadata: serde_json::to_string(&self.meta)?,
            tensors,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != ModelKind::Cb {
            return Err(Error::Format("checkpoint does not hold a complex branch".into()));
        }
        let meta: CbMetadata = serde_json::from_str(&ckpt.metadata)?;
        if meta.arch != CB_ARCH {
            return Err(Error::Format(format!(
                "unknown complex-branch architecture {:?}",
                meta.arch
            )));
        }
        meta.config.validate()?;
        let mut params = Vec::new();
        for (name, shape) in meta.config.param_specs() {
            let t = ckpt.tensor(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.push(t.clone().with_grad());
        }
        Ok(CbModel { params, meta })
    }
}

impl ComplexBranch for CbModel {
    fn upscale(&self, patches: &[Plane]) -> Result<Vec<Plane>> {
        let refs: Vec<&Plane> = patches.iter().collect();
        self.forward(&refs)
    }

    fn scale(&self) -> usize {
        self.meta.config.scale
    }
}
