use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cb::CbModel;
use super::CbConfig;
use crate::difficulty::{generate_mask, DifficultyClassifier, EpochLog, LabeledPatch, Mask, INPUT_DIVISOR};
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::patching::{augment, PatchPair};
use crate::resample::{pb_upscale, KernelSpec};
use crate::tensor::{lr_at_epoch, seeded_rng, Adam, AdamConfig, Tape, Tensor, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CbHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub halve_every: usize,
    pub seed: u64,
    pub augment: bool,
    /// Draw at most this many patches per epoch (all of them when `None`).
    #[serde(default)]
    pub patches_per_epoch: Option<usize>,
}

impl Default for CbHyper {
    fn default() -> Self {
        CbHyper {
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::default(),
            halve_every: 100,
            seed: 0,
            augment: true,
            patches_per_epoch: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CbTrainLog {
    /// Mean L1 (normalised luma) of the untrained branch on the hard patches.
    pub initial_loss: f64,
    pub hard_patches: usize,
    pub epochs: Vec<EpochLog>,
    /// Batches whose augmented patches were all routed to the plain branch.
    pub skipped_batches: usize,
}

fn normalised(planes: &[&Plane], shape: &[usize]) -> Result<Tensor> {
    let data = planes
        .iter()
        .flat_map(|p| p.data().iter().map(|v| v / INPUT_DIVISOR))
        .collect();
    Tensor::new(shape, data)
}

impl CbModel {
    /// Mean masked L1 and gradients for one batch. Only patches with mask 0
    /// run through the network; `None` when there are none.
    fn batch_gradients(&mut self, batch: &[PatchPair], masks: &[Mask]) -> Result<Option<f64>> {
        if batch.len() != masks.len() {
            return Err(Error::dim("one mask per patch pair is required"));
        }
        let hard: Vec<&PatchPair> = batch.iter().zip(masks).filter(|(_, m)| !m.0).map(|(p, _)| p).collect();
        if hard.is_empty() {
            return Ok(None);
        }
        let s = self.meta.config.scale;
        let lr: Vec<&Plane> = hard.iter().map(|p| &p.lr).collect();
        let (lw, lh) = lr[0].dims();
        let out_shape = [hard.len(), 1, lh * s, lw * s];
        let pb: Vec<Plane> = lr
            .iter()
            .map(|p| pb_upscale(p, s, &self.meta.kernel))
            .collect::<Result<_>>()?;
        let pb_refs: Vec<&Plane> = pb.iter().collect();
        let hr: Vec<&Plane> = hard.iter().map(|p| &p.hr).collect();

        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let x = tape.leaf(self.input_tensor(&lr)?);
        let residual = self.forward_residual(&mut tape, &p, x)?;
        let skip = tape.leaf(normalised(&pb_refs, &out_shape)?);
        let sr = tape.add(residual, skip)?;
        let loss = tape.masked_l1(sr, normalised(&hr, &out_shape)?, vec![true; hard.len()])?;
        tape.backward(loss)?;
        for (param, var) in self.params.iter_mut().zip(&p) {
            param.set_grad(
                tape.grad(*var)
                    .map(<[f32]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; param.numel()]),
            )?;
        }
        Ok(Some(f64::from(tape.value(loss).item())))
    }

    /// One optimiser step on `batch` under the given routing masks. A batch
    /// without hard patches leaves every parameter untouched.
    pub fn train_step(&mut self, adam: &mut Adam, batch: &[PatchPair], masks: &[Mask]) -> Result<Option<f64>> {
        let loss = self.batch_gradients(batch, masks)?;
        if loss.is_some() {
            adam.step(&mut self.params)?;
        }
        self.params.iter_mut().for_each(Tensor::zero_grad);
        Ok(loss)
    }

    /// Mean L1 (normalised) of the branch over patch pairs, chunked.
    pub fn mean_l1(&self, pairs: &[&PatchPair]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in pairs.chunks(16) {
            let lr: Vec<&Plane> = chunk.iter().map(|p| &p.lr).collect();
            for (sr, pair) in self.forward(&lr)?.iter().zip(chunk) {
                if sr.dims() != pair.hr.dims() {
                    return Err(Error::dim("SR output and HR target differ in size"));
                }
                total += sr
                    .data()
                    .iter()
                    .zip(pair.hr.data())
                    .map(|(a, b)| f64::from((a - b).abs()) / f64::from(INPUT_DIVISOR))
                    .sum::<f64>();
                count += sr.data().len();
            }
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

/// Trains the complex branch on patches the frozen identifier routes to it.
/// Routing is recomputed on each augmented patch.
pub fn train_cb(
    dataset: &[LabeledPatch],
    dim: &dyn DifficultyClassifier,
    config: CbConfig,
    kernel: KernelSpec,
    hyper: &CbHyper,
) -> Result<(CbModel, CbTrainLog)> {
    config.validate()?;
    if let Some(s) = dim.scale() {
        if s != config.scale {
            return Err(Error::InvalidArgument(format!(
                "identifier was trained for ×{s}, complex branch is ×{}",
                config.scale
            )));
        }
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("no training patches".into()));
    }

    let lr: Vec<Plane> = dataset.iter().map(|p| p.pair.lr.clone()).collect();
    let hard: Vec<&PatchPair> = dim
        .classify(&lr)?
        .iter()
        .zip(dataset)
        .filter(|(p, _)| !generate_mask(p).0)
        .map(|(_, d)| &d.pair)
        .collect();
    if hard.is_empty() {
        return Err(Error::Dataset(
            "the identifier routes every training patch to the plain branch; nothing to train".into(),
        ));
    }

    let mut model = CbModel::init(config, kernel, hyper.seed)?;
    let mut log = CbTrainLog {
        initial_loss: model.mean_l1(&hard)?,
        hard_patches: hard.len(),
        ..CbTrainLog::default()
    };
    drop(lr);

    let mut rng = seeded_rng(hyper.seed ^ 0x005e_edcb);
    let mut adam = Adam::new(hyper.adam);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..hyper.epochs {
        let lr = lr_at_epoch(hyper.adam.lr, epoch, hyper.halve_every);
        adam.set_lr(lr);
        order.shuffle(&mut rng);
        let take = hyper.patches_per_epoch.unwrap_or(order.len()).min(order.len());
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for batch in order[..take].chunks(hyper.batch_size) {
            let pairs: Vec<PatchPair> = batch
                .iter()
                .map(|&i| {
                    if hyper.augment {
                        augment(&dataset[i].pair, &mut rng)
                    } else {
                        dataset[i].pair.clone()
                    }
                })
                .collect();
            let lr_planes: Vec<Plane> = pairs.iter().map(|p| p.lr.clone()).collect();
            let masks: Vec<Mask> = dim.classify(&lr_planes)?.iter().map(generate_mask).collect();
            match model.train_step(&mut adam, &pairs, &masks)? {
                Some(l) => {
                    loss_sum += l;
                    steps += 1;
                }
                None => {
                    log::debug!("epoch {epoch}: batch routed entirely to the plain branch, step skipped");
                    log.skipped_batches += 1;
                }
            }
        }
        let entry = EpochLog {
            epoch,
            loss: if steps == 0 { f64::NAN } else { loss_sum / steps as f64 },
            lr,
            accuracy: None,
            mask_accuracy: None,
        };
        log::info!("cb epoch {epoch}: loss {:.6} lr {:.3e}", entry.loss, lr);
        model.meta.loss_curve.push(entry.loss);
        log.epochs.push(entry);
    }
    model.meta.epochs = hyper.epochs;
    Ok((model, log))
}
