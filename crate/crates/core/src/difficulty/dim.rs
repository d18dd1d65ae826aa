//! LeNet-5 adapted to 48×48 single-channel patches.
//!
//! conv5×5·6 → ReLU → pool → conv5×5·16 → ReLU → pool → 1296 → 120 → 84 → 5.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{generate_mask, DifficultyBins, DifficultyClassifier, LabeledPatch, ProbVector, NUM_CLASSES};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::patching::{augment, PATCH_SIZE};
use crate::tensor::{kaiming_normal, lr_at_epoch, seeded_rng, Adam, AdamConfig, Tape, Tensor, Var};

pub const DIM_ARCH: &str = "lenet5-48";
/// Luma is divided by this before entering either network.
pub const INPUT_DIVISOR: f32 = 255.0;

const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];
const FLAT: usize = 16 * 9 * 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimMetadata {
    pub arch: String,
    pub scale: usize,
    pub bins: DifficultyBins,
    pub input_divisor: f32,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Clone, Debug)]
pub struct DimModel {
    params: Vec<Tensor>,
    pub meta: DimMetadata,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub halve_every: usize,
    pub seed: u64,
    pub augment: bool,
    pub holdout_fraction: f64,
}

impl Default for DimHyper {
    fn default() -> Self {
        DimHyper {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            halve_every: 100,
            seed: 0,
            augment: true,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Agreement of the c₁-versus-rest decision (the routing mask) on the held-out split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub clamp_warnings: usize,
}

impl DimModel {
    pub fn init(scale: usize, bins: DifficultyBins, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        for (w, fan) in [
            (vec![6, 1, 5, 5], 6),
            (vec![16, 6, 5, 5], 16),
            (vec![120, FLAT], 120),
            (vec![84, 120], 84),
        ] {
            params.push(kaiming_normal(&w, &mut rng));
            params.push(Tensor::zeros(&[fan]).with_grad());
        }
        // Zero classifier layer: every patch starts at the uniform distribution.
        params.push(Tensor::zeros(&[NUM_CLASSES, 84]).with_grad());
        params.push(Tensor::zeros(&[NUM_CLASSES]).with_grad());
        DimModel {
            params,
            meta: DimMetadata {
                arch: DIM_ARCH.into(),
                scale,
                bins,
                input_divisor: INPUT_DIVISOR,
                seed,
                epochs: 0,
            },
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn forward(tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let n = tape.value(x).shape()[0];
        let h = tape.conv2d(x, p[0], p[1], 1, 0)?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let h = tape.conv2d(h, p[2], p[3], 1, 0)?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let h = tape.reshape(h, &[n, FLAT])?;
        let h = tape.linear(h, p[4], p[5])?;
        let h = tape.relu(h);
        let h = tape.linear(h, p[6], p[7])?;
        let h = tape.relu(h);
        tape.linear(h, p[8], p[9])
    }

    /// Stacks 48×48 luma patches into a normalised [N, 1, 48, 48] batch.
    pub fn batch_tensor(&self, patches: &[&Plane]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(patches.len() * PATCH_SIZE * PATCH_SIZE);
        for p in patches {
            if p.dims() != (PATCH_SIZE, PATCH_SIZE) {
                return Err(Error::dim(format!(
                    "difficulty identifier expects 48×48 patches, got {:?}",
                    p.dims()
                )));
            }
            data.extend(p.data().iter().map(|v| v / self.meta.input_divisor));
        }
        Tensor::new(&[patches.len(), 1, PATCH_SIZE, PATCH_SIZE], data)
    }

    /// Class probabilities for a batch.
    pub fn predict(&self, patches: &[&Plane]) -> Result<Vec<ProbVector>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(256) {
            let mut tape = Tape::new();
            let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
            let x = tape.leaf(self.batch_tensor(chunk)?);
            let z = Self::forward(&mut tape, &p, x)?;
            let probs = tape.softmax(z)?;
            for row in tape.value(probs).data().chunks(NUM_CLASSES) {
                out.push(ProbVector(row.try_into().expect("five classes")));
            }
        }
        Ok(out)
    }

    fn one_hot(classes: &[u8]) -> Tensor {
        let mut t = Tensor::zeros(&[classes.len(), NUM_CLASSES]);
        for (i, c) in classes.iter().enumerate() {
            t.data_mut()[i * NUM_CLASSES + *c as usize - 1] = 1.0;
        }
        t
    }

    /// One forward/backward pass; returns the batch loss and leaves gradients on the parameters.
    fn accumulate_gradients(&mut self, patches: &[&Plane], classes: &[u8]) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let x = tape.leaf(self.batch_tensor(patches)?);
        let z = Self::forward(&mut tape, &p, x)?;
        let probs = tape.softmax(z)?;
        let loss = tape.cross_entropy(probs, Self::one_hot(classes))?;
        tape.backward(loss)?;
        for (param, var) in self.params.iter_mut().zip(&p) {
            param.set_grad(
                tape.grad(*var)
                    .map(<[f32]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; param.numel()]),
            )?;
        }
        Ok((f64::from(tape.value(loss).item()), tape.clamp_warnings()))
    }

    fn mean_loss(&self, items: &[&LabeledPatch]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in items.chunks(256) {
            let planes: Vec<&Plane> = chunk.iter().map(|p| &p.pair.lr).collect();
            let classes: Vec<u8> = chunk.iter().map(|p| p.class).collect();
            let probs = self.predict(&planes)?;
            let y_hat = Tensor::new(&[chunk.len(), NUM_CLASSES], probs.iter().flat_map(|p| p.0).collect())?;
            let (loss, _) = crate::tensor::ops::cross_entropy_loss(&y_hat, &Self::one_hot(&classes))?;
            total += f64::from(loss) * chunk.len() as f64;
        }
        Ok(total / items.len().max(1) as f64)
    }

    /// Five-way accuracy and routing-mask agreement.
    pub fn evaluate(&self, items: &[&LabeledPatch]) -> Result<(f64, f64)> {
        let planes: Vec<&Plane> = items.iter().map(|p| &p.pair.lr).collect();
        let probs = self.predict(&planes)?;
        let mut exact = 0usize;
        let mut routed = 0usize;
        for (p, item) in probs.iter().zip(items) {
            exact += usize::from(p.argmax_class() == item.class);
            routed += usize::from(generate_mask(p).0 == (item.class == 1));
        }
        let n = items.len().max(1) as f64;
        Ok((exact as f64 / n, routed as f64 / n))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: ModelKind::Dim,
            metadata: serde_json::to_string(&self.meta)?,
            tensors: PARAM_NAMES
                .iter()
                .zip(&self.params)
                .map(|(n, t)| {
                    let mut t = t.clone();
                    t.zero_grad();
                    (n.to_string(), t)
                })
                .collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != ModelKind::Dim {
            return Err(Error::Format("checkpoint does not hold a difficulty identifier".into()));
        }
        let meta: DimMetadata = serde_json::from_str(&ckpt.metadata)?;
        if meta.arch != DIM_ARCH {
            return Err(Error::Format(format!(
                "unknown identifier architecture {:?}",
                meta.arch
            )));
        }
        meta.bins.validate()?;
        let reference = DimModel::init(meta.scale, meta.bins, 0);
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        for (name, want) in PARAM_NAMES.iter().zip(&reference.params) {
            let t = ckpt.tensor(name)?;
            if t.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
            params.push(t.clone().with_grad());
        }
        Ok(DimModel { params, meta })
    }
}

impl DifficultyClassifier for DimModel {
    fn classify(&self, patches: &[Plane]) -> Result<Vec<ProbVector>> {
        let refs: Vec<&Plane> = patches.iter().collect();
        self.predict(&refs)
    }

    fn scale(&self) -> Option<usize> {
        Some(self.meta.scale)
    }
}

/// Trains the identifier with softmax cross-entropy on a seeded 90/10 split.
pub fn train_dim(
    dataset: &[LabeledPatch],
    scale: usize,
    bins: DifficultyBins,
    hyper: &DimHyper,
) -> Result<(DimModel, TrainLog)> {
    let mut present = [false; NUM_CLASSES];
    for p in dataset {
        if !(1..=NUM_CLASSES as u8).contains(&p.class) {
            return Err(Error::Dataset(format!("class {} out of range", p.class)));
        }
        present[p.class as usize - 1] = true;
    }
    if present.iter().filter(|&&b| b).count() < 2 {
        return Err(Error::Dataset("difficulty training needs at least two classes".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }

    let mut rng = seeded_rng(hyper.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let holdout = ((dataset.len() as f64 * hyper.holdout_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let (held, train) = order.split_at(holdout);
    let held: Vec<&LabeledPatch> = held.iter().map(|&i| &dataset[i]).collect();
    let mut train: Vec<usize> = train.to_vec();

    let mut model = DimModel::init(scale, bins, hyper.seed);
    model.meta.seed = hyper.seed;
    let mut adam = Adam::new(hyper.adam);
    let train_refs: Vec<&LabeledPatch> = train.iter().map(|&i| &dataset[i]).collect();
    let mut log = TrainLog {
        initial_loss: model.mean_loss(&train_refs)?,
        ..TrainLog::default()
    };

    for epoch in 0..hyper.epochs {
        let lr = lr_at_epoch(hyper.adam.lr, epoch, hyper.halve_every);
        adam.set_lr(lr);
        train.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in train.chunks(hyper.batch_size) {
            let augmented: Vec<Plane> = batch
                .iter()
                .map(|&i| {
                    if hyper.augment {
                        augment(&dataset[i].pair, &mut rng).lr
                    } else {
                        dataset[i].pair.lr.clone()
                    }
                })
                .collect();
            let planes: Vec<&Plane> = augmented.iter().collect();
            let classes: Vec<u8> = batch.iter().map(|&i| dataset[i].class).collect();
            let (loss, clamped) = model.accumulate_gradients(&planes, &classes)?;
            log.clamp_warnings += clamped;
            adam.step(&mut model.params)?;
            model.params.iter_mut().for_each(Tensor::zero_grad);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let (accuracy, mask_accuracy) = model.evaluate(&held)?;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            lr,
            accuracy: Some(accuracy),
            mask_accuracy: Some(mask_accuracy),
        };
        log::info!(
            "dim epoch {epoch}: loss {:.5} lr {lr:e} acc {accuracy:.3} mask {mask_accuracy:.3}",
            entry.loss
        );
        log.epochs.push(entry);
        model.meta.epochs = epoch + 1;
    }
    Ok((model, log))
}
