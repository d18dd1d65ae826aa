//! Dense single-precision tensors with a small reverse-mode autodiff tape.
//!
//! Forward kernels in [`ops`] are pure functions usable for inference without
//! recording anything. [`Tape`] records the same kernels and replays them in
//! reverse to produce gradients for training.

mod adam;
mod init;
pub mod ops;
mod tape;

pub use adam::{lr_at_epoch, Adam, AdamConfig, AdamState};
pub use init::{kaiming_normal, seeded_rng};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} produced a non-finite value")))
        }
    }

    /// Splits a 4-D tensor along the batch axis into owned samples of shape [1, C, H, W].
    pub fn split_batch(&self) -> Result<Vec<Tensor>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!("expected 4-D tensor, got {:?}", self.shape)));
        }
        let per = self.numel() / self.shape[0].max(1);
        let inner = [1, self.shape[1], self.shape[2], self.shape[3]];
        Ok(self
            .data
            .chunks(per.max(1))
            .take(self.shape[0])
            .map(|c| Tensor {
                shape: inner.to_vec(),
                data: c.to_vec(),
                grad: None,
                requires_grad: false,
            })
            .collect())
    }

    /// Stacks same-shaped [C, H, W] or [1, C, H, W] samples into one batch.
    pub fn stack(samples: &[Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::dim("cannot stack an empty batch"))?;
        let inner: Vec<usize> = match first.rank() {
            4 if first.shape[0] == 1 => first.shape[1..].to_vec(),
            3 => first.shape.clone(),
            _ => return Err(Error::dim(format!("cannot stack shape {:?}", first.shape))),
        };
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        for s in samples {
            if s.numel() != first.numel() || s.shape.iter().rev().take(3).ne(first.shape.iter().rev().take(3)) {
                return Err(Error::dim(format!(
                    "batch member shape {:?} differs from {:?}",
                    s.shape, first.shape
                )));
            }
            data.extend_from_slice(&s.data);
        }
        let mut shape = vec![samples.len()];
        shape.extend(inner);
        Tensor::new(&shape, data)
    }
}
