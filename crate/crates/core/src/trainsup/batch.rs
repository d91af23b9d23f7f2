use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::dataio::SliceStack;

use super::{Result, TrainError};

/// Stacks samples into an (N, S, H, W) tensor.
pub fn batch_tensor(stacks: &[&SliceStack], dtype: DType) -> Result<Tensor> {
    let first = stacks.first().ok_or(TrainError::EmptyPartition("batch"))?;
    let (s, h, w) = first.shape();
    let mut data = Vec::with_capacity(stacks.len() * s * h * w);
    for stack in stacks {
        if stack.shape() != (s, h, w) {
            return Err(TrainError::Config(format!(
                "sample {} has shape {:?}, batch expects {:?}",
                stack.subject_id,
                stack.shape(),
                (s, h, w)
            )));
        }
        data.extend(stack.slices.iter().copied());
    }
    Ok(Tensor::from_vec(data, (stacks.len(), s, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Class indices (0 = normal, 1 = demented) as a u32 tensor.
pub fn labels_tensor(stacks: &[&SliceStack]) -> Result<Tensor> {
    let labels: Vec<u32> = stacks.iter().map(|s| s.label.index() as u32).collect();
    Ok(Tensor::from_vec(labels, stacks.len(), &Device::Cpu)?)
}

/// Index batches over `n` samples, optionally reshuffled each epoch.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
}

impl Batches {
    pub fn sequential(n: usize, batch_size: usize) -> Self {
        Self {
            order: (0..n).collect(),
            batch_size: batch_size.max(1),
        }
    }

    pub fn shuffled(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Self::sequential(n, batch_size);
        b.order.shuffle(rng);
        b
    }

    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }
}
