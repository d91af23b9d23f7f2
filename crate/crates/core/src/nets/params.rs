use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use super::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Trainable parameter.
    Param,
    /// Non-trainable state such as normalization running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub var: Var,
    pub kind: EntryKind,
}

/// Named tensors of one network, in a stable (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.entries
            .values()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Overwrites every entry with the value of the same-named entry in
    /// `other`. Names and shapes must match exactly.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NetError::Mismatch(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (name, entry) in &self.entries {
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| NetError::Mismatch(format!("missing entry {name}")))?;
            entry.var.set(&src.var.as_tensor().copy()?)?;
        }
        Ok(())
    }

    /// Host copies of every entry as (shape, f32 values).
    pub fn export(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        self.entries
            .iter()
            .map(|(name, e)| {
                let t = e.var.as_tensor();
                let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
                Ok((name.clone(), (t.dims().to_vec(), values)))
            })
            .collect()
    }

    /// Loads values exported by [`ParamStore::export`] (possibly with a name
    /// prefix stripped by the caller).
    pub fn import(&self, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for (name, entry) in &self.entries {
            let (shape, values) = tensors
                .get(name)
                .ok_or_else(|| NetError::Mismatch(format!("checkpoint lacks {name}")))?;
            let var = &entry.var;
            if shape.as_slice() != var.dims() {
                return Err(NetError::Mismatch(format!(
                    "{name}: checkpoint shape {shape:?} vs network {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_slice(values, shape.as_slice(), var.device())?
                .to_dtype(var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw values.
    pub fn digest(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, (shape, values)) in self.export()? {
            hasher.update(name.as_bytes());
            for d in shape {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Weight initialization schemes; all are fan-in scaled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// N(0, 2 / fan_in), for weights feeding a rectifier.
    HeNormal {
        fan_in: usize,
    },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for affine layers.
    Uniform {
        fan_in: usize,
    },
    Const(f64),
}

/// Seeded constructor for a [`ParamStore`]. Parameters are drawn in
/// creation order from one ChaCha stream, so the same spec and seed always
/// produce the same values.
pub struct ParamBuilder {
    store: ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
    dtype: DType,
    device: Device,
    sample: bool,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
            dtype,
            device: Device::Cpu,
            sample: true,
        }
    }

    /// Builder that fills every parameter with zeros instead of sampling.
    /// Used to count parameters without paying for initialization.
    pub fn zeroed(dtype: DType) -> Self {
        Self {
            sample: false,
            ..Self::new(0, dtype)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn scoped<T>(
        &mut self,
        name: impl Into<String>,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    fn insert(
        &mut self,
        name: &str,
        values: Vec<f64>,
        shape: &[usize],
        kind: EntryKind,
    ) -> Result<Var> {
        let full = self.full_name(name);
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        if self
            .store
            .entries
            .insert(
                full.clone(),
                Entry {
                    var: var.clone(),
                    kind,
                },
            )
            .is_some()
        {
            return Err(NetError::Mismatch(format!(
                "duplicate parameter name {full}"
            )));
        }
        Ok(var)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let init = if self.sample { init } else { Init::Const(0.0) };
        let values: Vec<f64> = match init {
            Init::HeNormal { fan_in } => {
                let dist =
                    Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        Ok(self
            .insert(name, values, shape, EntryKind::Param)?
            .as_tensor()
            .clone())
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape, EntryKind::Buffer)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}
