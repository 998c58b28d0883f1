use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which side of the federated partition a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamTag {
    /// Normalization-layer state, kept client-private under FedBN-style aggregation.
    Norm,
    /// Everything else (convolution kernels and biases).
    Rest,
}

/// Whether the optimizer updates a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and counters, written only by forward passes.
    Statistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub tag: ParamTag,
    pub kind: ParamKind,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl ParamEntry {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Ordered, uniquely named collection of model parameters with their
/// gradient and momentum buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        tag: ParamTag,
        kind: ParamKind,
    ) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(tensor.shape());
        let momentum = Tensor::zeros(tensor.shape());
        self.entries.push(ParamEntry {
            name,
            tensor,
            tag,
            kind,
            grad,
            momentum,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].tensor
    }

    /// Adds `grad` into the gradient buffer of entry `index`.
    pub fn accumulate_grad(&mut self, index: usize, grad: &Tensor) -> Result<()> {
        let entry = &mut self.entries[index];
        entry.grad.expect_same_shape("accumulate_grad", grad)?;
        for (g, d) in entry.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn reset_momentum(&mut self) {
        for e in &mut self.entries {
            e.momentum.data_mut().fill(0.0);
        }
    }

    /// Splits into `(norm, rest)` views, preserving order.
    pub fn partition(&self) -> (Vec<&ParamEntry>, Vec<&ParamEntry>) {
        self.entries.iter().partition(|e| e.tag == ParamTag::Norm)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    /// Errors unless `other` has the same `(name, shape, tag, kind)` sequence.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        for (index, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            let reason = if a.name != b.name {
                Some(format!("name {} vs {}", a.name, b.name))
            } else if a.tensor.shape() != b.tensor.shape() {
                Some(format!("shape {:?} vs {:?}", a.tensor.shape(), b.tensor.shape()))
            } else if a.tag != b.tag || a.kind != b.kind {
                Some(format!("tag {:?}/{:?} vs {:?}/{:?}", a.tag, a.kind, b.tag, b.kind))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::StructureMismatch {
                    index,
                    name: a.name.clone(),
                    reason,
                });
            }
        }
        if self.len() != other.len() {
            let index = self.len().min(other.len());
            let name = self
                .entries
                .get(index)
                .or_else(|| other.entries.get(index))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            return Err(Error::StructureMismatch {
                index,
                name,
                reason: format!("entry count {} vs {}", self.len(), other.len()),
            });
        }
        Ok(())
    }

    /// SHA-256 over the `(name, shape, tag, kind)` sequence.
    pub fn structure_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update((e.name.len() as u32).to_le_bytes());
            hasher.update(e.name.as_bytes());
            hasher.update([tag_byte(e.tag, e.kind)]);
            hasher.update((e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Copies values (not buffers) from `source` for every entry where `select` holds.
    pub fn copy_values_from(
        &mut self,
        source: &ParamSet,
        select: impl Fn(&ParamEntry) -> bool,
    ) -> Result<()> {
        self.check_compatible(source)?;
        for (dst, src) in self.entries.iter_mut().zip(&source.entries) {
            if select(dst) {
                dst.tensor.data_mut().copy_from_slice(src.tensor.data());
            }
        }
        Ok(())
    }

    /// Total number of scalar values across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

pub(crate) fn tag_byte(tag: ParamTag, kind: ParamKind) -> u8 {
    match (tag, kind) {
        (ParamTag::Rest, ParamKind::Trainable) => 0,
        (ParamTag::Norm, ParamKind::Trainable) => 1,
        (ParamTag::Norm, ParamKind::Statistic) => 2,
        (ParamTag::Rest, ParamKind::Statistic) => 3,
    }
}

pub(crate) fn tag_from_byte(b: u8) -> Option<(ParamTag, ParamKind)> {
    match b {
        0 => Some((ParamTag::Rest, ParamKind::Trainable)),
        1 => Some((ParamTag::Norm, ParamKind::Trainable)),
        2 => Some((ParamTag::Norm, ParamKind::Statistic)),
        3 => Some((ParamTag::Rest, ParamKind::Statistic)),
        _ => None,
    }
}
