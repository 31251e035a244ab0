//! Named parameter registry with a stable flattened index space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Functional role of a parameter tensor inside the transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Embedding,
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    FfnUp,
    FfnGate,
    FfnDown,
    Norm,
    LmHead,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 10] = [
        ModuleKind::Embedding,
        ModuleKind::AttnQ,
        ModuleKind::AttnK,
        ModuleKind::AttnV,
        ModuleKind::AttnO,
        ModuleKind::FfnUp,
        ModuleKind::FfnGate,
        ModuleKind::FfnDown,
        ModuleKind::Norm,
        ModuleKind::LmHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Embedding => "embedding",
            ModuleKind::AttnQ => "attn_q",
            ModuleKind::AttnK => "attn_k",
            ModuleKind::AttnV => "attn_v",
            ModuleKind::AttnO => "attn_o",
            ModuleKind::FfnUp => "ffn_up",
            ModuleKind::FfnGate => "ffn_gate",
            ModuleKind::FfnDown => "ffn_down",
            ModuleKind::Norm => "norm",
            ModuleKind::LmHead => "lm_head",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown module kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ModuleKind,
    pub layer: Option<usize>,
    pub tensor: Tensor,
    offset: usize,
}

impl ParamEntry {
    /// First global index of this tensor in the flattened parameter vector.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.tensor.numel()
    }
}

/// Ordered, uniquely named parameter tensors. The global index of a scalar is
/// its position in the concatenation of all tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        kind: ModuleKind,
        layer: Option<usize>,
        tensor: Tensor,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let offset = self.total;
        self.total += tensor.numel();
        self.entries.push(ParamEntry {
            name,
            kind,
            layer,
            tensor,
            offset,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn total_count(&self) -> usize {
        self.total
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        self.check_len(values.len())?;
        for e in &mut self.entries {
            let r = e.offset..e.offset + e.tensor.numel();
            e.tensor.data_mut().copy_from_slice(&values[r]);
        }
        Ok(())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.total {
            return Err(Error::contract(format!(
                "vector of length {len} does not align with {} parameters",
                self.total
            )));
        }
        Ok(())
    }

    /// Entry index and local offset of a global index.
    pub fn locate(&self, index: usize) -> Option<(usize, usize)> {
        if index >= self.total {
            return None;
        }
        let pos = self.entries.partition_point(|e| e.offset <= index) - 1;
        Some((pos, index - self.entries[pos].offset))
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.locate(index)
            .map(|(e, i)| self.entries[e].tensor.data()[i])
    }

    pub fn set(&mut self, index: usize, value: f64) -> Result<()> {
        let (e, i) = self
            .locate(index)
            .ok_or_else(|| Error::contract(format!("parameter index {index} out of range")))?;
        self.entries[e].tensor.data_mut()[i] = value;
        Ok(())
    }

    /// Mutable tensor data paired with its global offset, in index order.
    pub fn chunks_mut(&mut self) -> impl Iterator<Item = (usize, &mut [f64])> {
        self.entries
            .iter_mut()
            .map(|e| (e.offset, e.tensor.data_mut()))
    }

    /// Same names, kinds, layers and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.kind == b.kind
                    && a.layer == b.layer
                    && a.tensor.shape() == b.tensor.shape()
            })
    }

    /// Bitwise equality of every parameter value (distinguishes -0.0 and NaN payloads).
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.same_layout(other)
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.tensor.data().iter().all(|v| v.is_finite()))
    }
}
