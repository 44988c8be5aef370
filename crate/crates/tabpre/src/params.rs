//! Named flat parameter store shared by the graph, the optimizer and
//! checkpointing.

use crate::error::TabError;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Copies values from another set with identical layout (for loading
    /// checkpoints into an already-built model).
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<(), TabError> {
        if self.len() != other.len() {
            return Err(TabError::Model(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.len() {
            if self.names[i] != other.names[i]
                || self.tensors[i].shape() != other.tensors[i].shape()
            {
                return Err(TabError::Model(format!(
                    "parameter {} layout mismatch",
                    self.names[i]
                )));
            }
            self.tensors[i] = other.tensors[i].clone();
        }
        Ok(())
    }
}
