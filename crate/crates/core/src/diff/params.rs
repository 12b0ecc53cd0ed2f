use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    tensor: Tensor<T>,
    trainable: bool,
}

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry { name, tensor, trainable });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.tensor.shape() != tensor.shape() {
            return Err(Error::shape(
                "param_set",
                format!("`{}` is {:?}, got {:?}", e.name, e.tensor.shape(), tensor.shape()),
            ));
        }
        e.tensor = tensor;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    /// SHA-256 over every parameter's name, shape and value bits.
    pub fn checksum(&self, id: ParamId) -> [u8; 32] {
        let e = &self.entries[id.0];
        let mut h = Sha256::new();
        h.update(e.name.as_bytes());
        for &d in e.tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            h.update(v.f64().to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn checksums(&self) -> Vec<(String, [u8; 32])> {
        self.ids().map(|id| (self.name(id).to_string(), self.checksum(id))).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), tensor: e.tensor.cast(), trainable: e.trainable })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParamSet::<f32>::new();
        p.insert("a", Tensor::zeros([2]), true).unwrap();
        assert!(p.insert("a", Tensor::zeros([2]), true).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let mut p = ParamSet::<f32>::new();
        let id = p.insert("w", Tensor::zeros([3]), true).unwrap();
        let before = p.checksum(id);
        p.set(id, Tensor::full([3], 1e-30)).unwrap();
        assert_ne!(before, p.checksum(id));
        assert!(p.set(id, Tensor::zeros([4])).is_err());
    }
}
