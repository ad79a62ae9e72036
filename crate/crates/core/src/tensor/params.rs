use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array with its gradient accumulator and layer group.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub group: usize,
}

/// Owns every parameter of a model along with the per-group frozen flags.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    frozen: Vec<bool>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, group: usize) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        if self.frozen.len() <= group {
            self.frozen.resize(group + 1, false);
        }
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn n_groups(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[self.params[id.0].group]
    }

    pub fn group_frozen(&self, group: usize) -> bool {
        self.frozen[group]
    }

    /// Freezes groups below `group`, unfreezes the rest.
    pub fn freeze_to(&mut self, group: usize) -> Result<()> {
        if group >= self.frozen.len() {
            return Err(Error::invalid(format!(
                "freeze_to({group}) with only {} layer groups",
                self.frozen.len()
            )));
        }
        for (g, f) in self.frozen.iter_mut().enumerate() {
            *f = g < group;
        }
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Order-sensitive checksum over the bit patterns of every parameter in `group`.
    pub fn group_checksum(&self, group: usize) -> u64 {
        let mut buf = Vec::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            buf.extend_from_slice(p.name.as_bytes());
            for v in p.value.data() {
                v.write_le(&mut buf);
            }
        }
        fnv1a(&buf)
    }

    pub fn checksum(&self) -> u64 {
        let mut buf = Vec::new();
        for g in 0..self.n_groups() {
            buf.extend_from_slice(&self.group_checksum(g).to_le_bytes());
        }
        fnv1a(&buf)
    }

    /// Copies values from `other` by parameter name. Every name must exist in
    /// both stores with identical shapes.
    pub fn adopt_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .find(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
