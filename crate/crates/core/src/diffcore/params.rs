use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

/// Named flat parameter tensors plus one gradient accumulator per tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "shape/value mismatch for `{name}`"
        );
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.grads.push(vec![0.0; value.len()]);
        self.params.push(Param { name, shape, value });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds `other`'s gradient buffers into this store's (replica merge).
    pub fn accumulate_grads(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::invalid("parameter layout mismatch"));
        }
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            if g.len() != o.len() {
                return Err(Error::invalid("parameter layout mismatch"));
            }
            for (a, b) in g.iter_mut().zip(o) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Maps a flat coordinate onto `(param, offset)`.
    pub fn locate(&self, mut flat: usize) -> Option<(ParamId, usize)> {
        for (i, p) in self.params.iter().enumerate() {
            if flat < p.value.len() {
                return Some((ParamId(i), flat));
            }
            flat -= p.value.len();
        }
        None
    }

    /// Replaces all values from named arrays; names and sizes must match.
    pub fn load_values(&mut self, values: &[Param]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(values) {
            if dst.name != src.name || dst.shape != src.shape || dst.value.len() != src.value.len() {
                return Err(Error::Config(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}
