use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Layer widths, input first: `[in, hidden.., out]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

/// Affine layers, tanh between them, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `{prefix}.{i}.w` / `{prefix}.{i}.b` in `store`. Weights are
    /// Glorot-uniform, biases zero. `out_gain` scales the last layer.
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        spec: MlpSpec,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.sizes.len() < 2 || spec.sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {:?}", spec.sizes)));
        }
        let n_layers = spec.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (i, pair) in spec.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let gain = if i + 1 == n_layers { out_gain } else { 1.0 };
            let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 })
                .collect();
            let wid = store.add(format!("{prefix}.{i}.w"), vec![fan_out, fan_in], w);
            let bid = store.add(format!("{prefix}.{i}.b"), vec![fan_out], vec![0.0; fan_out]);
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Rebinds to parameters already present in `store` by name.
    pub fn bind(store: &ParamStore, prefix: &str, spec: MlpSpec) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, pair) in spec.sizes.windows(2).enumerate() {
            let w = store
                .find(&format!("{prefix}.{i}.w"))
                .ok_or_else(|| Error::Config(format!("missing {prefix}.{i}.w")))?;
            let b = store
                .find(&format!("{prefix}.{i}.b"))
                .ok_or_else(|| Error::Config(format!("missing {prefix}.{i}.b")))?;
            if store.param(w).shape != [pair[1], pair[0]] {
                return Err(Error::Config(format!("{prefix}.{i}.w has the wrong shape")));
            }
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matvec(store, w, h)?;
            let z = tape.add_param(store, z, b)?;
            h = if i < last { tape.tanh(z) } else { z };
        }
        Ok(h)
    }
}
