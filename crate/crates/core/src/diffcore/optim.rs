use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Applies one update from the gradients in `store`, then zeroes them.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        for id in store.ids() {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NanGradient {
                    param: store.param(id).name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = store.grad(id).to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = store.value_mut(id);
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("theta", vec![1], vec![v]);
        s.grad_mut(id)[0] = g;
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(0.0, 1.0);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store).unwrap();
        // m_hat = 1, v_hat = 1 -> -lr / (1 + eps)
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((store.params()[0].value[0] - expect).abs() < 1e-18);
        assert_eq!(store.grad(store.find("theta").unwrap()), &[0.0]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut store = scalar_store(0.7, 0.0);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.params()[0].value[0], 0.7);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn identical_states_give_identical_updates() {
        let mut a = scalar_store(0.2, -0.4);
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default(), &a);
        let mut ob = oa.clone();
        oa.step(&mut a).unwrap();
        ob.step(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = scalar_store(0.2, f64::NAN);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        match opt.step(&mut store) {
            Err(Error::NanGradient { param }) => assert_eq!(param, "theta"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.params()[0].value[0], 0.2);
        assert_eq!(opt.step, 0);
    }
}
