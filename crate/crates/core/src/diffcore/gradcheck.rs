//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::ParamStore;
use crate::error::Result;

/// One loss evaluation. `regime` fingerprints every non-smooth branch the
/// evaluation took (hinge active sets, Huber branches); a coordinate whose
/// perturbation changes it straddles a kink and is excluded.
///
/// `parts`, when non-empty, splits `value` into summands that are
/// differenced one by one: a small term added to a large one otherwise loses
/// its low bits to rounding before the difference is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub regime: Vec<bool>,
    pub parts: Vec<f64>,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Self {
            value,
            regime: Vec::new(),
            parts: Vec::new(),
        }
    }

    fn difference(&self, minus: &Probe) -> f64 {
        if self.parts.is_empty() || self.parts.len() != minus.parts.len() {
            self.value - minus.value
        } else {
            self.parts.iter().zip(&minus.parts).map(|(p, m)| p - m).sum()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares analytic gradients with central differences on up to `coords`
/// seeded coordinates.
///
/// `objective(store, with_grad)` must evaluate the loss at the current
/// parameter values and, when `with_grad` is set, accumulate its gradient
/// into the store. Parameter values are restored afterwards.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut objective: F,
    h: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore, bool) -> Result<Probe>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    store.zero_grads();
    let base = objective(store, true)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();
    store.zero_grads();

    let total = store.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = if coords >= total {
        (0..total).collect()
    } else {
        sample(&mut rng, total, coords).into_vec()
    };
    picked.sort_unstable();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for flat in picked {
        let (id, off) = store.locate(flat).expect("coordinate in range");
        let orig = store.value(id)[off];
        store.value_mut(id)[off] = orig + h;
        let plus = objective(store, false);
        store.value_mut(id)[off] = orig - h;
        let minus = objective(store, false);
        store.value_mut(id)[off] = orig;
        let (plus, minus) = (plus?, minus?);
        if plus.regime != base.regime || minus.regime != base.regime {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = plus.difference(&minus) / (2.0 * h);
        let err = relative_error(analytic[id.index()][off], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_param = store.param(id).name.clone();
            report.worst_index = off;
            report.worst_analytic = analytic[id.index()][off];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
