//! Finite-difference check of the combined objective.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::batch_indices;
use super::train::prepare_run;
use crate::corridor::{total_loss_with, CorridorConfig, Terms};
use crate::diffcore::{grad_check, GradCheckReport, Probe};
use crate::error::Result;
use crate::flowmatch::{draw_noise, Example, FlowDraw, FlowModel};
use crate::rng::{stream, Stream};
use crate::synthdata::Record;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    pub h: f64,
    pub coords: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            h: 1e-4,
            coords: 200,
            seed: 0,
            tol: 1e-4,
        }
    }
}

/// Checks the gradient of the selected terms on a fixed batch and noise.
pub fn check_terms(
    model: &mut FlowModel,
    batch: &[Example],
    draws: &[FlowDraw],
    cfg: &CorridorConfig,
    terms: Terms,
    settings: GradCheckSettings,
) -> Result<GradCheckReport> {
    let mut store = std::mem::take(&mut model.store);
    let report = grad_check(
        &mut store,
        |s, with_grad| {
            std::mem::swap(&mut model.store, s);
            let out = total_loss_with(model, batch, draws, cfg, terms, with_grad);
            std::mem::swap(&mut model.store, s);
            let eval = out?;
            Ok(Probe {
                value: eval.loss.total,
                regime: eval.regime,
                parts: eval.weighted.to_vec(),
            })
        },
        settings.h,
        settings.coords,
        settings.seed,
    );
    model.store = store;
    report
}

/// Checks the configured objective.
pub fn check_total_loss(
    model: &mut FlowModel,
    batch: &[Example],
    draws: &[FlowDraw],
    cfg: &CorridorConfig,
    settings: GradCheckSettings,
) -> Result<GradCheckReport> {
    check_terms(model, batch, draws, cfg, cfg.active_terms(), settings)
}

/// Freshly initialized model from `cfg`, one training-sized batch drawn from
/// the grad-check stream of the training seed.
pub fn grad_check_run(cfg: &RunConfig, records: &[Record], settings: GradCheckSettings) -> Result<GradCheckReport> {
    cfg.validate()?;
    let seed = cfg.train_seed()?;
    let prepared = prepare_run(cfg, records)?;
    let mut model = FlowModel::new(cfg.arch(), prepared.norm, &mut stream(seed, Stream::Init))?;
    let mut rng = stream(seed, Stream::GradCheck);
    let idx = batch_indices(&mut rng, prepared.train.len(), cfg.train.batch_size);
    let batch: Vec<Example> = idx.iter().map(|&i| prepared.train[i].clone()).collect();
    let draws = draw_noise(&mut rng, batch.len(), model.arch.dim());
    check_total_loss(&mut model, &batch, &draws, &cfg.corridor, settings)
}
