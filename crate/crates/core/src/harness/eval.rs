use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corridor::{corridor_eval, residual_norms};
use crate::error::{Error, Result};
use crate::flowmatch::{draw_noise, euler_sample, fm_loss_with, Example, FlowModel, Normalizer, VelocityField};
use crate::geometry::{norm, sub, Vec3};
use crate::rng::{stream, Stream};
use crate::synthdata::{ChunkLayout, TargetMode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub count: usize,
    pub endpoint_error: f64,
    pub corridor_violation_rate: f64,
    pub anchor_mae: f64,
}

/// Held-out proxies for task success.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    /// Mean distance between the implied and true chunk displacement (m).
    pub endpoint_error: f64,
    /// Fraction of sampled chunks with any anchor residual above the width.
    pub corridor_violation_rate: f64,
    /// Mean anchor-head error (m).
    pub anchor_mae: f64,
    pub fm_val_loss: f64,
    pub per_family: BTreeMap<String, FamilyReport>,
}

/// Sampling knobs shared by every evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub sampler_steps: usize,
    pub target_mode: TargetMode,
    pub layout: ChunkLayout,
    pub seed: u64,
}

/// Scores `field` on `examples`. Flow-matching noise for the validation loss
/// is drawn first, then one Euler sample per example, all from the eval
/// stream of `settings.seed`.
pub fn evaluate_with<F, P>(field: &F, predict: P, scale: &Normalizer, examples: &[Example], settings: EvalSettings) -> Result<EvalReport>
where
    F: VelocityField,
    P: Fn(&[f64]) -> Result<Vec<Vec3>>,
{
    if examples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let width = settings.layout.width();
    if field.dim() != scale.dim() || !scale.dim().is_multiple_of(width) {
        return Err(Error::Config("model dimension does not match the chunk layout".into()));
    }
    let mut rng = stream(settings.seed, Stream::Eval);
    let draws = draw_noise(&mut rng, examples.len(), field.dim());
    let fm_val_loss = fm_loss_with(field, examples, &draws)?;

    #[derive(Default)]
    struct Acc {
        n: usize,
        endpoint: f64,
        violations: usize,
        mae: f64,
    }
    let mut total = Acc::default();
    let mut families: BTreeMap<String, Acc> = BTreeMap::new();
    let col = settings.layout.spatial_col();
    for ex in examples {
        let rows = euler_sample(field, scale, &ex.context, settings.sampler_steps, width, &mut rng)?;
        let mut implied = [0.0; 3];
        for r in &rows {
            for j in 0..3 {
                implied[j] += r[col + j];
            }
        }
        let endpoint = norm(sub(implied, ex.displacement));
        let flat: Vec<f64> = rows.concat();
        let violated = corridor_eval(&flat, settings.layout, &ex.anchors, 0.0)?.violated();
        let pred = predict(&ex.context)?;
        let errs = residual_norms(&pred, ex.anchors.targets(settings.target_mode))?;
        let mae = errs.iter().sum::<f64>() / errs.len() as f64;
        if !(endpoint.is_finite() && mae.is_finite()) {
            return Err(Error::numerical("eval", "non-finite metric"));
        }
        for acc in [&mut total, families.entry(ex.family.as_str().to_string()).or_default()] {
            acc.n += 1;
            acc.endpoint += endpoint;
            acc.violations += violated as usize;
            acc.mae += mae;
        }
    }
    let fam = |a: &Acc| FamilyReport {
        count: a.n,
        endpoint_error: a.endpoint / a.n as f64,
        corridor_violation_rate: a.violations as f64 / a.n as f64,
        anchor_mae: a.mae / a.n as f64,
    };
    let overall = fam(&total);
    Ok(EvalReport {
        count: overall.count,
        endpoint_error: overall.endpoint_error,
        corridor_violation_rate: overall.corridor_violation_rate,
        anchor_mae: overall.anchor_mae,
        fm_val_loss,
        per_family: families.iter().map(|(k, a)| (k.clone(), fam(a))).collect(),
    })
}

/// Scores a trained model on held-out examples.
pub fn evaluate(model: &FlowModel, examples: &[Example], settings: EvalSettings) -> Result<EvalReport> {
    if model.arch.layout()? != settings.layout {
        return Err(Error::Config("checkpoint layout disagrees with the run config".into()));
    }
    if let Some(ex) = examples.first() {
        if ex.x.len() != model.arch.dim() || ex.anchors.k() != model.arch.anchors {
            return Err(Error::Config(format!(
                "checkpoint expects {} dims and {} anchors, data has {} and {}",
                model.arch.dim(),
                model.arch.anchors,
                ex.x.len(),
                ex.anchors.k()
            )));
        }
    }
    evaluate_with(model, |c| model.predict_anchors(c), &model.norm, examples, settings)
}

/// Uniform draw of `n` indices in `[0, len)`.
pub(crate) fn batch_indices<R: Rng>(rng: &mut R, len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::CorridorConfig;
    use crate::harness::prep::prepare;
    use crate::synthdata::{generate_dataset, DataConfig};

    /// Flows every sample straight onto the ground truth of its context.
    struct Truth<'a> {
        examples: &'a [Example],
    }

    impl VelocityField for Truth<'_> {
        fn dim(&self) -> usize {
            self.examples[0].x.len()
        }
        fn velocity(&self, context: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
            let ex = self.examples.iter().find(|e| e.context == context).unwrap();
            Ok(z.iter().zip(&ex.x).map(|(z, x)| (z - x) / t).collect())
        }
    }

    #[test]
    fn ground_truth_generator_is_perfect() {
        let data = DataConfig {
            n_chunks: 60,
            ..DataConfig::default()
        };
        let recs = generate_dataset(&data, 2, 2.0).unwrap();
        let corr = CorridorConfig::default();
        let p = prepare(&recs, &data, &corr, 10, None).unwrap();
        let field = Truth { examples: &p.held_out };
        let settings = EvalSettings {
            sampler_steps: 10,
            target_mode: TargetMode::Delta,
            layout: ChunkLayout::Extended,
            seed: 1,
        };
        let exact = |c: &[f64]| {
            let ex = p.held_out.iter().find(|e| e.context == c).unwrap();
            Ok(ex.anchors.delta_targets.clone())
        };
        let r = evaluate_with(&field, exact, &p.norm, &p.held_out, settings).unwrap();
        assert_eq!(r.corridor_violation_rate, 0.0);
        assert!(r.endpoint_error < 1e-12, "{}", r.endpoint_error);
        assert_eq!(r.anchor_mae, 0.0);
        assert!(r.fm_val_loss < 1e-20);
        assert_eq!(r.count, p.held_out.len());
    }
}
