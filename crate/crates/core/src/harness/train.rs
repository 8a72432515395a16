use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{batch_indices, evaluate, EvalReport, EvalSettings};
use super::prep::{prepare, Prepared};
use crate::corridor::{total_loss, LossBreakdown};
use crate::diffcore::Adam;
use crate::error::{Error, Result};
use crate::flowmatch::{draw_noise, fm_loss_and_grad, Example, FlowModel};
use crate::rng::{stream, Stream};
use crate::synthdata::Record;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: usize,
    /// Mean training loss components since the previous line.
    pub train: Option<LossBreakdown>,
    pub eval: EvalReport,
}

/// Which gradient path drives the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// The configured combined objective.
    Configured,
    /// Plain flow matching through its dedicated code path.
    FlowMatchingOnly,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub optimizer: Adam,
    pub log: Vec<MetricsLine>,
    /// Batch loss after every step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_report(&self) -> &EvalReport {
        &self.log.last().expect("a run always logs step 0").eval
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path, cfg: &RunConfig) -> Self {
        Self {
            metrics: dir.join("metrics.jsonl"),
            checkpoint: cfg.train.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json")),
        }
    }
}

pub fn eval_settings(cfg: &RunConfig) -> Result<EvalSettings> {
    Ok(EvalSettings {
        sampler_steps: cfg.eval.sampler_steps,
        target_mode: cfg.corridor.target_mode,
        layout: cfg.corridor.layout(),
        seed: cfg.eval_seed()?,
    })
}

pub fn prepare_run(cfg: &RunConfig, records: &[Record]) -> Result<Prepared> {
    prepare(records, &cfg.data, &cfg.corridor, cfg.train.holdout_every, cfg.eval.max_records)
}

/// Trains on `records` with the configured objective.
pub fn train(cfg: &RunConfig, records: &[Record], out: Option<&RunPaths>) -> Result<TrainOutcome> {
    train_with(cfg, records, Objective::Configured, out)
}

pub fn train_with(cfg: &RunConfig, records: &[Record], objective: Objective, out: Option<&RunPaths>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare_run(cfg, records)?;
    train_prepared(cfg, prepared, objective, out)
}

/// The loop itself. Deterministic in `(cfg, prepared)`: initialization,
/// batches and noise come from separate streams of the training seed.
///
/// A non-finite loss or gradient aborts the run; the checkpoint on disk is
/// then the last one written at a logging step.
pub fn train_prepared(cfg: &RunConfig, prepared: Prepared, objective: Objective, out: Option<&RunPaths>) -> Result<TrainOutcome> {
    let seed = cfg.train_seed()?;
    let settings = eval_settings(cfg)?;
    let Prepared { norm, train, held_out } = prepared;
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::invalid("both the training and held-out split must be non-empty"));
    }
    let mut model = FlowModel::new(cfg.arch(), norm, &mut stream(seed, Stream::Init))?;
    let mut adam = Adam::new(cfg.train.optimizer, &model.store);
    let mut rng = stream(seed, Stream::Train);
    let mut metrics = match out {
        Some(p) => Some(BufWriter::new(File::create(&p.metrics).map_err(|e| Error::io(&p.metrics, e))?)),
        None => None,
    };

    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.train.steps);
    let mut window = LossBreakdown::default();
    let mut in_window = 0usize;
    let dim = model.arch.dim();

    let mut emit = |step: usize, train: Option<LossBreakdown>, model: &FlowModel, adam: &Adam, rng: &rand_chacha::ChaCha8Rng| -> Result<MetricsLine> {
        let line = MetricsLine {
            step,
            train,
            eval: evaluate(model, &held_out, settings)?,
        };
        if let Some(w) = metrics.as_mut() {
            let path = &out.expect("writer implies paths").metrics;
            serde_json::to_writer(&mut *w, &line).map_err(|e| Error::io(path, e.into()))?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
        }
        if let Some(p) = out {
            Checkpoint::capture(model, Some(adam), Some(rng), step as u64).save(&p.checkpoint)?;
        }
        Ok(line)
    };

    log.push(emit(0, None, &model, &adam, &rng)?);
    for step in 1..=cfg.train.steps {
        let idx = batch_indices(&mut rng, train.len(), cfg.train.batch_size);
        let batch: Vec<Example> = idx.iter().map(|&i| train[i].clone()).collect();
        let draws = draw_noise(&mut rng, batch.len(), dim);
        let loss = match objective {
            Objective::Configured => total_loss(&mut model, &batch, &draws, &cfg.corridor)?,
            Objective::FlowMatchingOnly => {
                let v = fm_loss_and_grad(&mut model, &batch, &draws)?;
                LossBreakdown {
                    total: v,
                    fm: v,
                    ..LossBreakdown::default()
                }
            }
        };
        adam.step(&mut model.store)?;
        losses.push(loss.total);
        window.total += loss.total;
        window.fm += loss.fm;
        window.anchor += loss.anchor;
        window.buffer += loss.buffer;
        window.consistency += loss.consistency;
        in_window += 1;
        if step % cfg.train.eval_every == 0 || step == cfg.train.steps {
            let n = in_window as f64;
            let mean = LossBreakdown {
                total: window.total / n,
                fm: window.fm / n,
                anchor: window.anchor / n,
                buffer: window.buffer / n,
                consistency: window.consistency / n,
            };
            log.push(emit(step, Some(mean), &model, &adam, &rng)?);
            window = LossBreakdown::default();
            in_window = 0;
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer: adam,
        log,
        losses,
    })
}

/// Parses a metrics file back into lines.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, DataConfig};

    fn tiny_cfg(steps: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data = DataConfig {
            n_chunks: 80,
            ..DataConfig::default()
        };
        cfg.model.hidden = 16;
        cfg.model.enc_hidden = 8;
        cfg.model.head_hidden = 8;
        cfg.model.cond_dim = 4;
        cfg.train.steps = steps;
        cfg.train.batch_size = 4;
        cfg.train.eval_every = 5;
        cfg.train.seed = Some(11);
        cfg.eval.max_records = Some(6);
        cfg
    }

    fn data(cfg: &RunConfig) -> Vec<Record> {
        generate_dataset(&cfg.data, 4, cfg.corridor.alpha).unwrap()
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let cfg = tiny_cfg(0);
        let recs = data(&cfg);
        let run = train(&cfg, &recs, None).unwrap();
        let p = prepare_run(&cfg, &recs).unwrap();
        let init = FlowModel::new(cfg.arch(), p.norm, &mut stream(11, Stream::Init)).unwrap();
        assert_eq!(run.model.store, init.store);
        assert_eq!(run.log.len(), 1);
        assert!(run.losses.is_empty());
    }

    #[test]
    fn repeat_runs_match_and_log_in_order() {
        let cfg = tiny_cfg(12);
        let recs = data(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let paths = RunPaths::in_dir(dir.path(), &cfg);
        let a = train(&cfg, &recs, Some(&paths)).unwrap();
        let text_a = std::fs::read_to_string(&paths.metrics).unwrap();
        let b = train(&cfg, &recs, Some(&paths)).unwrap();
        let text_b = std::fs::read_to_string(&paths.metrics).unwrap();
        assert_eq!(text_a, text_b);
        assert_eq!(a.losses, b.losses);
        let steps: Vec<usize> = read_metrics(&paths.metrics).unwrap().iter().map(|l| l.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 12]);
        let ck = Checkpoint::load(&paths.checkpoint).unwrap();
        assert_eq!(ck.step, 12);
        assert_eq!(ck.model().unwrap().store, a.model.store);
    }

    #[test]
    fn zero_weights_follow_the_plain_path() {
        let mut cfg = tiny_cfg(6);
        cfg.corridor.lambda_dp = 0.0;
        cfg.corridor.lambda_corr = 0.0;
        let recs = data(&cfg);
        let a = train_with(&cfg, &recs, Objective::Configured, None).unwrap();
        let b = train_with(&cfg, &recs, Objective::FlowMatchingOnly, None).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model.store, b.model.store);
    }

    #[test]
    fn non_finite_data_aborts_and_keeps_checkpoint() {
        let cfg = tiny_cfg(5);
        let recs = data(&cfg);
        let mut p = prepare_run(&cfg, &recs).unwrap();
        for ex in p.train.iter_mut() {
            ex.x[0] = f64::NAN;
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = RunPaths::in_dir(dir.path(), &cfg);
        let err = train_prepared(&cfg, p, Objective::Configured, Some(&paths)).unwrap_err();
        assert!(matches!(err, Error::Numerical { ref component, .. } if component == "fm"), "{err}");
        assert_eq!(Checkpoint::load(&paths.checkpoint).unwrap().step, 0);
    }
}
