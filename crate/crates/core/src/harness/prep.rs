//! Records to model-space examples: re-anchoring, episode split, scaling.

use std::collections::HashMap;

use crate::corridor::CorridorConfig;
use crate::error::{Error, Result};
use crate::flowmatch::{Example, Normalizer};
use crate::synthdata::{ChunkLayout, DataConfig, Record};

/// Chunks grouped by episode: every `every`-th episode (in order of first
/// appearance) goes to `held_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Record>,
    pub held_out: Vec<Record>,
}

pub fn split_by_episode(records: &[Record], every: usize) -> Result<Split> {
    if every < 2 {
        return Err(Error::invalid("holdout cadence must be >= 2"));
    }
    let mut order: HashMap<u64, usize> = HashMap::new();
    for r in records {
        let next = order.len();
        order.entry(r.seed).or_insert(next);
    }
    if order.len() < 2 {
        return Err(Error::invalid("need chunks from at least two episodes to hold some out"));
    }
    // small corpora: make sure at least the last episode is held out
    let last = order.len() - 1;
    let held = |i: usize| i % every == every - 1 || (order.len() < every && i == last);
    let (mut train, mut held_out) = (Vec::new(), Vec::new());
    for r in records {
        if held(order[&r.seed]) {
            held_out.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok(Split { train, held_out })
}

/// Rebuilds anchors when the run asks for a different method or count than
/// the file was written with.
pub fn align_anchors(records: &[Record], data: &DataConfig, corridor: &CorridorConfig) -> Result<Vec<Record>> {
    records
        .iter()
        .map(|r| {
            if r.anchor_method == corridor.anchor_method && r.anchor_indices.len() == data.k {
                Ok(r.clone())
            } else {
                r.with_anchors(data.k, corridor.anchor_method, data.anchor_target, corridor.alpha)
            }
        })
        .collect()
}

pub fn raw_vector(r: &Record, layout: ChunkLayout) -> Result<Vec<f64>> {
    Ok(layout.project(&r.chunk()?))
}

pub fn fit_normalizer(records: &[Record], layout: ChunkLayout) -> Result<Normalizer> {
    let xs = records.iter().map(|r| raw_vector(r, layout)).collect::<Result<Vec<_>>>()?;
    Normalizer::fit(&xs)
}

pub fn to_examples(records: &[Record], layout: ChunkLayout, norm: &Normalizer) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let chunk = r.chunk()?;
            let x = norm.normalize(&layout.project(&chunk));
            if x.len() != norm.dim() {
                return Err(Error::Config(format!(
                    "record chunk has {} entries, model expects {}",
                    x.len(),
                    norm.dim()
                )));
            }
            let mut displacement = [0.0; 3];
            for t in 0..chunk.rows() {
                let d = chunk.delta(t);
                for j in 0..3 {
                    displacement[j] += d[j];
                }
            }
            Ok(Example {
                context: r.context.context_vector(),
                x,
                anchors: r.anchor_spec()?,
                family: r.context.family,
                episode: r.seed,
                displacement,
            })
        })
        .collect()
}

/// Everything a run needs from a record set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub norm: Normalizer,
    pub train: Vec<Example>,
    pub held_out: Vec<Example>,
}

pub fn prepare(
    records: &[Record],
    data: &DataConfig,
    corridor: &CorridorConfig,
    holdout_every: usize,
    max_eval: Option<usize>,
) -> Result<Prepared> {
    if records.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let chunk_len = records[0].chunk.len();
    if chunk_len != data.chunk_len {
        return Err(Error::Config(format!(
            "dataset chunks have {chunk_len} rows, config says data.chunk_len = {}",
            data.chunk_len
        )));
    }
    let aligned = align_anchors(records, data, corridor)?;
    let split = split_by_episode(&aligned, holdout_every)?;
    let layout = corridor.layout();
    let norm = fit_normalizer(&split.train, layout)?;
    let train = to_examples(&split.train, layout, &norm)?;
    let mut held = split.held_out;
    if let Some(m) = max_eval {
        held.truncate(m);
    }
    let held_out = to_examples(&held, layout, &norm)?;
    Ok(Prepared { norm, train, held_out })
}

/// Held-out examples scaled with an existing normalizer (e.g. from a
/// checkpoint), together with the records they came from.
pub fn held_out_with(
    records: &[Record],
    data: &DataConfig,
    corridor: &CorridorConfig,
    holdout_every: usize,
    max_eval: Option<usize>,
    norm: &Normalizer,
) -> Result<(Vec<Record>, Vec<Example>)> {
    let aligned = align_anchors(records, data, corridor)?;
    let mut held = split_by_episode(&aligned, holdout_every)?.held_out;
    if let Some(m) = max_eval {
        held.truncate(m);
    }
    let ex = to_examples(&held, corridor.layout(), norm)?;
    Ok((held, ex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorMethod;
    use crate::synthdata::generate_dataset;

    fn small() -> (DataConfig, Vec<Record>) {
        let cfg = DataConfig {
            n_chunks: 120,
            ..DataConfig::default()
        };
        let recs = generate_dataset(&cfg, 5, 2.0).unwrap();
        (cfg, recs)
    }

    #[test]
    fn split_never_shares_episodes() {
        let (_, recs) = small();
        let s = split_by_episode(&recs, 10).unwrap();
        assert!(!s.held_out.is_empty() && !s.train.is_empty());
        assert_eq!(s.train.len() + s.held_out.len(), recs.len());
        for h in &s.held_out {
            assert!(s.train.iter().all(|t| t.seed != h.seed));
        }
    }

    #[test]
    fn realigned_anchors_follow_the_run() {
        let (data, recs) = small();
        let corr = CorridorConfig {
            anchor_method: AnchorMethod::Uniform,
            ..CorridorConfig::default()
        };
        let out = align_anchors(&recs, &data, &corr).unwrap();
        assert!(out.iter().all(|r| r.anchor_method == AnchorMethod::Uniform));
        assert!(out.iter().all(|r| r.anchor_indices == vec![4, 10, 15]));
        let same = align_anchors(&recs, &data, &CorridorConfig::default()).unwrap();
        assert_eq!(same, recs);
    }

    #[test]
    fn examples_are_standardized() {
        let (data, recs) = small();
        let p = prepare(&recs, &data, &CorridorConfig::default(), 10, None).unwrap();
        let d = p.norm.dim();
        assert_eq!(d, 16 * 7);
        for j in 0..d {
            let m: f64 = p.train.iter().map(|e| e.x[j]).sum::<f64>() / p.train.len() as f64;
            assert!(m.abs() < 1e-9);
        }
    }
}
