//! Dataset generation and the line-delimited JSON file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::anchors::{anchor_spec_for, build_anchor_spec, AnchorSpec, AnchorTarget};
use super::chunk::{chunk_episode, ExtendedActionChunk};
use super::episode::{gen_episode, Family, GeneratorConfig, TaskContext};
use crate::error::{Error, Result};
use crate::geometry::{AnchorIndexSet, AnchorMethod, Polyline, Vec3};
use crate::rng::child_seed;

/// One chunk per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub context: TaskContext,
    /// `T` rows of `[a_t ; dp_t]`.
    pub chunk: Vec<Vec<f64>>,
    pub anchor_indices: Vec<usize>,
    pub delta_targets: Vec<Vec3>,
    pub pos_targets: Vec<Vec3>,
    pub delta_width: f64,
    /// Episode seed; chunks of one episode share it.
    pub seed: u64,
    pub anchor_method: AnchorMethod,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub generated: bool,
}

impl Record {
    pub fn chunk(&self) -> Result<ExtendedActionChunk> {
        ExtendedActionChunk::from_rows(&self.chunk)
    }

    pub fn anchor_spec(&self) -> Result<AnchorSpec> {
        let k = self.anchor_indices.len();
        if self.delta_targets.len() != k || self.pos_targets.len() != k {
            return Err(Error::invalid("anchor arrays disagree on K"));
        }
        Ok(AnchorSpec {
            indices: AnchorIndexSet {
                indices: self.anchor_indices.clone(),
                method: self.anchor_method,
            },
            delta_targets: self.delta_targets.clone(),
            pos_targets: self.pos_targets.clone(),
            width: self.delta_width,
            weights: crate::corridor::consistency_weights(k)?,
        })
    }

    /// Trajectory segment rebuilt from the displacement columns.
    pub fn segment(&self) -> Result<Polyline> {
        Polyline::new(self.chunk()?.reconstruct_segment(self.context.current_pos))
    }

    /// Recomputes anchors with another selection rule or target semantics.
    pub fn with_anchors(&self, k: usize, method: AnchorMethod, target: AnchorTarget, alpha: f64) -> Result<Record> {
        let chunk = self.chunk()?;
        let seg = self.segment()?;
        let spec = build_anchor_spec(&chunk, &seg, k, method, target, alpha)?;
        Record::assemble(self.context.clone(), &chunk, &seg, spec.indices, target, alpha, self.seed)
    }

    /// Quantizes every number to 9 significant digits, then derives the
    /// anchor targets and width from the quantized values so the stored
    /// width is consistent with the stored chunk.
    fn assemble(
        context: TaskContext,
        chunk: &ExtendedActionChunk,
        segment: &Polyline,
        indices: AnchorIndexSet,
        target: AnchorTarget,
        alpha: f64,
        seed: u64,
    ) -> Result<Record> {
        let q = |v: Vec3| v.map(round_sig9);
        let context = TaskContext {
            start_pos: q(context.start_pos),
            goal_pos: q(context.goal_pos),
            via_pos: context.via_pos.map(q),
            current_pos: q(context.current_pos),
            gripper: round_sig9(context.gripper),
            progress: round_sig9(context.progress),
            ..context
        };
        let rows: Vec<Vec<f64>> = chunk
            .to_rows()
            .into_iter()
            .map(|r| r.into_iter().map(round_sig9).collect())
            .collect();
        let qchunk = ExtendedActionChunk::from_rows(&rows)?;
        let qseg = Polyline::new(segment.points().iter().map(|p| q(*p)).collect())?;
        let spec = anchor_spec_for(&qchunk, &qseg, indices, target, alpha)?;
        let delta_targets: Vec<Vec3> = spec.delta_targets.iter().map(|v| q(*v)).collect();
        let pos_targets: Vec<Vec3> = spec.pos_targets.iter().map(|v| q(*v)).collect();
        let g = crate::corridor::extract_anchors_g(qchunk.as_slice(), super::ChunkLayout::Extended, &spec.indices.indices)?;
        let width = round_sig9(crate::corridor::corridor_width(&g, &delta_targets, alpha)?);
        Ok(Record {
            context,
            chunk: rows,
            anchor_indices: spec.indices.indices.clone(),
            delta_targets,
            pos_targets,
            delta_width: width,
            seed,
            anchor_method: spec.indices.method,
            generated: false,
        })
    }
}

/// `x` rounded to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Total number of chunks to emit.
    pub n_chunks: usize,
    /// Episode `i` uses `families[i % len]`.
    pub families: Vec<Family>,
    pub generator: GeneratorConfig,
    pub chunk_len: usize,
    pub stride: usize,
    pub noise_std: f64,
    pub k: usize,
    pub anchor_method: AnchorMethod,
    pub anchor_target: AnchorTarget,
    /// Master seed; there is no default.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_chunks: 4000,
            families: Family::ALL.to_vec(),
            generator: GeneratorConfig::default(),
            chunk_len: 16,
            stride: 4,
            noise_std: 0.002,
            k: 3,
            anchor_method: AnchorMethod::RdpDp,
            anchor_target: AnchorTarget::InterAnchor,
            seed: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.families.is_empty() {
            return Err(Error::Config("data.families must not be empty".into()));
        }
        if self.chunk_len < 2 || self.chunk_len > self.generator.t_full {
            return Err(Error::Config(format!(
                "data.chunk_len must be in [2, t_full={}]",
                self.generator.t_full
            )));
        }
        if self.k == 0 || self.k > self.chunk_len - 1 {
            return Err(Error::Config("data.k must be in [1, chunk_len-1]".into()));
        }
        if self.stride == 0 || !(self.noise_std >= 0.0) {
            return Err(Error::Config("data.stride must be > 0 and data.noise_std >= 0".into()));
        }
        Ok(())
    }
}

/// Pure function of `(cfg, master_seed, alpha)`.
pub fn generate_dataset(cfg: &DataConfig, master_seed: u64, alpha: f64) -> Result<Vec<Record>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_chunks);
    let mut episode = 0u64;
    while out.len() < cfg.n_chunks {
        let family = cfg.families[episode as usize % cfg.families.len()];
        let seed = child_seed(master_seed, episode);
        let ep = gen_episode(family, seed, &cfg.generator)?;
        for c in chunk_episode(&ep, cfg.chunk_len, cfg.stride, cfg.noise_std, child_seed(seed, 1))? {
            if out.len() == cfg.n_chunks {
                break;
            }
            let spec = build_anchor_spec(&c.chunk, &c.segment, cfg.k, cfg.anchor_method, cfg.anchor_target, alpha)?;
            out.push(Record::assemble(
                c.context,
                &c.chunk,
                &c.segment,
                spec.indices,
                cfg.anchor_target,
                alpha,
                seed,
            )?);
        }
        episode += 1;
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            if e.is_data() {
                Error::Schema {
                    line: line_no,
                    msg: e.to_string(),
                }
            } else {
                Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                }
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(f), records).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(f)
}
