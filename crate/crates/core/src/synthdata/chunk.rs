use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::episode::{Episode, TaskContext};
use crate::error::{Error, Result};
use crate::geometry::{sub, Polyline, Vec3};

/// Raw action columns: commanded EE delta (3) and gripper command (1).
pub const ACTION_DIM: usize = 4;
/// Realized EE displacement columns appended by extra-A.
pub const DELTA_DIM: usize = 3;
pub const EXT_DIM: usize = ACTION_DIM + DELTA_DIM;

/// Column layout of a (possibly decoded) chunk as seen by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChunkLayout {
    /// `[a_t ; dp_t]`, seven columns; the spatial read-out is `dp_t`.
    Extended,
    /// `a_t` only, four columns; the spatial read-out is the commanded delta.
    ActionsOnly,
}

impl ChunkLayout {
    pub fn width(&self) -> usize {
        match self {
            ChunkLayout::Extended => EXT_DIM,
            ChunkLayout::ActionsOnly => ACTION_DIM,
        }
    }

    /// First of the three columns read as the step displacement.
    pub fn spatial_col(&self) -> usize {
        match self {
            ChunkLayout::Extended => ACTION_DIM,
            ChunkLayout::ActionsOnly => 0,
        }
    }

    /// Drops columns this layout does not carry.
    pub fn project(&self, chunk: &ExtendedActionChunk) -> Vec<f64> {
        match self {
            ChunkLayout::Extended => chunk.as_slice().to_vec(),
            ChunkLayout::ActionsOnly => chunk
                .as_slice()
                .chunks_exact(EXT_DIM)
                .flat_map(|r| r[..ACTION_DIM].iter().copied())
                .collect(),
        }
    }
}

/// Row-major `T x 7` matrix `[a_t ; dp_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedActionChunk {
    rows: usize,
    data: Vec<f64>,
}

impl ExtendedActionChunk {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("chunk has no rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * EXT_DIM);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != EXT_DIM {
                return Err(Error::invalid(format!(
                    "chunk row {t} has {} columns, expected {EXT_DIM}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), data)
    }

    pub fn from_flat(rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * EXT_DIM {
            return Err(Error::invalid(format!(
                "flat chunk has {} entries, expected {}",
                data.len(),
                rows * EXT_DIM
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("chunk contains non-finite entries"));
        }
        Ok(Self { rows, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * EXT_DIM..(t + 1) * EXT_DIM]
    }

    pub fn delta(&self, t: usize) -> Vec3 {
        let r = self.row(t);
        [r[ACTION_DIM], r[ACTION_DIM + 1], r[ACTION_DIM + 2]]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(EXT_DIM).map(|r| r.to_vec()).collect()
    }

    /// Rebuilds the `T+1` point segment from `start` by summing the
    /// displacement columns.
    pub fn reconstruct_segment(&self, start: Vec3) -> Vec<Vec3> {
        let mut pts = Vec::with_capacity(self.rows + 1);
        let mut p = start;
        pts.push(p);
        for t in 0..self.rows {
            let d = self.delta(t);
            p = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
            pts.push(p);
        }
        pts
    }
}

/// One sliding window over an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSample {
    pub start: usize,
    pub context: TaskContext,
    pub chunk: ExtendedActionChunk,
    /// Chunk start plus one point per step.
    pub segment: Polyline,
}

/// Cuts `ep` into length-`t` windows every `stride` samples.
///
/// Row `t` holds the commanded delta (true delta plus Gaussian actuation
/// noise), the gripper command for the next sample and the noise-free
/// realized delta. Windows may run one sample past the trajectory end; the
/// final position is held there.
pub fn chunk_episode(
    ep: &Episode,
    t: usize,
    stride: usize,
    noise_std: f64,
    noise_seed: u64,
) -> Result<Vec<ChunkSample>> {
    let n = ep.len();
    if t == 0 || t > n {
        return Err(Error::invalid(format!("chunk length {t} not in [1, {n}]")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::invalid(format!("noise_std must be >= 0, got {noise_std}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let last_start = n - t;
    let mut out = Vec::new();
    for s in (0..=last_start).step_by(stride) {
        let mut data = Vec::with_capacity(t * super::EXT_DIM);
        let mut segment = Vec::with_capacity(t + 1);
        segment.push(ep.position(s));
        for r in 0..t {
            let dp = sub(ep.position(s + r + 1), ep.position(s + r));
            segment.push(ep.position(s + r + 1));
            for c in 0..3 {
                data.push(dp[c] + noise.sample(&mut rng));
            }
            data.push(ep.gripper_at(s + r + 1));
            data.extend_from_slice(&dp);
        }
        let mut context = ep.context.clone();
        context.current_pos = ep.position(s);
        context.gripper = ep.gripper_at(s);
        context.progress = s as f64 / (n - 1) as f64;
        out.push(ChunkSample {
            start: s,
            context,
            chunk: ExtendedActionChunk::from_flat(t, data)?,
            segment: Polyline::new(segment)?,
        });
    }
    Ok(out)
}
