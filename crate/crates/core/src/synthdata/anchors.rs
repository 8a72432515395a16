use serde::{Deserialize, Serialize};

use super::chunk::{ChunkLayout, ExtendedActionChunk};
use crate::corridor::{consistency_weights, corridor_width, extract_anchors_g};
use crate::error::{Error, Result};
use crate::geometry::{select_chunk_anchors, sub, AnchorIndexSet, AnchorMethod, Polyline, Vec3};

/// What the ground-truth increments measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorTarget {
    /// Displacement between consecutive anchor states (default).
    InterAnchor,
    /// The single-step displacement at each anchor row.
    StepDelta,
}

/// Which target the anchor head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Delta,
    Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub indices: AnchorIndexSet,
    /// Increments `dp*_k` (meters).
    pub delta_targets: Vec<Vec3>,
    /// Anchor positions relative to the chunk start (meters).
    pub pos_targets: Vec<Vec3>,
    /// Corridor width.
    pub width: f64,
    pub weights: Vec<f64>,
}

impl AnchorSpec {
    pub fn k(&self) -> usize {
        self.indices.k()
    }

    pub fn targets(&self, mode: TargetMode) -> &[Vec3] {
        match mode {
            TargetMode::Delta => &self.delta_targets,
            TargetMode::Pos => &self.pos_targets,
        }
    }
}

/// Selects anchors on `segment` and derives targets, width and weights.
pub fn build_anchor_spec(
    chunk: &ExtendedActionChunk,
    segment: &Polyline,
    k: usize,
    method: AnchorMethod,
    target: AnchorTarget,
    alpha: f64,
) -> Result<AnchorSpec> {
    if segment.len() != chunk.rows() + 1 {
        return Err(Error::invalid(format!(
            "segment has {} points, chunk has {} rows",
            segment.len(),
            chunk.rows()
        )));
    }
    let indices = select_chunk_anchors(segment, k, method)?;
    anchor_spec_for(chunk, segment, indices, target, alpha)
}

/// Targets for already chosen anchor rows. Row `t` is segment point `t+1`.
pub fn anchor_spec_for(
    chunk: &ExtendedActionChunk,
    segment: &Polyline,
    indices: AnchorIndexSet,
    target: AnchorTarget,
    alpha: f64,
) -> Result<AnchorSpec> {
    let t = chunk.rows();
    if segment.len() != t + 1 {
        return Err(Error::invalid("segment/chunk length mismatch"));
    }
    if indices.indices.is_empty() {
        return Err(Error::invalid("at least one anchor is required"));
    }
    if !indices.indices.windows(2).all(|w| w[0] < w[1]) || *indices.indices.last().unwrap() >= t {
        return Err(Error::invalid(format!("bad anchor rows {:?}", indices.indices)));
    }
    let pts = segment.points();
    let origin = pts[0];
    let mut delta_targets = Vec::with_capacity(indices.k());
    let mut pos_targets = Vec::with_capacity(indices.k());
    let mut prev = origin;
    let mut acc = [0.0; 3];
    for &row in &indices.indices {
        let here = pts[row + 1];
        let d = match target {
            AnchorTarget::InterAnchor => sub(here, prev),
            AnchorTarget::StepDelta => chunk.delta(row),
        };
        delta_targets.push(d);
        pos_targets.push(match target {
            AnchorTarget::InterAnchor => {
                acc = [acc[0] + d[0], acc[1] + d[1], acc[2] + d[2]];
                acc
            }
            AnchorTarget::StepDelta => sub(here, origin),
        });
        prev = here;
    }
    let g_star = extract_anchors_g(chunk.as_slice(), ChunkLayout::Extended, &indices.indices)?;
    let width = corridor_width(&g_star, &delta_targets, alpha)?;
    let weights = consistency_weights(indices.k())?;
    Ok(AnchorSpec {
        indices,
        delta_targets,
        pos_targets,
        width,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;
    use crate::synthdata::chunk::chunk_episode;
    use crate::synthdata::episode::{gen_episode, trajectory_for, Episode, Family, GeneratorConfig};

    fn straight_chunk() -> (ExtendedActionChunk, Polyline) {
        let cfg = GeneratorConfig {
            t_full: 13,
            ..Default::default()
        };
        let (traj, grip) = trajectory_for(Family::Line, [0.0; 3], [0.12, 0.06, 0.0], None, &cfg).unwrap();
        let ep = Episode {
            context: gen_episode(Family::Line, 0, &GeneratorConfig::default()).unwrap().context,
            trajectory: traj,
            gripper: grip,
            dt: cfg.dt,
            seed: 0,
        };
        // 13 samples, T = 12: the first window covers the whole line
        let c = chunk_episode(&ep, 12, 1, 0.0, 0).unwrap().remove(0);
        (c.chunk, c.segment)
    }

    #[test]
    fn uniform_straight_line_targets() {
        let (chunk, seg) = straight_chunk();
        let spec = build_anchor_spec(&chunk, &seg, 3, AnchorMethod::Uniform, AnchorTarget::InterAnchor, 2.0).unwrap();
        assert_eq!(spec.indices.indices, vec![3, 7, 11]);
        let p = seg.points();
        let bounds = [0usize, 4, 8, 12];
        for k in 0..3 {
            assert_eq!(spec.delta_targets[k], sub(p[bounds[k + 1]], p[bounds[k]]));
        }
        let mut acc = [0.0; 3];
        for k in 0..3 {
            for i in 0..3 {
                acc[i] += spec.delta_targets[k][i];
            }
            assert_eq!(spec.pos_targets[k], acc);
        }
        assert_eq!(spec.weights, vec![1.0 / 6.0, 1.0 / 3.0, 0.5]);
    }

    #[test]
    fn single_terminal_anchor_is_total_displacement() {
        let (chunk, seg) = straight_chunk();
        for method in [AnchorMethod::Uniform, AnchorMethod::RdpDp] {
            let spec = build_anchor_spec(&chunk, &seg, 1, method, AnchorTarget::InterAnchor, 2.0).unwrap();
            assert_eq!(spec.indices.indices, vec![11]);
            let p = seg.points();
            assert_eq!(spec.delta_targets[0], sub(p[12], p[0]));
        }
    }

    #[test]
    fn width_is_twice_worst_discrepancy() {
        let ep = gen_episode(Family::MinJerkPickPlace, 17, &GeneratorConfig::default()).unwrap();
        for c in chunk_episode(&ep, 16, 4, 0.002, 3).unwrap() {
            let spec = build_anchor_spec(&c.chunk, &c.segment, 3, AnchorMethod::RdpDp, AnchorTarget::InterAnchor, 2.0).unwrap();
            // independent evaluation straight from the chunk rows
            let worst = spec
                .indices
                .indices
                .iter()
                .zip(&spec.delta_targets)
                .map(|(&row, tgt)| {
                    let r = c.chunk.row(row);
                    norm([r[4] - tgt[0], r[5] - tgt[1], r[6] - tgt[2]])
                })
                .fold(0.0, f64::max);
            assert_eq!(spec.width, 2.0 * worst);
            assert!(spec.width >= 0.0);
        }
    }

    #[test]
    fn step_delta_targets_collapse_the_corridor() {
        let ep = gen_episode(Family::Arc, 2, &GeneratorConfig::default()).unwrap();
        for c in chunk_episode(&ep, 16, 8, 0.0, 0).unwrap() {
            let spec = build_anchor_spec(&c.chunk, &c.segment, 3, AnchorMethod::Uniform, AnchorTarget::StepDelta, 2.0).unwrap();
            assert_eq!(spec.width, 0.0);
        }
    }

    #[test]
    fn too_many_anchors() {
        let (chunk, seg) = straight_chunk();
        assert!(build_anchor_spec(&chunk, &seg, 12, AnchorMethod::Uniform, AnchorTarget::InterAnchor, 2.0).is_err());
        assert!(build_anchor_spec(&chunk, &seg, 0, AnchorMethod::RdpDp, AnchorTarget::InterAnchor, 2.0).is_err());
    }
}
