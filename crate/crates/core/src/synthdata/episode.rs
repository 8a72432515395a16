use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, dot, norm, sub, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Line,
    Arc,
    MinJerkPickPlace,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Line, Family::Arc, Family::MinJerkPickPlace];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Line => "line",
            Family::Arc => "arc",
            Family::MinJerkPickPlace => "min_jerk_pick_place",
        }
    }

    fn one_hot(&self) -> [f64; 3] {
        match self {
            Family::Line => [1.0, 0.0, 0.0],
            Family::Arc => [0.0, 1.0, 0.0],
            Family::MinJerkPickPlace => [0.0, 0.0, 1.0],
        }
    }
}

/// Task descriptor standing in for the observation/instruction pair, plus
/// the proprioceptive state at the chunk start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskContext {
    pub family: Family,
    pub start_pos: Vec3,
    pub goal_pos: Vec3,
    pub via_pos: Option<Vec3>,
    pub current_pos: Vec3,
    pub gripper: f64,
    /// Elapsed fraction of the episode at the chunk start.
    pub progress: f64,
}

impl TaskContext {
    pub const DIM: usize = 17;

    /// `[start, goal, via (zeros if absent), family one-hot, current, gripper, progress]`.
    pub fn context_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&self.start_pos);
        v.extend_from_slice(&self.goal_pos);
        v.extend_from_slice(&self.via_pos.unwrap_or([0.0; 3]));
        v.extend_from_slice(&self.family.one_hot());
        v.extend_from_slice(&self.current_pos);
        v.push(self.gripper);
        v.push(self.progress);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of dense trajectory samples per episode.
    pub t_full: usize,
    /// Control period in seconds.
    pub dt: f64,
    /// Speed bound in m/s; every step satisfies `|p[k+1]-p[k]| <= v_max*dt`.
    pub v_max: f64,
    pub workspace_min: Vec3,
    pub workspace_max: Vec3,
    /// Minimum start-goal distance in meters.
    pub min_travel: f64,
    /// Arc bulge as a fraction of the chord, sampled in this range.
    pub arc_bulge: [f64; 2],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            t_full: 64,
            dt: 0.05,
            v_max: 1.5,
            workspace_min: [-0.25, -0.25, 0.05],
            workspace_max: [0.25, 0.25, 0.30],
            min_travel: 0.15,
            arc_bulge: [0.1, 0.4],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_full < 8 {
            return Err(Error::invalid(format!("t_full must be >= 8, got {}", self.t_full)));
        }
        if !(self.v_max > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("v_max and dt must be positive"));
        }
        if (0..3).any(|i| !(self.workspace_max[i] > self.workspace_min[i])) {
            return Err(Error::invalid("workspace_max must exceed workspace_min"));
        }
        if !(self.min_travel > 0.0) {
            return Err(Error::invalid("min_travel must be positive"));
        }
        if !(0.0 < self.arc_bulge[0] && self.arc_bulge[0] <= self.arc_bulge[1]) {
            return Err(Error::invalid("arc_bulge must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Vec<Vec3>,
    pub gripper: Vec<f64>,
    pub context: TaskContext,
    pub dt: f64,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    /// Position at `k`, holding the final sample past the end.
    pub fn position(&self, k: usize) -> Vec3 {
        self.trajectory[k.min(self.trajectory.len() - 1)]
    }

    pub fn gripper_at(&self, k: usize) -> f64 {
        self.gripper[k.min(self.gripper.len() - 1)]
    }
}

/// Quintic minimum-jerk profile on `[0, 1]`.
pub fn min_jerk(s: f64) -> f64 {
    let s3 = s * s * s;
    s3 * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [
        a[0] + s * (b[0] - a[0]),
        a[1] + s * (b[1] - a[1]),
        a[2] + s * (b[2] - a[2]),
    ]
}

fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn line_positions(start: Vec3, goal: Vec3, n: usize) -> Vec<Vec3> {
    let last = (n - 1) as f64;
    (0..n).map(|k| lerp(start, goal, k as f64 / last)).collect()
}

/// Constant angular speed along the circle through `start`, `via`, `goal`.
pub fn arc_positions(start: Vec3, via: Vec3, goal: Vec3, n: usize) -> Result<Vec<Vec3>> {
    let a = sub(start, goal);
    let b = sub(via, goal);
    let axb = cross(a, b);
    let den = 2.0 * dot(axb, axb);
    if den < 1e-18 {
        return Err(Error::invalid("arc points are collinear"));
    }
    let num = cross(sub(scale(b, dot(a, a)), scale(a, dot(b, b))), axb);
    let center = add(goal, scale(num, 1.0 / den));
    let radius = norm(sub(start, center));

    let normal = cross(sub(via, start), sub(goal, start));
    let normal = scale(normal, 1.0 / norm(normal));
    let e1 = scale(sub(start, center), 1.0 / radius);
    let e2 = cross(normal, e1);
    let angle = |p: Vec3| {
        let r = sub(p, center);
        let th = dot(r, e2).atan2(dot(r, e1));
        if th < 0.0 {
            th + std::f64::consts::TAU
        } else {
            th
        }
    };
    let end = angle(goal);
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|k| {
            if k + 1 == n {
                return goal;
            }
            let th = end * k as f64 / last;
            add(center, add(scale(e1, radius * th.cos()), scale(e2, radius * th.sin())))
        })
        .collect())
}

/// Two minimum-jerk segments meeting at `via`; the gripper closes there.
pub fn pick_place_positions(start: Vec3, via: Vec3, goal: Vec3, n: usize) -> (Vec<Vec3>, Vec<f64>) {
    let split = (n - 1) / 2;
    let rest = n - 1 - split;
    let mut pos = Vec::with_capacity(n);
    let mut grip = Vec::with_capacity(n);
    for k in 0..n {
        if k <= split {
            pos.push(lerp(start, via, min_jerk(k as f64 / split as f64)));
        } else {
            pos.push(lerp(via, goal, min_jerk((k - split) as f64 / rest as f64)));
        }
        grip.push(if k < split { 0.0 } else { 1.0 });
    }
    (pos, grip)
}

fn sample_point<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Vec3 {
    let mut p = [0.0; 3];
    for i in 0..3 {
        p[i] = rng.random_range(cfg.workspace_min[i]..cfg.workspace_max[i]);
    }
    p
}

fn sample_pair<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> (Vec3, Vec3) {
    loop {
        let (s, g) = (sample_point(rng, cfg), sample_point(rng, cfg));
        if norm(sub(g, s)) >= cfg.min_travel {
            return (s, g);
        }
    }
}

/// Builds the dense path for fixed endpoints.
pub fn trajectory_for(
    family: Family,
    start: Vec3,
    goal: Vec3,
    via: Option<Vec3>,
    cfg: &GeneratorConfig,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    cfg.validate()?;
    if norm(sub(goal, start)) == 0.0 {
        return Err(Error::invalid("goal must differ from start"));
    }
    let n = cfg.t_full;
    let need_via = || via.ok_or_else(|| Error::invalid(format!("{} needs a via point", family.as_str())));
    let (pos, grip) = match family {
        Family::Line => (line_positions(start, goal, n), vec![0.0; n]),
        Family::Arc => (arc_positions(start, need_via()?, goal, n)?, vec![0.0; n]),
        Family::MinJerkPickPlace => pick_place_positions(start, need_via()?, goal, n),
    };
    let bound = cfg.v_max * cfg.dt;
    for (k, w) in pos.windows(2).enumerate() {
        let step = norm(sub(w[1], w[0]));
        if step > bound {
            return Err(Error::invalid(format!(
                "step {k} moves {step:.4} m, above v_max*dt = {bound:.4} m"
            )));
        }
    }
    Ok((pos, grip))
}

/// Samples task endpoints from `seed` and builds the episode.
pub fn gen_episode(family: Family, seed: u64, cfg: &GeneratorConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, goal) = sample_pair(&mut rng, cfg);
    let via = match family {
        Family::Line => None,
        Family::Arc => {
            let chord = sub(goal, start);
            let len = norm(chord);
            // random direction orthogonal to the chord
            let dir = loop {
                let r = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                let perp = sub(r, scale(chord, dot(r, chord) / (len * len)));
                let pn = norm(perp);
                if pn > 1e-3 {
                    break scale(perp, 1.0 / pn);
                }
            };
            let bulge = rng.random_range(cfg.arc_bulge[0]..=cfg.arc_bulge[1]) * len;
            Some(add(lerp(start, goal, 0.5), scale(dir, bulge)))
        }
        Family::MinJerkPickPlace => loop {
            let v = sample_point(&mut rng, cfg);
            if norm(sub(v, start)) >= cfg.min_travel && norm(sub(goal, v)) >= cfg.min_travel {
                break Some(v);
            }
        },
    };
    let (trajectory, gripper) = trajectory_for(family, start, goal, via, cfg)?;
    let context = TaskContext {
        family,
        start_pos: start,
        goal_pos: goal,
        via_pos: via,
        current_pos: start,
        gripper: gripper[0],
        progress: 0.0,
    };
    Ok(Episode {
        trajectory,
        gripper,
        context,
        dt: cfg.dt,
        seed,
    })
}
