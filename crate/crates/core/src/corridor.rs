//! Anchor-corridor terms and the combined objective.
//!
//! `g` reads the spatial columns of a chunk at the anchor rows. The
//! ground-truth increments `dp*` come from the data, so the corridor terms
//! only ever touch the velocity field (through the one-step decode) and the
//! context encoder; the anchor head is trained by its own regression term.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::flowmatch::{fm_term, Example, FlowDraw, FlowModel};
use crate::geometry::{norm, sub, AnchorMethod, Vec3};
use crate::synthdata::{AnchorSpec, ChunkLayout, TargetMode};

/// Linear ramp `w_tau = 2 tau / (K (K + 1))`, summing to one.
pub fn consistency_weights(k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("need at least one anchor"));
    }
    let denom = (k * (k + 1)) as f64;
    Ok((1..=k).map(|tau| 2.0 * tau as f64 / denom).collect())
}

/// Flat positions of the spatial columns at the given rows.
pub fn anchor_columns(layout: ChunkLayout, indices: &[usize]) -> Vec<usize> {
    let (w, c) = (layout.width(), layout.spatial_col());
    indices.iter().flat_map(|&t| (0..3).map(move |j| t * w + c + j)).collect()
}

/// `g(A)`: the spatial read-out at each anchor row.
pub fn extract_anchors_g(data: &[f64], layout: ChunkLayout, indices: &[usize]) -> Result<Vec<Vec3>> {
    let w = layout.width();
    if !data.len().is_multiple_of(w) {
        return Err(Error::invalid(format!("{} entries do not split into rows of {w}", data.len())));
    }
    let rows = data.len() / w;
    if let Some(&bad) = indices.iter().find(|&&t| t >= rows) {
        return Err(Error::invalid(format!("anchor row {bad} outside chunk of {rows} rows")));
    }
    let c = layout.spatial_col();
    Ok(indices
        .iter()
        .map(|&t| {
            let r = &data[t * w + c..t * w + c + 3];
            [r[0], r[1], r[2]]
        })
        .collect())
}

fn check_pair(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid("need at least one anchor"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(format!("{} anchors vs {} targets", a.len(), b.len())));
    }
    Ok(())
}

/// Per-anchor residual norms `|g_k - dp*_k|`.
pub fn residual_norms(g: &[Vec3], targets: &[Vec3]) -> Result<Vec<f64>> {
    check_pair(g, targets)?;
    Ok(g.iter().zip(targets).map(|(a, b)| norm(sub(*a, *b))).collect())
}

/// `alpha * max_k |g(A*)_k - dp*_k|`.
pub fn corridor_width(g: &[Vec3], targets: &[Vec3], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let r = residual_norms(g, targets)?;
    Ok(alpha * r.into_iter().fold(0.0, f64::max))
}

/// Mean hinge of residual norms above `width`.
pub fn buffer_loss(g: &[Vec3], targets: &[Vec3], width: f64) -> Result<f64> {
    let r = residual_norms(g, targets)?;
    Ok(r.iter().map(|e| (e - width).max(0.0)).sum::<f64>() / r.len() as f64)
}

/// Weighted squared mismatch of running sums.
pub fn consistency_loss(g: &[Vec3], targets: &[Vec3], weights: &[f64]) -> Result<f64> {
    check_pair(g, targets)?;
    if weights.len() != g.len() {
        return Err(Error::invalid("one weight per anchor is required"));
    }
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for ((a, b), w) in g.iter().zip(targets).zip(weights) {
        for j in 0..3 {
            acc[j] += a[j] - b[j];
        }
        total += w * (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]);
    }
    Ok(total)
}

/// Diagnostics of a decoded chunk against its anchor spec at noise level `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorEval {
    pub residuals: Vec<f64>,
    pub buffer: f64,
    pub consistency: f64,
    /// `w(t) = 1 - t`.
    pub weight: f64,
    /// Anchors outside the corridor.
    pub active: Vec<bool>,
}

impl CorridorEval {
    pub fn violated(&self) -> bool {
        self.active.iter().any(|&a| a)
    }
}

pub fn corridor_eval(decoded: &[f64], layout: ChunkLayout, spec: &AnchorSpec, t: f64) -> Result<CorridorEval> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    let g = extract_anchors_g(decoded, layout, &spec.indices.indices)?;
    let residuals = residual_norms(&g, &spec.delta_targets)?;
    Ok(CorridorEval {
        buffer: buffer_loss(&g, &spec.delta_targets, spec.width)?,
        consistency: consistency_loss(&g, &spec.delta_targets, &spec.weights)?,
        weight: 1.0 - t,
        active: residuals.iter().map(|&r| r > spec.width).collect(),
        residuals,
    })
}

/// `(1 - t) (buf + cons)` with either summand switched off by `cfg`.
pub fn corridor_term(decoded: &[f64], layout: ChunkLayout, spec: &AnchorSpec, t: f64, cfg: &CorridorConfig) -> Result<f64> {
    let ev = corridor_eval(decoded, layout, spec, t)?;
    Ok(gated(ev.buffer, ev.consistency, t, cfg))
}

fn gated(buffer: f64, consistency: f64, t: f64, cfg: &CorridorConfig) -> f64 {
    let mut inner = 0.0;
    if cfg.enable_buf {
        inner += buffer;
    }
    if cfg.enable_cons {
        inner += consistency;
    }
    (1.0 - t) * inner
}

/// Robust penalty on anchor residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Penalty {
    L1,
    Huber { beta: f64 },
}

impl Penalty {
    pub fn apply(&self, r: f64) -> f64 {
        match *self {
            Penalty::L1 => r,
            Penalty::Huber { beta } => crate::diffcore::tape::huber(r, beta),
        }
    }
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::Huber { beta: 0.1 }
    }
}

/// `(1/K) sum rho(|pred_k - target_k|)`.
pub fn anchor_pred_loss(pred: &[Vec3], targets: &[Vec3], rho: Penalty) -> Result<f64> {
    let r = residual_norms(pred, targets)?;
    Ok(r.iter().map(|&e| rho.apply(e)).sum::<f64>() / r.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorridorConfig {
    pub alpha: f64,
    pub lambda_dp: f64,
    pub lambda_corr: f64,
    pub rho: Penalty,
    pub enable_buf: bool,
    pub enable_cons: bool,
    /// Generate `[a ; dp]` rather than `a` alone.
    pub enable_extra_a: bool,
    pub target_mode: TargetMode,
    /// Anchors the run trains against; records built with another method
    /// are re-anchored on load.
    pub anchor_method: AnchorMethod,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda_dp: 1.0,
            lambda_corr: 0.5,
            rho: Penalty::default(),
            enable_buf: true,
            enable_cons: true,
            enable_extra_a: true,
            target_mode: TargetMode::Delta,
            anchor_method: AnchorMethod::RdpDp,
        }
    }
}

impl CorridorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda_dp >= 0.0) || !(self.lambda_corr >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if let Penalty::Huber { beta } = self.rho {
            if !(beta > 0.0) {
                return Err(Error::Config("huber beta must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> ChunkLayout {
        if self.enable_extra_a {
            ChunkLayout::Extended
        } else {
            ChunkLayout::ActionsOnly
        }
    }

    /// Terms that actually contribute; zero-weight terms are never built.
    pub fn active_terms(&self) -> Terms {
        let corr = self.lambda_corr > 0.0;
        Terms {
            fm: true,
            anchor: self.lambda_dp > 0.0,
            buffer: corr && self.enable_buf,
            consistency: corr && self.enable_cons,
        }
    }
}

/// Selects which summands of the objective are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub fm: bool,
    pub anchor: bool,
    pub buffer: bool,
    pub consistency: bool,
}

impl Terms {
    pub const NONE: Terms = Terms {
        fm: false,
        anchor: false,
        buffer: false,
        consistency: false,
    };
}

/// Batch means of each (unweighted) component plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub fm: f64,
    pub anchor: f64,
    pub buffer: f64,
    pub consistency: f64,
}

/// Output of [`total_loss_with`]: values plus a branch fingerprint used to
/// keep finite differences away from kinks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: LossBreakdown,
    pub regime: Vec<bool>,
    /// Weighted contributions to `loss.total`, in the order fm, anchor,
    /// buffer, consistency.
    pub weighted: [f64; 4],
}

/// Corridor summands on a tape, for an already decoded raw chunk.
struct CorridorNodes {
    buffer: Option<Var>,
    consistency: Option<Var>,
}

fn corridor_nodes(
    tape: &mut Tape,
    xhat_raw: Var,
    layout: ChunkLayout,
    ex: &Example,
    terms: Terms,
    regime: &mut Vec<bool>,
) -> Result<CorridorNodes> {
    let spec = &ex.anchors;
    let k = spec.k();
    let cols = anchor_columns(layout, &spec.indices.indices);
    let g = tape.gather(xhat_raw, &cols)?;
    let target = tape.input(spec.delta_targets.iter().flatten().copied().collect());
    let diff = tape.sub(g, target)?;
    let buffer = if terms.buffer {
        let norms = tape.row_norms(diff, 3)?;
        regime.extend(tape.value(norms).iter().map(|&r| r > spec.width));
        let h = tape.hinge(norms, spec.width);
        let s = tape.sum(h);
        Some(tape.scale(s, 1.0 / k as f64))
    } else {
        None
    };
    let consistency = if terms.consistency {
        let c = tape.cumsum_rows(diff, 3)?;
        let root: Vec<f64> = spec.weights.iter().flat_map(|w| [w.sqrt(); 3]).collect();
        let weighted = tape.scale_shift(c, &root, &vec![0.0; root.len()])?;
        Some(tape.sum_sq(weighted))
    } else {
        None
    };
    Ok(CorridorNodes { buffer, consistency })
}

fn anchor_node(
    model: &FlowModel,
    tape: &mut Tape,
    cond: Var,
    targets: &[Vec3],
    rho: Penalty,
    regime: &mut Vec<bool>,
) -> Result<Var> {
    let pred = model.anchors(tape, cond)?;
    let target = tape.input(targets.iter().flatten().copied().collect());
    let diff = tape.sub(pred, target)?;
    let norms = tape.row_norms(diff, 3)?;
    let per = match rho {
        Penalty::L1 => norms,
        Penalty::Huber { beta } => {
            regime.extend(tape.value(norms).iter().map(|&r| r <= beta));
            tape.huber(norms, beta)
        }
    };
    let s = tape.sum(per);
    Ok(tape.scale(s, 1.0 / targets.len() as f64))
}

fn finite_or(component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(component, format!("loss term evaluated to {v}")))
    }
}

/// Objective over a batch with pre-drawn `(t, xi)`, assembling only the
/// selected `terms`. With `with_grad` the gradient of the weighted total is
/// accumulated into `model.store`.
pub fn total_loss_with(
    model: &mut FlowModel,
    batch: &[Example],
    draws: &[FlowDraw],
    cfg: &CorridorConfig,
    terms: Terms,
    with_grad: bool,
) -> Result<LossEval> {
    if batch.is_empty() || draws.len() != batch.len() {
        return Err(Error::invalid("batch and draws must be non-empty and aligned"));
    }
    let layout = model.arch.layout()?;
    if layout != cfg.layout() {
        return Err(Error::Config("model layout disagrees with enable_extra_a".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let std = model.norm.std.clone();
    let mean = model.norm.mean.clone();
    let mut out = LossBreakdown::default();
    let mut regime = Vec::new();
    let mut weighted = [0.0; 4];
    for (ex, dr) in batch.iter().zip(draws) {
        if ex.anchors.k() != model.arch.anchors {
            return Err(Error::invalid(format!(
                "example has {} anchors, model predicts {}",
                ex.anchors.k(),
                model.arch.anchors
            )));
        }
        let mut tape = Tape::new();
        let mut parts: Vec<Var> = Vec::with_capacity(4);
        let (fm, fwd) = if terms.fm || terms.buffer || terms.consistency {
            let (fm, fwd) = fm_term(model, &mut tape, ex, dr)?;
            (Some(fm), Some(fwd))
        } else {
            (None, None)
        };
        if terms.fm {
            let fm = fm.expect("built above");
            let v = finite_or("fm", tape.scalar(fm))?;
            out.fm += v * inv_b;
            weighted[0] += v * inv_b;
            parts.push(fm);
        }
        if terms.anchor {
            let cond = match fwd {
                Some(f) => f.cond,
                None => model.encode(&mut tape, &ex.context)?,
            };
            let node = anchor_node(model, &mut tape, cond, ex.anchors.targets(cfg.target_mode), cfg.rho, &mut regime)?;
            let v = finite_or("anchor", tape.scalar(node))?;
            out.anchor += v * inv_b;
            weighted[1] += cfg.lambda_dp * v * inv_b;
            parts.push(tape.scale(node, cfg.lambda_dp));
        }
        if terms.buffer || terms.consistency {
            let fwd = fwd.expect("built above");
            // one-step decode in model space, then back to meters
            let z: Vec<f64> = ex.x.iter().zip(&dr.xi).map(|(x, xi)| (1.0 - dr.t) * x + dr.t * xi).collect();
            let zv = tape.input(z);
            let tv = tape.scale(fwd.velocity, dr.t);
            let xhat = tape.sub(zv, tv)?;
            let raw = tape.scale_shift(xhat, &std, &mean)?;
            let nodes = corridor_nodes(&mut tape, raw, layout, ex, terms, &mut regime)?;
            let gate = cfg.lambda_corr * (1.0 - dr.t);
            if let Some(b) = nodes.buffer {
                let v = finite_or("buffer", tape.scalar(b))?;
                out.buffer += v * inv_b;
                weighted[2] += gate * v * inv_b;
                parts.push(tape.scale(b, gate));
            }
            if let Some(c) = nodes.consistency {
                let v = finite_or("consistency", tape.scalar(c))?;
                out.consistency += v * inv_b;
                weighted[3] += gate * v * inv_b;
                parts.push(tape.scale(c, gate));
            }
        }
        if parts.is_empty() {
            return Err(Error::invalid("no loss terms selected"));
        }
        let sum = if parts.len() == 1 {
            parts[0]
        } else {
            let joined = tape.concat(&parts);
            tape.sum(joined)
        };
        let scaled = tape.scale(sum, inv_b);
        out.total += finite_or("total", tape.scalar(scaled))?;
        if with_grad {
            tape.backward(scaled, &mut model.store)?;
        }
    }
    Ok(LossEval {
        loss: out,
        regime,
        weighted,
    })
}

/// The configured objective: flow matching plus the enabled anchor and
/// corridor terms. Gradients are accumulated into `model.store`.
pub fn total_loss(model: &mut FlowModel, batch: &[Example], draws: &[FlowDraw], cfg: &CorridorConfig) -> Result<LossBreakdown> {
    Ok(total_loss_with(model, batch, draws, cfg, cfg.active_terms(), true)?.loss)
}
