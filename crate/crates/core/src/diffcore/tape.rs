//! Vector-valued reverse-mode tape.
//!
//! Nodes hold dense `f64` vectors. Parameters are not copied onto the tape:
//! ops that read a parameter carry its [`ParamId`] and look it up in the
//! [`ParamStore`] during both passes. [`Tape::backward`] consumes the tape.

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// `W x` with `W` stored row-major as `rows x cols`.
    MatVec { w: ParamId, x: Var, rows: usize, cols: usize },
    AddParam { x: Var, b: ParamId },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Elementwise `x * scale + shift` with constant vectors.
    ScaleShift { x: Var, scale: Vec<f64> },
    Tanh(Var),
    Concat(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    /// Running sum over consecutive rows of `width` entries.
    CumSum { x: Var, width: usize },
    /// L2 norm of each row of `width` entries.
    RowNorms { x: Var, width: usize },
    /// `max(x - offset, 0)` elementwise.
    Hinge { x: Var, offset: f64 },
    /// Smooth-l1: `0.5 x^2 / beta` for `|x| <= beta`, else `|x| - beta / 2`.
    Huber { x: Var, beta: f64 },
    Sum(Var),
    SumSq(Var),
    /// `sum_i w_i x_i`.
    Dot { x: Var, w: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_len(&self, a: Var, b: Var) -> Result<usize> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::invalid(format!("length mismatch {la} vs {lb}")));
        }
        Ok(la)
    }

    /// Constant leaf; gradients never flow into it.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn matvec(&mut self, store: &ParamStore, w: ParamId, x: Var) -> Result<Var> {
        let p = store.param(w);
        let (rows, cols) = match p.shape[..] {
            [r, c] => (r, c),
            _ => return Err(Error::invalid(format!("`{}` is not a matrix", p.name))),
        };
        let xv = &self.nodes[x.0].value;
        if xv.len() != cols {
            return Err(Error::invalid(format!(
                "`{}` expects input of {cols}, got {}",
                p.name,
                xv.len()
            )));
        }
        let out: Vec<f64> = p
            .value
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(out, Op::MatVec { w, x, rows, cols }, true))
    }

    pub fn add_param(&mut self, store: &ParamStore, x: Var, b: ParamId) -> Result<Var> {
        let bv = store.value(b);
        let xv = &self.nodes[x.0].value;
        if bv.len() != xv.len() {
            return Err(Error::invalid(format!(
                "bias `{}` has {} entries, input has {}",
                store.param(b).name,
                bv.len(),
                xv.len()
            )));
        }
        let out = xv.iter().zip(bv).map(|(a, b)| a + b).collect();
        Ok(self.push(out, Op::AddParam { x, b }, true))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b)?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b)?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn scale_shift(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if scale.len() != xv.len() || shift.len() != xv.len() {
            return Err(Error::invalid("scale/shift length mismatch"));
        }
        let out = xv
            .iter()
            .zip(scale)
            .zip(shift)
            .map(|((v, s), m)| v * s + m)
            .collect();
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::ScaleShift {
                x,
                scale: scale.to_vec(),
            },
            ng,
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {}",
                xv.len()
            )));
        }
        let out = idx.iter().map(|&i| xv[i]).collect();
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn cumsum_rows(&mut self, x: Var, width: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if width == 0 || !xv.len().is_multiple_of(width) {
            return Err(Error::invalid("cumsum width does not divide length"));
        }
        let mut out = xv.clone();
        for i in width..out.len() {
            out[i] += out[i - width];
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::CumSum { x, width }, ng))
    }

    pub fn row_norms(&mut self, x: Var, width: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if width == 0 || !xv.len().is_multiple_of(width) {
            return Err(Error::invalid("norm width does not divide length"));
        }
        let out = xv
            .chunks_exact(width)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let ng = self.needs(x);
        Ok(self.push(out, Op::RowNorms { x, width }, ng))
    }

    pub fn hinge(&mut self, x: Var, offset: f64) -> Var {
        let out = self.nodes[x.0]
            .value
            .iter()
            .map(|v| (v - offset).max(0.0))
            .collect();
        let ng = self.needs(x);
        self.push(out, Op::Hinge { x, offset }, ng)
    }

    pub fn huber(&mut self, x: Var, beta: f64) -> Var {
        let out = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| huber(v, beta))
            .collect();
        let ng = self.needs(x);
        self.push(out, Op::Huber { x, beta }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        let ng = self.needs(x);
        self.push(vec![s], Op::Sum(x), ng)
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        let ng = self.needs(x);
        self.push(vec![s], Op::SumSq(x), ng)
    }

    pub fn dot_const(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.len() != w.len() {
            return Err(Error::invalid("weight length mismatch"));
        }
        let s = xv.iter().zip(w).map(|(a, b)| a * b).sum();
        let ng = self.needs(x);
        Ok(self.push(vec![s], Op::Dot { x, w: w.to_vec() }, ng))
    }

    /// Reverse sweep from a scalar output with seed 1.
    pub fn backward(&mut self, out: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes[out.0].value.len() != 1 {
            return Err(Error::invalid("backward from a non-scalar output needs a seed vector"));
        }
        self.backward_with(out, &[1.0], store)
    }

    /// Reverse sweep seeded with `out_grad`; parameter gradients are
    /// accumulated into `store`.
    pub fn backward_with(&mut self, out: Var, out_grad: &[f64], store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::State("tape already consumed by a backward pass".into()));
        }
        if out_grad.len() != self.nodes[out.0].value.len() {
            return Err(Error::invalid("seed length does not match output"));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(out_grad.to_vec());

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::MatVec { w, x, rows, cols } => {
                    let xv = &self.nodes[x.0].value;
                    let gw = store.grad_mut(*w);
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (acc, xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *acc += gr * xc;
                            }
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let wv = store.value(*w);
                        let mut gx = vec![0.0; *cols];
                        for r in 0..*rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                for (acc, wc) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                    *acc += gr * wc;
                                }
                            }
                        }
                        accumulate(&mut adj, *x, gx);
                    }
                }
                Op::AddParam { x, b } => {
                    for (acc, v) in store.grad_mut(*b).iter_mut().zip(&g) {
                        *acc += v;
                    }
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.iter().map(|v| -v).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut adj, *x, g.iter().map(|v| v * c).collect());
                }
                Op::ScaleShift { x, scale } => {
                    accumulate(&mut adj, *x, g.iter().zip(scale).map(|(v, s)| v * s).collect());
                }
                Op::Tanh(x) => {
                    let gx = g
                        .iter()
                        .zip(&node.value)
                        .map(|(v, y)| v * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj, *p, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Gather { x, idx } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    for (&k, v) in idx.iter().zip(&g) {
                        gx[k] += v;
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::CumSum { x, width } => {
                    // reverse running sum
                    let mut gx = g;
                    for k in (0..gx.len().saturating_sub(*width)).rev() {
                        gx[k] += gx[k + width];
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::RowNorms { x, width } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = vec![0.0; xv.len()];
                    for (r, (&n, gr)) in node.value.iter().zip(&g).enumerate() {
                        if n > 0.0 {
                            for c in 0..*width {
                                gx[r * width + c] = gr * xv[r * width + c] / n;
                            }
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Hinge { x, offset } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(v, a)| if a - offset > 0.0 { *v } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Huber { x, beta } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(v, &a)| v * huber_slope(a, *beta))
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut adj, *x, vec![g[0]; n]);
                }
                Op::SumSq(x) => {
                    let gx = self.nodes[x.0].value.iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Dot { x, w } => {
                    accumulate(&mut adj, *x, w.iter().map(|v| v * g[0]).collect());
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub fn huber(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a <= beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

fn huber_slope(x: f64, beta: f64) -> f64 {
    if x.abs() <= beta {
        x / beta
    } else {
        x.signum()
    }
}
