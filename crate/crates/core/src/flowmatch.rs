//! Flow matching over the vectorized action chunk.
//!
//! `z_t = (1-t) x + t xi` moves data (`t = 0`) to noise (`t = 1`); the
//! velocity net regresses `xi - x`. All model-space vectors are z-scored
//! with a [`Normalizer`] frozen from the training set.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::synthdata::{AnchorSpec, ChunkLayout, Family};

/// `(1 - t) x + t xi`.
pub fn interpolate(x: &[f64], xi: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != xi.len() {
        return Err(Error::invalid(format!("dimension mismatch {} vs {}", x.len(), xi.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(x.iter().zip(xi).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// One-step estimate `x_hat = z - t v`, also returned as `rows x width`.
pub fn decode_estimate(z: &[f64], t: f64, v: &[f64], width: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if z.len() != v.len() {
        return Err(Error::invalid(format!("dimension mismatch {} vs {}", z.len(), v.len())));
    }
    if width == 0 || !z.len().is_multiple_of(width) {
        return Err(Error::invalid(format!("{} entries do not split into rows of {width}", z.len())));
    }
    let x: Vec<f64> = z.iter().zip(v).map(|(a, b)| a - t * b).collect();
    let rows = x.chunks_exact(width).map(|r| r.to_vec()).collect();
    Ok((x, rows))
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Dimensions with (near) zero spread keep unit scale.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("cannot fit on no samples"))?;
        let d = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::invalid("samples differ in dimension"));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.std)
            .zip(&self.mean)
            .map(|((v, s), m)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub context_dim: usize,
    pub cond_dim: usize,
    pub enc_hidden: usize,
    pub head_hidden: usize,
    pub hidden: usize,
    /// Affine layers in the velocity net.
    pub layers: usize,
    /// Chunk length `T`.
    pub rows: usize,
    /// Columns per row: 7 with extra-A, 4 without.
    pub width: usize,
    /// Anchor count `K`.
    pub anchors: usize,
}

impl ModelArch {
    pub fn dim(&self) -> usize {
        self.rows * self.width
    }

    pub fn layout(&self) -> Result<ChunkLayout> {
        match self.width {
            7 => Ok(ChunkLayout::Extended),
            4 => Ok(ChunkLayout::ActionsOnly),
            w => Err(Error::Config(format!("unsupported chunk width {w}"))),
        }
    }

    fn encoder(&self) -> MlpSpec {
        MlpSpec::new(vec![self.context_dim, self.enc_hidden, self.cond_dim])
    }

    fn head(&self) -> MlpSpec {
        MlpSpec::new(vec![self.cond_dim, self.head_hidden, self.anchors * 3])
    }

    fn velocity(&self) -> MlpSpec {
        let mut sizes = vec![self.dim() + 3 + self.cond_dim];
        sizes.extend(std::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        sizes.push(self.dim());
        MlpSpec::new(sizes)
    }
}

/// Anything that can act as `v(z, t | context)`; lets samplers and losses run
/// against test doubles.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, context: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Context encoder, anchor head and time-conditioned velocity net.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub arch: ModelArch,
    pub store: ParamStore,
    pub norm: Normalizer,
    encoder: Mlp,
    head: Mlp,
    velocity: Mlp,
}

/// Forward products for one sample.
#[derive(Debug, Clone, Copy)]
pub struct FlowForward {
    pub cond: Var,
    pub velocity: Var,
}

fn time_features(t: f64) -> [f64; 3] {
    let w = std::f64::consts::TAU * t;
    [t, w.sin(), w.cos()]
}

impl FlowModel {
    pub fn new<R: Rng>(arch: ModelArch, norm: Normalizer, rng: &mut R) -> Result<Self> {
        if arch.layers < 1 || arch.anchors == 0 {
            return Err(Error::Config("model needs >= 1 layer and >= 1 anchor".into()));
        }
        arch.layout()?;
        if norm.dim() != arch.dim() {
            return Err(Error::Config(format!(
                "normalizer has {} dims, model expects {}",
                norm.dim(),
                arch.dim()
            )));
        }
        let mut store = ParamStore::new();
        let encoder = Mlp::build(&mut store, "enc", arch.encoder(), 1.0, rng)?;
        let head = Mlp::build(&mut store, "head", arch.head(), 0.1, rng)?;
        let velocity = Mlp::build(&mut store, "vel", arch.velocity(), 0.5, rng)?;
        Ok(Self {
            arch,
            store,
            norm,
            encoder,
            head,
            velocity,
        })
    }

    /// Rebinds a model around stored parameters.
    pub fn from_parts(arch: ModelArch, norm: Normalizer, store: ParamStore) -> Result<Self> {
        arch.layout()?;
        if norm.dim() != arch.dim() {
            return Err(Error::Config("normalizer does not match architecture".into()));
        }
        let encoder = Mlp::bind(&store, "enc", arch.encoder())?;
        let head = Mlp::bind(&store, "head", arch.head())?;
        let velocity = Mlp::bind(&store, "vel", arch.velocity())?;
        Ok(Self {
            arch,
            store,
            norm,
            encoder,
            head,
            velocity,
        })
    }

    pub fn encode(&self, tape: &mut Tape, context: &[f64]) -> Result<Var> {
        if context.len() != self.arch.context_dim {
            return Err(Error::invalid(format!(
                "context has {} dims, model expects {}",
                context.len(),
                self.arch.context_dim
            )));
        }
        let c = tape.input(context.to_vec());
        self.encoder.forward(tape, &self.store, c)
    }

    pub fn anchors(&self, tape: &mut Tape, cond: Var) -> Result<Var> {
        self.head.forward(tape, &self.store, cond)
    }

    pub fn velocity_var(&self, tape: &mut Tape, cond: Var, z: Var, t: f64) -> Result<Var> {
        let tf = tape.input(time_features(t).to_vec());
        let input = tape.concat(&[z, tf, cond]);
        self.velocity.forward(tape, &self.store, input)
    }

    /// Encoder plus velocity net at `(z, t)`.
    pub fn forward(&self, tape: &mut Tape, context: &[f64], z: &[f64], t: f64) -> Result<FlowForward> {
        if z.len() != self.arch.dim() {
            return Err(Error::invalid(format!("z has {} dims, model expects {}", z.len(), self.arch.dim())));
        }
        let cond = self.encode(tape, context)?;
        let zv = tape.input(z.to_vec());
        let velocity = self.velocity_var(tape, cond, zv, t)?;
        Ok(FlowForward { cond, velocity })
    }

    /// Anchor-head increments for a context, in meters.
    pub fn predict_anchors(&self, context: &[f64]) -> Result<Vec<Vec3>> {
        let mut tape = Tape::new();
        let cond = self.encode(&mut tape, context)?;
        let out = self.anchors(&mut tape, cond)?;
        Ok(tape.value(out).chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
    }
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        self.arch.dim()
    }

    fn velocity(&self, context: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, context, z, t)?;
        Ok(tape.value(f.velocity).to_vec())
    }
}

/// A training/evaluation item in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub context: Vec<f64>,
    /// Normalized, vectorized chunk.
    pub x: Vec<f64>,
    pub anchors: AnchorSpec,
    pub family: Family,
    pub episode: u64,
    /// Ground-truth displacement over the chunk, meters.
    pub displacement: Vec3,
}

/// Noise level and noise vector for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDraw {
    pub t: f64,
    pub xi: Vec<f64>,
}

/// `t ~ U(0,1)` then `xi ~ N(0, I)` per example, in batch order.
pub fn draw_noise<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<FlowDraw> {
    (0..n)
        .map(|_| {
            let t = rng.random::<f64>();
            let xi = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            FlowDraw { t, xi }
        })
        .collect()
}

/// Batch mean of `|v(z_t, t) - (xi - x)|^2` for pre-drawn noise.
pub fn fm_loss_with<F: VelocityField>(field: &F, batch: &[Example], draws: &[FlowDraw]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if draws.len() != batch.len() {
        return Err(Error::invalid("one draw per example is required"));
    }
    let mut total = 0.0;
    for (ex, dr) in batch.iter().zip(draws) {
        let z = interpolate(&ex.x, &dr.xi, dr.t)?;
        let v = field.velocity(&ex.context, &z, dr.t)?;
        let se: f64 = v
            .iter()
            .zip(dr.xi.iter().zip(&ex.x))
            .map(|(v, (xi, x))| {
                let r = v - (xi - x);
                r * r
            })
            .sum();
        total += se;
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numerical("fm", "non-finite flow-matching loss"));
    }
    Ok(loss)
}

/// Draws noise from `rng` and evaluates the flow-matching loss.
pub fn fm_loss<F: VelocityField, R: Rng>(field: &F, batch: &[Example], rng: &mut R) -> Result<f64> {
    let draws = draw_noise(rng, batch.len(), field.dim());
    fm_loss_with(field, batch, &draws)
}

/// Same loss with gradients accumulated into `model.store`.
pub fn fm_loss_and_grad(model: &mut FlowModel, batch: &[Example], draws: &[FlowDraw]) -> Result<f64> {
    if batch.is_empty() || draws.len() != batch.len() {
        return Err(Error::invalid("batch and draws must be non-empty and aligned"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (ex, dr) in batch.iter().zip(draws) {
        let mut tape = Tape::new();
        let (loss, _) = fm_term(model, &mut tape, ex, dr)?;
        let scaled = tape.scale(loss, scale);
        total += tape.scalar(scaled);
        tape.backward(scaled, &mut model.store)?;
    }
    if !total.is_finite() {
        return Err(Error::numerical("fm", "non-finite flow-matching loss"));
    }
    Ok(total)
}

/// Per-example squared error node; also returns the forward products.
pub(crate) fn fm_term(model: &FlowModel, tape: &mut Tape, ex: &Example, dr: &FlowDraw) -> Result<(Var, FlowForward)> {
    let z = interpolate(&ex.x, &dr.xi, dr.t)?;
    let fwd = model.forward(tape, &ex.context, &z, dr.t)?;
    let target: Vec<f64> = dr.xi.iter().zip(&ex.x).map(|(a, b)| a - b).collect();
    let target = tape.input(target);
    let diff = tape.sub(fwd.velocity, target)?;
    Ok((tape.sum_sq(diff), fwd))
}

/// Explicit Euler from `t = 1` to `t = 0`; returns the denormalized chunk
/// as `rows x width`.
pub fn euler_sample<F: VelocityField, R: Rng>(
    field: &F,
    norm: &Normalizer,
    context: &[f64],
    steps: usize,
    width: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let d = field.dim();
    let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let z0 = integrate(field, context, xi, steps)?;
    let raw = norm.denormalize(&z0);
    Ok(raw.chunks_exact(width).map(|r| r.to_vec()).collect())
}

/// Euler integration of `dz/dt = v` from `z_1 = xi` down to `t = 0`.
pub fn integrate<F: VelocityField>(field: &F, context: &[f64], xi: Vec<f64>, steps: usize) -> Result<Vec<f64>> {
    let dt = 1.0 / steps as f64;
    let mut z = xi;
    for s in 0..steps {
        let t = 1.0 - s as f64 * dt;
        let v = field.velocity(context, &z, t)?;
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi -= dt * vi;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("sampler", format!("non-finite state at step {s}")));
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorIndexSet;
    use crate::geometry::AnchorMethod;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Constant(Vec<f64>);

    impl VelocityField for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, _: &[f64], _: &[f64], _: f64) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    /// Knows the clean sample, so it can return `(z - x) / t = xi - x`.
    struct Oracle(Vec<f64>);

    impl VelocityField for Oracle {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, _: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
            Ok(z.iter().zip(&self.0).map(|(z, x)| (z - x) / t).collect())
        }
    }

    fn example(x: Vec<f64>) -> Example {
        Example {
            context: vec![],
            x,
            anchors: AnchorSpec {
                indices: AnchorIndexSet {
                    indices: vec![1],
                    method: AnchorMethod::Uniform,
                },
                delta_targets: vec![[0.0; 3]],
                pos_targets: vec![[0.0; 3]],
                width: 0.0,
                weights: vec![1.0],
            },
            family: Family::Line,
            episode: 0,
            displacement: [0.0; 3],
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let x = vec![1.0, -2.0, 3.0];
        let xi = vec![0.5, 0.5, 0.5];
        assert_eq!(interpolate(&x, &xi, 0.0).unwrap(), x);
        assert_eq!(interpolate(&x, &xi, 1.0).unwrap(), xi);
        assert_eq!(interpolate(&[0.0; 4], &[2.0; 4], 0.5).unwrap(), vec![1.0; 4]);
        assert!(interpolate(&x, &[0.0], 0.5).is_err());
        assert!(interpolate(&x, &xi, 1.5).is_err());
    }

    #[test]
    fn decode_cases() {
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let xi = vec![-1.0, 0.5, 2.0, 0.0];
        let (xh, _) = decode_estimate(&x, 0.0, &[9.0; 4], 2).unwrap();
        assert_eq!(xh, x);
        let (xh, rows) = decode_estimate(&xi, 1.0, &[0.0; 4], 2).unwrap();
        assert_eq!(xh, xi);
        assert_eq!(rows, vec![vec![-1.0, 0.5], vec![2.0, 0.0]]);
        assert!(decode_estimate(&x, 0.5, &[0.0; 3], 2).is_err());
    }

    #[test]
    fn zero_field_loss_is_target_energy() {
        let batch = vec![example(vec![0.3, -0.2, 1.0]), example(vec![0.0, 0.5, -0.5])];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = draw_noise(&mut rng, 2, 3);
        let expect: f64 = batch
            .iter()
            .zip(&draws)
            .map(|(e, d)| e.x.iter().zip(&d.xi).map(|(x, xi)| (xi - x) * (xi - x)).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        let got = fm_loss_with(&Constant(vec![0.0; 3]), &batch, &draws).unwrap();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn oracle_field_has_zero_loss() {
        let ex = example(vec![0.3, -0.2, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loss = fm_loss(&Oracle(ex.x.clone()), &[ex], &mut rng).unwrap();
        assert!(loss < 1e-24);
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let ex = example(vec![0.3, -0.2, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = draw_noise(&mut rng, 1, 3);
        let one = fm_loss_with(&Constant(vec![0.1; 3]), std::slice::from_ref(&ex), &d).unwrap();
        let two = fm_loss_with(&Constant(vec![0.1; 3]), &[ex.clone(), ex], &[d[0].clone(), d[0].clone()]).unwrap();
        assert_eq!(one, two);
        assert!(fm_loss_with(&Constant(vec![0.0; 3]), &[], &[]).is_err());
    }

    #[test]
    fn constant_field_euler_telescopes() {
        let c = vec![0.25, -0.5, 1.0, 0.0];
        let field = Constant(c.clone());
        let xi = vec![1.0, 2.0, 3.0, 4.0];
        for steps in [1, 3, 10] {
            let z = integrate(&field, &[], xi.clone(), steps).unwrap();
            for i in 0..4 {
                assert!((z[i] - (xi[i] - c[i])).abs() < 1e-12);
            }
        }
        // one step equals the t = 1 decode
        let z = integrate(&field, &[], xi.clone(), 1).unwrap();
        let (xh, _) = decode_estimate(&xi, 1.0, &c, 2).unwrap();
        assert_eq!(z, xh);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(euler_sample(&field, &Normalizer::identity(4), &[], 0, 2, &mut rng).is_err());
    }

    #[test]
    fn normalizer_floors_flat_dims() {
        let n = Normalizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        assert_eq!(n.normalize(&[3.0, 6.0]), vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn decode_inverts_interpolation(
            x in prop::collection::vec(-5.0f64..5.0, 6),
            xi in prop::collection::vec(-5.0f64..5.0, 6),
            t in 0.0f64..=1.0,
        ) {
            let z = interpolate(&x, &xi, t).unwrap();
            let v: Vec<f64> = xi.iter().zip(&x).map(|(a, b)| a - b).collect();
            let (xh, _) = decode_estimate(&z, t, &v, 3).unwrap();
            for (a, b) in xh.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn normalization_roundtrip(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..10),
            probe in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let n = Normalizer::fit(&rows).unwrap();
            let back = n.denormalize(&n.normalize(&probe));
            for (a, b) in back.iter().zip(&probe) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn fm_loss_ignores_batch_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch: Vec<Example> = (0..4)
                .map(|_| example((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let draws = draw_noise(&mut rng, 4, 3);
            let field = Constant(vec![0.2, -0.1, 0.05]);
            let a = fm_loss_with(&field, &batch, &draws).unwrap();
            let order = [2usize, 0, 3, 1];
            let pb: Vec<Example> = order.iter().map(|&i| batch[i].clone()).collect();
            let pd: Vec<FlowDraw> = order.iter().map(|&i| draws[i].clone()).collect();
            let b = fm_loss_with(&field, &pb, &pd).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
