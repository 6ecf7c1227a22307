//! Forward noising, the ε-prediction objective, and ancestral sampling.

mod schedule;

pub use schedule::{make_schedule, NoiseSchedule, ScheduleId};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConditionLabel, LabeledGlyph};
use crate::denoiser::UNet;
use crate::error::{Error, Result};
use crate::image::GlyphImage;
use crate::nn::{ParamStore, Scalar, Tensor};
use crate::rng::SeedStream;

/// Substream for the initial state x_T.
pub const STREAM_INIT: &str = "init";
/// Substream for the per-step noise z, indexed by the number of denoising
/// steps already taken.
pub const STREAM_Z: &str = "z";
/// Substreams for the training draws, indexed by batch position.
pub const STREAM_T: &str = "t";
pub const STREAM_EPS: &str = "eps";

/// Anything that predicts ε̂ for a batch of states, one timestep and
/// condition per state.
pub trait NoisePredictor {
    fn resolution(&self) -> (usize, usize);
    fn predict(&self, states: &[Vec<f32>], ts: &[usize], conds: &[ConditionLabel]) -> Result<Vec<Vec<f32>>>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn resolution(&self) -> (usize, usize) {
        (**self).resolution()
    }

    fn predict(&self, states: &[Vec<f32>], ts: &[usize], conds: &[ConditionLabel]) -> Result<Vec<Vec<f32>>> {
        (**self).predict(states, ts, conds)
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
pub fn q_sample(x0: &[f32], t: usize, eps: &[f32], schedule: &NoiseSchedule) -> Result<Vec<f32>> {
    schedule.check_step(t)?;
    same_len(x0.len(), eps.len(), "q_sample noise")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (a * f64::from(x) + b * f64::from(e)) as f32)
        .collect())
}

/// The timesteps and noise a training batch of `len` items draws from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDraws {
    pub ts: Vec<usize>,
    pub noise: Vec<Vec<f32>>,
}

pub fn draw_loss_noise(len: usize, pixels: usize, schedule: &NoiseSchedule, seed: u64) -> LossDraws {
    use rand::Rng;
    let stream = SeedStream::new(seed);
    let ts = (0..len)
        .map(|i| stream.rng(STREAM_T, i as u64).gen_range(1..=schedule.steps()))
        .collect();
    let noise = (0..len).map(|i| stream.normal_vec(STREAM_EPS, i as u64, pixels)).collect();
    LossDraws { ts, noise }
}

fn check_batch(batch: &[LabeledGlyph], resolution: (usize, usize)) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("training batch is empty".into()));
    }
    for item in batch {
        item.image.ensure_resolution(resolution)?;
        if item.image.range() != crate::image::PixelRange::Model {
            return Err(Error::InvalidConfig("training images must be in model range".into()));
        }
    }
    Ok(())
}

/// Mean squared error between the drawn ε and ε̂ from `model`. No gradients;
/// works with any predictor.
pub fn predictor_loss(model: &dyn NoisePredictor, batch: &[LabeledGlyph], schedule: &NoiseSchedule, seed: u64) -> Result<f64> {
    check_batch(batch, model.resolution())?;
    let (h, w) = model.resolution();
    let draws = draw_loss_noise(batch.len(), h * w, schedule, seed);
    let mut states = Vec::with_capacity(batch.len());
    for (item, (&t, eps)) in batch.iter().zip(draws.ts.iter().zip(&draws.noise)) {
        states.push(q_sample(item.image.pixels(), t, eps, schedule)?);
    }
    let conds: Vec<_> = batch.iter().map(|b| b.label).collect();
    let preds = model.predict(&states, &draws.ts, &conds)?;
    let mut sum = 0.0;
    for (p, e) in preds.iter().zip(&draws.noise) {
        sum += p
            .iter()
            .zip(e)
            .map(|(&p, &e)| (f64::from(e) - f64::from(p)).powi(2))
            .sum::<f64>();
    }
    let loss = sum / (batch.len() * h * w) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(loss)
}

/// The simple ε objective and its gradient for the U-Net with parameters
/// `store`, generic over the scalar type so it can run in double precision.
pub fn unet_loss<S: Scalar>(
    unet: &UNet,
    store: &ParamStore<S>,
    batch: &[LabeledGlyph],
    schedule: &NoiseSchedule,
    seed: u64,
    with_grad: bool,
) -> Result<(S, Option<ParamStore<S>>)> {
    let (h, w) = unet.config().resolution;
    check_batch(batch, (h, w))?;
    let n = batch.len();
    let draws = draw_loss_noise(n, h * w, schedule, seed);
    let mut x = Vec::with_capacity(n * h * w);
    for (item, (&t, eps)) in batch.iter().zip(draws.ts.iter().zip(&draws.noise)) {
        schedule.check_step(t)?;
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x.extend(
            item.image
                .pixels()
                .iter()
                .zip(eps)
                .map(|(&x0, &e)| S::of(a * f64::from(x0) + b * f64::from(e))),
        );
    }
    let x = Tensor::from_vec(n, 1, h, w, x);
    let conds: Vec<_> = batch.iter().map(|b| b.label).collect();
    let (pred, ctx) = unet.forward(store, &x, &draws.ts, &conds, with_grad);
    let count = S::of((n * h * w) as f64);
    let mut loss = S::zero();
    let mut dout = Vec::with_capacity(pred.data.len());
    for (&p, &e) in pred.data.iter().zip(draws.noise.iter().flatten()) {
        let diff = p - S::from_single(e);
        loss += diff * diff;
        dout.push(S::of(2.0) * diff / count);
    }
    let loss = loss / count;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = ctx.map(|ctx| {
        let mut g = store.zeros_like();
        unet.backward(store, &mut g, &ctx, &pred.with_data(dout));
        g
    });
    Ok((loss, grads))
}

/// Loss and gradients for `params` on `batch` (single precision).
pub fn training_loss(
    params: &crate::denoiser::DenoiserParams,
    batch: &[LabeledGlyph],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(f32, ParamStore<f32>)> {
    let (loss, grads) = unet_loss(params.unet(), params.store(), batch, schedule, seed, true)?;
    Ok((loss, grads.expect("requested")))
}

/// μ_θ(x_t, t) from a given ε̂, plus √β̃_t·z when `z` is supplied.
pub fn posterior_step(x_t: &[f32], eps_hat: &[f32], t: usize, schedule: &NoiseSchedule, z: Option<&[f32]>) -> Result<Vec<f32>> {
    schedule.check_step(t)?;
    same_len(x_t.len(), eps_hat.len(), "predicted noise")?;
    match (t, z) {
        (1, Some(_)) => return Err(Error::InvalidConfig("noise z must be absent at t = 1".into())),
        (t, None) if t > 1 => return Err(Error::InvalidConfig(format!("noise z is required at t = {t}"))),
        (_, Some(z)) => same_len(x_t.len(), z.len(), "step noise")?,
        _ => {}
    }
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = schedule.posterior_variance(t).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .enumerate()
        .map(|(i, (&x, &e))| {
            let mu = inv_sqrt_alpha * (f64::from(x) - coef * f64::from(e));
            let noise = z.map_or(0.0, |z| sigma * f64::from(z[i]));
            (mu + noise) as f32
        })
        .collect())
}

/// One ancestral step x_t → x_{t−1}.
pub fn ddpm_step(
    model: &dyn NoisePredictor,
    x_t: &[f32],
    t: usize,
    cond: &ConditionLabel,
    schedule: &NoiseSchedule,
    z: Option<&[f32]>,
) -> Result<Vec<f32>> {
    schedule.check_step(t)?;
    let eps = model.predict(&[x_t.to_vec()], &[t], &[*cond])?.remove(0);
    posterior_step(x_t, &eps, t, schedule, z)
}

/// Which intermediate states a trace retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Keep every `stride`-th state (and always the first and last);
    /// 0 keeps none.
    pub stride: usize,
}

impl TraceOptions {
    pub const NONE: TraceOptions = TraceOptions { stride: 0 };

    pub fn every(stride: usize) -> Self {
        Self { stride }
    }

    pub(crate) fn keeps(&self, index: usize, last: bool) -> bool {
        self.stride > 0 && (index.is_multiple_of(self.stride) || last)
    }
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    /// Position in the trajectory (0 = the initial noise).
    pub index: usize,
    /// The timestep of the state after this action.
    pub t: usize,
    /// `"init"`, `"denoise"`, or `"jump"`.
    pub action: &'static str,
    pub image: GlyphImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub seed: u64,
    pub condition: ConditionLabel,
    /// Timesteps denoised, in execution order.
    pub visited: Vec<usize>,
    pub jumps: usize,
    pub states: Vec<TraceState>,
    pub elapsed_ms: u128,
}

impl SampleTrace {
    pub(crate) fn new(seed: u64, condition: ConditionLabel) -> Self {
        Self {
            seed,
            condition,
            visited: Vec::new(),
            jumps: 0,
            states: Vec::new(),
            elapsed_ms: 0,
        }
    }

    pub fn denoise_steps(&self) -> usize {
        self.visited.len()
    }
}

pub(crate) fn check_finite(x: &[f32], t: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sampler state at t={t}")));
    }
    Ok(())
}

pub(crate) fn clamp_output(h: usize, w: usize, x: &[f32]) -> GlyphImage {
    GlyphImage::unchecked_model(h, w, x.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Ancestral sampling from x_T ~ N(0, I) down to x₀, clamped at the end.
pub fn sample(
    model: &dyn NoisePredictor,
    cond: &ConditionLabel,
    schedule: &NoiseSchedule,
    seed: u64,
    trace: TraceOptions,
) -> Result<(GlyphImage, SampleTrace)> {
    let start = Instant::now();
    let (h, w) = model.resolution();
    let stream = SeedStream::new(seed);
    let steps = schedule.steps();
    let mut x = stream.normal_vec(STREAM_INIT, 0, h * w);
    let mut out = SampleTrace::new(seed, *cond);
    if trace.keeps(0, false) {
        out.states.push(TraceState {
            index: 0,
            t: steps,
            action: "init",
            image: GlyphImage::unchecked_model(h, w, x.clone()),
        });
    }
    for t in (1..=steps).rev() {
        let index = steps - t;
        let z = (t > 1).then(|| stream.normal_vec(STREAM_Z, index as u64, h * w));
        x = ddpm_step(model, &x, t, cond, schedule, z.as_deref())?;
        check_finite(&x, t - 1)?;
        out.visited.push(t);
        if trace.keeps(index + 1, t == 1) {
            out.states.push(TraceState {
                index: index + 1,
                t: t - 1,
                action: "denoise",
                image: GlyphImage::unchecked_model(h, w, x.clone()),
            });
        }
    }
    out.elapsed_ms = start.elapsed().as_millis();
    Ok((clamp_output(h, w, &x), out))
}

/// [`sample`] for many (condition, seed) pairs at once, batching the network
/// calls. Each output equals the corresponding single-item `sample`.
pub fn sample_batch(
    model: &dyn NoisePredictor,
    jobs: &[(ConditionLabel, u64)],
    schedule: &NoiseSchedule,
) -> Result<Vec<GlyphImage>> {
    let (h, w) = model.resolution();
    let steps = schedule.steps();
    let streams: Vec<_> = jobs.iter().map(|&(_, s)| SeedStream::new(s)).collect();
    let conds: Vec<_> = jobs.iter().map(|&(c, _)| c).collect();
    let mut xs: Vec<Vec<f32>> = streams.iter().map(|s| s.normal_vec(STREAM_INIT, 0, h * w)).collect();
    for t in (1..=steps).rev() {
        let ts = vec![t; xs.len()];
        let eps = model.predict(&xs, &ts, &conds)?;
        for ((x, e), stream) in xs.iter_mut().zip(&eps).zip(&streams) {
            let z = (t > 1).then(|| stream.normal_vec(STREAM_Z, (steps - t) as u64, h * w));
            *x = posterior_step(x, e, t, schedule, z.as_deref())?;
            check_finite(x, t - 1)?;
        }
    }
    Ok(xs.iter().map(|x| clamp_output(h, w, x)).collect())
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn q_sample_branches() {
        let s = four_steps();
        let x0 = vec![0.5f32, -1.0, 1.0];
        let zero = vec![0.0f32; 3];
        let out = q_sample(&x0, 3, &zero, &s).unwrap();
        for (o, x) in out.iter().zip(&x0) {
            assert!(close(f64::from(*o), 0.504f64.sqrt() * f64::from(*x), 1e-6));
        }
        let eps = vec![1.0f32, -2.0, 0.25];
        let out = q_sample(&zero, 3, &eps, &s).unwrap();
        for (o, e) in out.iter().zip(&eps) {
            assert!(close(f64::from(*o), 0.496f64.sqrt() * f64::from(*e), 1e-6));
        }
        let out = q_sample(&[1.0], 2, &[1.0], &s).unwrap();
        assert!(close(f64::from(out[0]), 1.377_678_399_636_775_2, 1e-6));
        assert!(q_sample(&[1.0], 2, &[1.0, 2.0], &s).is_err());
        assert!(q_sample(&[1.0], 5, &[1.0], &s).is_err());
    }

    #[test]
    fn ddpm_step_pinned_value() {
        let s = four_steps();
        let model = ConstPredictor {
            resolution: (1, 1),
            value: 0.5,
        };
        let cond = ConditionLabel::new(0, 0, 0);
        let out = ddpm_step(&model, &[1.0], 2, &cond, &s, Some(&[1.0])).unwrap();
        assert!(close(f64::from(out[0]), 1.174_006_666_980_19, 1e-6));
        assert!(close(s.posterior_variance(2), 0.071_428_571_428_571_41, 1e-15));
    }

    #[test]
    fn ddpm_step_noise_rules() {
        let s = four_steps();
        let model = ConstPredictor {
            resolution: (1, 1),
            value: 0.0,
        };
        let cond = ConditionLabel::new(0, 0, 0);
        assert!(ddpm_step(&model, &[1.0], 1, &cond, &s, Some(&[0.0])).is_err());
        assert!(ddpm_step(&model, &[1.0], 2, &cond, &s, None).is_err());
        assert!(ddpm_step(&model, &[1.0], 0, &cond, &s, None).is_err());
        let out = ddpm_step(&model, &[1.0], 3, &cond, &s, Some(&[0.0])).unwrap();
        assert!(close(f64::from(out[0]), 1.0 / 0.7f64.sqrt(), 1e-6));
        let a = ddpm_step(&model, &[0.3], 1, &cond, &s, None).unwrap();
        let b = ddpm_step(&model, &[0.3], 1, &cond, &s, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_is_deterministic_and_traced() {
        let s = four_steps();
        let model = ConstPredictor {
            resolution: (4, 4),
            value: 0.1,
        };
        let cond = ConditionLabel::new(0, 0, 0);
        let (a, ta) = sample(&model, &cond, &s, 7, TraceOptions::every(1)).unwrap();
        let (b, _) = sample(&model, &cond, &s, 7, TraceOptions::NONE).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.states.len(), 5);
        assert_eq!(ta.visited, vec![4, 3, 2, 1]);
        let last = ta.states.last().unwrap().image.pixels();
        let clamped: Vec<f32> = last.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        assert_eq!(a.pixels(), &clamped[..]);
        let (c, _) = sample(&model, &cond, &s, 8, TraceOptions::NONE).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batched_sampling_matches_single() {
        let s = four_steps();
        let model = ConstPredictor {
            resolution: (4, 4),
            value: -0.2,
        };
        let jobs = [(ConditionLabel::new(0, 0, 0), 3), (ConditionLabel::new(0, 0, 0), 11)];
        let batch = sample_batch(&model, &jobs, &s).unwrap();
        for ((cond, seed), got) in jobs.iter().zip(&batch) {
            let (single, _) = sample(&model, cond, &s, *seed, TraceOptions::NONE).unwrap();
            assert_eq!(&single, got);
        }
    }

    #[test]
    fn zero_predictor_loss_is_unit_variance() {
        let s = ScheduleId::DEFAULT.build().unwrap();
        let model = ConstPredictor {
            resolution: (32, 32),
            value: 0.0,
        };
        let item = LabeledGlyph {
            image: GlyphImage::filled(32, 32, crate::image::PixelRange::Model, 1.0).unwrap(),
            label: ConditionLabel::new(0, 0, 0),
        };
        let loss = predictor_loss(&model, &vec![item; 4], &s, 1).unwrap();
        assert!(close(loss, 1.0, 0.1), "{loss}");
        assert!(predictor_loss(&model, &[], &s, 1).is_err());
    }

    #[test]
    fn two_step_bridge_matches_direct_statistics() {
        // q(x2|x0) realized as q(x1|x0) then the one-step kernel.
        let s = four_steps();
        let n = 100_000;
        let x0 = 0.8f64;
        let stream = SeedStream::new(5);
        let e1 = stream.normal_vec("a", 0, n);
        let e2 = stream.normal_vec("b", 0, n);
        let vals: Vec<f64> = e1
            .iter()
            .zip(&e2)
            .map(|(&a, &b)| {
                let x1 = s.alpha_bar(1).sqrt() * x0 + (1.0 - s.alpha_bar(1)).sqrt() * f64::from(a);
                s.alpha(2).sqrt() * x1 + s.beta(2).sqrt() * f64::from(b)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(close(mean, s.alpha_bar(2).sqrt() * x0, 2e-2));
        assert!(close(var, 1.0 - s.alpha_bar(2), 2e-2));
    }
}
