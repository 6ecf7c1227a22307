//! Mask-conditioned inpainting with resampling.
//!
//! At every denoising step the unknown region comes from the model and the
//! known region from a fresh forward sample of the condition image at the
//! same noise level. After each block of `jump_len` steps the state is
//! re-noised back to the top of the block and the block is repeated, which
//! gives the two regions time to agree. The known region of the final
//! output is copied from the condition image.

mod plan;

pub use plan::{build_time_plan, PlanAction, TimePlan};

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::ConditionLabel;
use crate::diffusion::{
    check_finite, posterior_step, q_sample, NoisePredictor, NoiseSchedule, SampleTrace, ScheduleId, TraceOptions, TraceState,
    STREAM_INIT, STREAM_Z,
};
use crate::error::{Error, Result};
use crate::image::{GlyphImage, Mask, PixelRange};
use crate::rng::SeedStream;

/// Substream for the known-branch noise, indexed by denoising step.
pub const STREAM_KNOWN: &str = "known";
/// Substream for jump noise, indexed by jump number.
pub const STREAM_JUMP: &str = "jump";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintConfig {
    pub jump_len: usize,
    pub n_resample: usize,
    pub seed: u64,
    pub schedule: ScheduleId,
    #[serde(default)]
    pub trace: TraceOptions,
}

impl InpaintConfig {
    /// j = 10, r = 5 on the default schedule.
    pub fn new(seed: u64) -> Self {
        Self {
            jump_len: 10,
            n_resample: 5,
            seed,
            schedule: ScheduleId::DEFAULT,
            trace: TraceOptions::NONE,
        }
    }

    pub fn plan(&self) -> Result<TimePlan> {
        build_time_plan(self.schedule.steps, self.jump_len, self.n_resample)
    }
}

/// The known branch at step `t`: the condition image itself at `t = 0`,
/// otherwise its forward sample with noise `eps`.
pub fn known_sample(cond_image: &GlyphImage, t: usize, schedule: &NoiseSchedule, eps: &[f32]) -> Result<Vec<f32>> {
    if t == 0 {
        if eps.len() != cond_image.pixels().len() {
            return Err(Error::ShapeMismatch("known-branch noise".into()));
        }
        return Ok(cond_image.pixels().to_vec());
    }
    q_sample(cond_image.pixels(), t, eps, schedule)
}

/// `unknown` where the mask is set, `known` elsewhere.
pub fn combine(mask: &Mask, known: &[f32], unknown: &[f32]) -> Result<Vec<f32>> {
    let n = mask.bits().len();
    if known.len() != n || unknown.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "combine: mask {n}, known {}, unknown {}",
            known.len(),
            unknown.len()
        )));
    }
    Ok(mask
        .bits()
        .iter()
        .zip(known.iter().zip(unknown))
        .map(|(&m, (&k, &u))| if m == 1 { u } else { k })
        .collect())
}

/// Applies `x_{s+1} = √α_{s+1}·x_s + √β_{s+1}·ε_s` for `s = from..from+len`,
/// with ε_s from substream `s − from` of `seed`.
pub fn jump_forward(x: &[f32], from: usize, len: usize, schedule: &NoiseSchedule, seed: u64) -> Result<Vec<f32>> {
    if from + len > schedule.steps() {
        return Err(Error::StepOutOfRange {
            t: from + len,
            max: schedule.steps(),
        });
    }
    let stream = SeedStream::new(seed);
    let mut out: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    for k in 0..len {
        let s = from + k + 1;
        let (a, b) = (schedule.alpha(s).sqrt(), schedule.beta(s).sqrt());
        let eps = stream.normal_vec("substep", k as u64, x.len());
        for (v, e) in out.iter_mut().zip(eps) {
            *v = a * *v + b * f64::from(e);
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// Known pixels from `cond_image`, the rest from the clamped final state.
fn stamp(cond_image: &GlyphImage, mask: &Mask, x0: &[f32]) -> GlyphImage {
    let (h, w) = cond_image.resolution();
    let pixels = mask
        .bits()
        .iter()
        .zip(cond_image.pixels().iter().zip(x0))
        .map(|(&m, (&c, &x))| if m == 1 { x.clamp(-1.0, 1.0) } else { c })
        .collect();
    GlyphImage::unchecked_model(h, w, pixels)
}

fn check_inputs(model: &dyn NoisePredictor, cond_image: &GlyphImage, mask: &Mask) -> Result<()> {
    cond_image.ensure_resolution(model.resolution())?;
    mask.ensure_resolution(model.resolution())?;
    if cond_image.range() != PixelRange::Model {
        return Err(Error::InvalidConfig("condition image must be in model range".into()));
    }
    Ok(())
}

/// Per-item seed streams and the counters that index them.
struct Walker {
    stream: SeedStream,
    denoised: u64,
    jumped: u64,
}

impl Walker {
    fn new(seed: u64) -> Self {
        Self {
            stream: SeedStream::new(seed),
            denoised: 0,
            jumped: 0,
        }
    }

    fn init(&self, n: usize) -> Vec<f32> {
        self.stream.normal_vec(STREAM_INIT, 0, n)
    }

    /// The step after a model prediction `eps` for `Denoise(t)`.
    fn denoise(
        &mut self,
        x: &[f32],
        eps: &[f32],
        t: usize,
        cond_image: &GlyphImage,
        mask: &Mask,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f32>> {
        let n = x.len();
        let z = (t > 1).then(|| self.stream.normal_vec(STREAM_Z, self.denoised, n));
        let unknown = posterior_step(x, eps, t, schedule, z.as_deref())?;
        let known_eps = self.stream.normal_vec(STREAM_KNOWN, self.denoised, n);
        let known = known_sample(cond_image, t - 1, schedule, &known_eps)?;
        self.denoised += 1;
        let next = combine(mask, &known, &unknown)?;
        check_finite(&next, t - 1)?;
        Ok(next)
    }

    fn jump(&mut self, x: &[f32], from: usize, to: usize, schedule: &NoiseSchedule) -> Result<Vec<f32>> {
        let seed = self.stream.derive(STREAM_JUMP, self.jumped);
        self.jumped += 1;
        let next = jump_forward(x, from, to - from, schedule, seed)?;
        check_finite(&next, to)?;
        Ok(next)
    }
}

/// Fills the masked region of `cond_image` under condition `cond`.
pub fn inpaint(
    model: &dyn NoisePredictor,
    cond_image: &GlyphImage,
    mask: &Mask,
    cond: &ConditionLabel,
    config: &InpaintConfig,
) -> Result<(GlyphImage, SampleTrace)> {
    let start = Instant::now();
    check_inputs(model, cond_image, mask)?;
    let schedule = config.schedule.build()?;
    let plan = config.plan()?;
    let (h, w) = model.resolution();
    let mut walker = Walker::new(config.seed);
    let mut trace = SampleTrace::new(config.seed, *cond);
    let mut x = walker.init(h * w);
    let last = plan.actions.len();
    if config.trace.keeps(0, false) {
        trace.states.push(TraceState {
            index: 0,
            t: schedule.steps(),
            action: "init",
            image: GlyphImage::unchecked_model(h, w, x.clone()),
        });
    }
    for (i, action) in plan.actions.iter().enumerate() {
        x = match *action {
            PlanAction::Denoise { t } => {
                let eps = model.predict(&[x.clone()], &[t], &[*cond])?.remove(0);
                trace.visited.push(t);
                walker.denoise(&x, &eps, t, cond_image, mask, &schedule)?
            }
            PlanAction::JumpForward { from, to } => {
                trace.jumps += 1;
                walker.jump(&x, from, to, &schedule)?
            }
        };
        if config.trace.keeps(i + 1, i + 1 == last) {
            trace.states.push(TraceState {
                index: i + 1,
                t: action.t_after(),
                action: action.label(),
                image: GlyphImage::unchecked_model(h, w, x.clone()),
            });
        }
    }
    trace.elapsed_ms = start.elapsed().as_millis();
    Ok((stamp(cond_image, mask, &x), trace))
}

/// One item of a batched inpainting run.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintJob {
    pub image: GlyphImage,
    pub mask: Mask,
    pub cond: ConditionLabel,
    pub seed: u64,
}

/// [`inpaint`] for many jobs sharing one plan, batching the network calls.
/// Each output equals the single-job result with the same seed.
pub fn inpaint_batch(
    model: &dyn NoisePredictor,
    jobs: &[InpaintJob],
    jump_len: usize,
    n_resample: usize,
    schedule: ScheduleId,
) -> Result<Vec<GlyphImage>> {
    for job in jobs {
        check_inputs(model, &job.image, &job.mask)?;
    }
    let sched = schedule.build()?;
    let plan = build_time_plan(schedule.steps, jump_len, n_resample)?;
    let (h, w) = model.resolution();
    let mut walkers: Vec<Walker> = jobs.iter().map(|j| Walker::new(j.seed)).collect();
    let mut xs: Vec<Vec<f32>> = walkers.iter().map(|w2| w2.init(h * w)).collect();
    let conds: Vec<_> = jobs.iter().map(|j| j.cond).collect();
    for action in &plan.actions {
        match *action {
            PlanAction::Denoise { t } => {
                let eps = model.predict(&xs, &vec![t; xs.len()], &conds)?;
                for (((x, e), walker), job) in xs.iter_mut().zip(&eps).zip(&mut walkers).zip(jobs) {
                    *x = walker.denoise(x, e, t, &job.image, &job.mask, &sched)?;
                }
            }
            PlanAction::JumpForward { from, to } => {
                for (x, walker) in xs.iter_mut().zip(&mut walkers) {
                    *x = walker.jump(x, from, to, &sched)?;
                }
            }
        }
    }
    Ok(xs.iter().zip(jobs).map(|(x, job)| stamp(&job.image, &job.mask, x)).collect())
}

/// Mean squared difference over 4-neighbour pixel pairs that straddle the
/// mask edge; `None` when the mask has no edge.
pub fn boundary_discrepancy(image: &GlyphImage, mask: &Mask) -> Option<f64> {
    let (h, w) = image.resolution();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            for (yy, xx) in [(y + 1, x), (y, x + 1)] {
                if yy < h && xx < w && mask.is_set(y, x) != mask.is_set(yy, xx) {
                    sum += (f64::from(image.get(y, x)) - f64::from(image.get(yy, xx))).powi(2);
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Serialize)]
struct TraceManifest<'a> {
    seed: u64,
    condition: ConditionLabel,
    plan: &'a TimePlan,
    denoise_steps: usize,
    jumps: usize,
    elapsed_ms: u128,
    files: Vec<TraceFile>,
}

#[derive(Serialize)]
struct TraceFile {
    index: usize,
    t: usize,
    action: &'static str,
    file: String,
}

/// Writes each retained state as `t{index}_{action}.png` plus `plan.json`.
/// States are shown clamped to the displayable range.
pub fn export_trace(trace: &SampleTrace, plan: &TimePlan, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(trace.states.len());
    for state in &trace.states {
        let file = format!("t{:05}_{}.png", state.index, state.action);
        let (h, w) = state.image.resolution();
        let shown = GlyphImage::unchecked_model(h, w, state.image.pixels().iter().map(|v| v.clamp(-1.0, 1.0)).collect());
        shown.save_png(dir.join(&file))?;
        files.push(TraceFile {
            index: state.index,
            t: state.t,
            action: state.action,
            file,
        });
    }
    let manifest = TraceManifest {
        seed: trace.seed,
        condition: trace.condition,
        plan,
        denoise_steps: trace.denoise_steps(),
        jumps: trace.jumps,
        elapsed_ms: trace.elapsed_ms,
        files,
    };
    let path = dir.join("plan.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}
