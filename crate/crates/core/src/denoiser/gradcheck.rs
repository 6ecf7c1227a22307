//! Finite-difference verification of the analytic gradients.

use rand::Rng;

use super::{init_params, DenoiserConfig};
use crate::corpus::{ConditionLabel, LabeledGlyph};
use crate::diffusion::{make_schedule, unet_loss};
use crate::error::Result;
use crate::image::{GlyphImage, PixelRange};
use crate::nn::ParamStore;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct GradProbe {
    pub name: String,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradProbe {
    /// `|a − n| / max(|a|, |n|)`, or 0 when both are below `floor`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < floor {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub probes: Vec<GradProbe>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.probes.iter().map(|p| p.relative_error(floor)).fold(0.0, f64::max)
    }
}

/// A tiny network for gradient checks: 8×8, two levels, under 2k weights.
pub fn probe_config() -> DenoiserConfig {
    DenoiserConfig {
        resolution: (8, 8),
        base_channels: 2,
        channel_mults: vec![1, 2],
        time_embed_dim: 8,
        n_characters: 3,
        n_scripts: 2,
        n_styles: 2,
        groups: 2,
        timesteps: 20,
    }
}

/// Compares the double-precision analytic gradient of the training loss
/// against central differences with step `h` on `probes` random
/// coordinates. The zero-initialized output convolution is randomized first
/// so every path carries gradient.
pub fn gradient_check(config: &DenoiserConfig, seed: u64, probes: usize, h: f64) -> Result<GradCheckReport> {
    let params = init_params(config, seed)?;
    let stream = SeedStream::new(seed);
    let mut store: ParamStore<f64> = params.store().cast();
    let mut rng = stream.rng("gradcheck", 0);
    let out = store.id("out.conv.weight").expect("output conv");
    for v in store.get_mut(out) {
        *v = rng.gen_range(-0.3..0.3);
    }
    let (hh, ww) = config.resolution;
    let batch: Vec<LabeledGlyph> = (0..3)
        .map(|i| {
            let pixels = (0..hh * ww).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
            LabeledGlyph {
                image: GlyphImage::new(hh, ww, PixelRange::Model, pixels).expect("model range"),
                label: ConditionLabel::new(i % config.n_characters, i % config.n_scripts, (i + 1) % config.n_styles),
            }
        })
        .collect();
    let schedule = make_schedule(config.timesteps, 1e-3, 0.2)?;
    let loss_seed = stream.derive("loss", 0);
    let (_, grads) = unet_loss(params.unet(), &store, &batch, &schedule, loss_seed, true)?;
    let grads = grads.expect("requested");
    let total = store.param_count();
    let mut out = Vec::with_capacity(probes);
    for _ in 0..probes {
        let idx = rng.gen_range(0..total);
        let orig = store.flat_get(idx);
        store.flat_set(idx, orig + h);
        let (up, _) = unet_loss(params.unet(), &store, &batch, &schedule, loss_seed, false)?;
        store.flat_set(idx, orig - h);
        let (down, _) = unet_loss(params.unet(), &store, &batch, &schedule, loss_seed, false)?;
        store.flat_set(idx, orig);
        out.push(GradProbe {
            name: name_of(&store, idx),
            flat_index: idx,
            analytic: grads.flat_get(idx),
            numeric: (up - down) / (2.0 * h),
        });
    }
    Ok(GradCheckReport {
        param_count: total,
        probes: out,
    })
}

fn name_of(store: &ParamStore<f64>, mut idx: usize) -> String {
    for e in store.entries() {
        if idx < e.data.len() {
            return e.name.clone();
        }
        idx -= e.data.len();
    }
    unreachable!("index within param_count")
}
