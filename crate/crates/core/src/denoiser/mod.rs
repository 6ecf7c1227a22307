//! The conditional ε-prediction network: parameters, forward pass,
//! training, and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod train;
pub mod unet;

pub use checkpoint::{
    load_checkpoint, read_container, save_checkpoint, write_container, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::DenoiserConfig;
pub use gradcheck::{gradient_check, probe_config, GradCheckReport, GradProbe};
pub use train::{train, TrainConfig, TrainOutcome};
pub use unet::UNet;

use crate::corpus::ConditionLabel;
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::image::GlyphImage;
use crate::nn::{ParamStore, Tensor};
use crate::rng::SeedStream;

/// Network weights together with the layout that interprets them.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    store: ParamStore<f32>,
    unet: UNet,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store
    }
}

/// Fresh parameters: fan-in scaled uniform weights, unit norms, and a
/// zero output convolution (so ε̂ starts identically zero).
pub fn init_params(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = SeedStream::new(seed).rng("init_params", 0);
    let unet = UNet::build(config, &mut store, &mut rng);
    Ok(DenoiserParams {
        config: config.clone(),
        store,
        unet,
    })
}

impl DenoiserParams {
    /// Wraps loaded tensors, checking names and shapes against `config`.
    pub fn from_store(config: DenoiserConfig, store: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let mut reference = ParamStore::<f32>::new();
        let unet = UNet::build(&config, &mut reference, &mut SeedStream::new(0).rng("layout", 0));
        if reference.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for the configured network, found {}",
                reference.len(),
                store.len()
            )));
        }
        for (want, got) in reference.entries().iter().zip(store.entries()) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {:?} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        Ok(Self { config, store, unet })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn check_condition(&self, cond: &ConditionLabel) -> Result<()> {
        let sizes = [
            ("character", cond.character, self.config.n_characters),
            ("script", cond.script, self.config.n_scripts),
            ("style", cond.style, self.config.n_styles),
        ];
        for (field, id, size) in sizes {
            if id >= size {
                return Err(Error::IdOutOfBounds { field, id, size });
            }
        }
        Ok(())
    }

    /// Batched ε̂ with per-item timesteps.
    pub fn predict_batch(&self, states: &[Vec<f32>], ts: &[usize], conds: &[ConditionLabel]) -> Result<Vec<Vec<f32>>> {
        let (h, w) = self.config.resolution;
        if states.len() != ts.len() || states.len() != conds.len() {
            return Err(Error::ShapeMismatch("one timestep and condition per state".into()));
        }
        let mut data = Vec::with_capacity(states.len() * h * w);
        for (s, (&t, cond)) in states.iter().zip(ts.iter().zip(conds)) {
            if s.len() != h * w {
                return Err(Error::ShapeMismatch(format!("state of {} pixels, model is {h}x{w}", s.len())));
            }
            if t == 0 || t > self.config.timesteps {
                return Err(Error::StepOutOfRange {
                    t,
                    max: self.config.timesteps,
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("denoiser input at t={t}")));
            }
            self.check_condition(cond)?;
            data.extend_from_slice(s);
        }
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::from_vec(states.len(), 1, h, w, data);
        let (eps, _) = self.unet.forward(&self.store, &x, ts, conds, false);
        Ok(eps.data.chunks_exact(h * w).map(<[f32]>::to_vec).collect())
    }
}

impl NoisePredictor for DenoiserParams {
    fn resolution(&self) -> (usize, usize) {
        self.config.resolution
    }

    fn predict(&self, states: &[Vec<f32>], ts: &[usize], conds: &[ConditionLabel]) -> Result<Vec<Vec<f32>>> {
        self.predict_batch(states, ts, conds)
    }
}

/// The summed condition embedding `e_char + e_script + e_style`.
pub fn embed_condition(params: &DenoiserParams, cond: &ConditionLabel) -> Result<Vec<f32>> {
    params.check_condition(cond)?;
    Ok(params.unet.condition_embedding(&params.store, cond))
}

/// ε̂(x_t, t, cond) as an H×W grid.
pub fn forward(params: &DenoiserParams, x_t: &GlyphImage, t: usize, cond: &ConditionLabel) -> Result<Vec<f32>> {
    x_t.ensure_resolution(params.config.resolution)?;
    let mut out = params.predict_batch(&[x_t.pixels().to_vec()], &[t], &[*cond])?;
    Ok(out.remove(0))
}
