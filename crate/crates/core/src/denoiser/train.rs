use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::corpus::LabeledGlyph;
use crate::diffusion::training_loss;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::rng::SeedStream;

/// How many logged losses a checkpoint keeps.
const LOSS_TAIL: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Log the mean loss every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            steps: 1000,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// The loss at every step of this run.
    pub losses: Vec<f32>,
}

/// Cycles through the dataset in seeded per-epoch permutations.
struct BatchOrder {
    stream: SeedStream,
    len: usize,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(seed: u64, len: usize) -> Self {
        let mut order = Self {
            stream: SeedStream::new(seed),
            len,
            epoch: 0,
            perm: Vec::new(),
            pos: 0,
        };
        order.reshuffle();
        order
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.perm = (0..self.len).collect();
        self.perm.shuffle(&mut self.stream.rng("shuffle", self.epoch));
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Adam on the ε objective, starting from `start`. The returned checkpoint
/// continues `start`'s step count and loss history. `on_log` sees each
/// logged `(step, mean loss)`.
pub fn train(
    start: Checkpoint,
    dataset: &[LabeledGlyph],
    config: &TrainConfig,
    mut on_log: impl FnMut(u64, f32),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    if config.batch == 0 || config.log_every == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidConfig(
            "batch, log interval and learning rate must be positive".into(),
        ));
    }
    let schedule = start.schedule.build()?;
    if schedule.steps() != start.params.config().timesteps {
        return Err(Error::InvalidConfig(
            "schedule length differs from the model's timestep range".into(),
        ));
    }
    let mut ckpt = start;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        ckpt.params.store(),
    );
    let stream = SeedStream::new(config.seed);
    let mut order = BatchOrder::new(stream.derive("batches", 0), dataset.len());
    let mut losses = Vec::with_capacity(config.steps);
    let mut window = 0.0f64;
    for step in 0..config.steps {
        let batch: Vec<LabeledGlyph> = order
            .next_batch(config.batch)
            .into_iter()
            .map(|i| dataset[i].clone())
            .collect();
        let (loss, grads) = training_loss(&ckpt.params, &batch, &schedule, stream.derive("loss", step as u64))?;
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("gradients at step {step}")));
        }
        adam.update(ckpt.params.store_mut(), &grads);
        losses.push(loss);
        window += f64::from(loss);
        if (step + 1) % config.log_every == 0 || step + 1 == config.steps {
            let n = (step % config.log_every) + 1;
            let mean = (window / n as f64) as f32;
            window = 0.0;
            ckpt.loss_tail.push(mean);
            on_log(ckpt.step + step as u64 + 1, mean);
        }
    }
    if !ckpt.params.store().all_finite() {
        return Err(Error::NonFinite("parameters after training".into()));
    }
    ckpt.step += config.steps as u64;
    let excess = ckpt.loss_tail.len().saturating_sub(LOSS_TAIL);
    ckpt.loss_tail.drain(..excess);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        losses,
    })
}
