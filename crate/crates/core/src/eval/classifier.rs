//! Two-head convolutional classifier used to score generated glyphs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledGlyph, Vocabularies};
use crate::denoiser::{read_container, write_container};
use crate::error::{Error, Result};
use crate::image::GlyphImage;
use crate::nn::{
    avg_pool2, avg_pool2_backward, silu, silu_backward, Adam, AdamConfig, Conv2d, Linear, ParamStore, Scalar, Tensor,
};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub resolution: (usize, usize),
    /// Output channels of the two convolution blocks.
    pub channels: (usize, usize),
    pub n_scripts: usize,
    pub n_characters: usize,
}

impl ClassifierConfig {
    pub fn for_vocab(vocab: &Vocabularies, resolution: (usize, usize)) -> Self {
        Self {
            resolution,
            channels: (32, 64),
            n_scripts: vocab.script.len(),
            n_characters: vocab.character.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!(
                "classifier resolution {h}x{w} must be a multiple of 4"
            )));
        }
        if self.channels.0 == 0 || self.channels.1 == 0 || self.n_scripts == 0 || self.n_characters == 0 {
            return Err(Error::InvalidConfig("classifier widths must be positive".into()));
        }
        Ok(())
    }

    fn flat_width(&self) -> usize {
        self.channels.1 * (self.resolution.0 / 4) * (self.resolution.1 / 4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Output channels of the two convolution blocks.
    pub channels: (usize, usize),
    /// Random translation of up to this many pixels during training.
    pub max_shift: usize,
    /// Random scaling by a factor in `1 ± max_scale`.
    pub max_scale: f64,
    /// Random rotation of up to this many radians.
    pub max_rotation: f64,
    /// Randomly thicken or thin strokes by one pixel.
    pub stroke_jitter: bool,
    /// Refuse datasets that leave a script or character id unseen.
    pub require_full_coverage: bool,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            batch: 32,
            seed: 0,
            channels: (32, 64),
            max_shift: 2,
            max_scale: 0.1,
            max_rotation: 0.1,
            stroke_jitter: true,
            require_full_coverage: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadAccuracy {
    pub script: f64,
    pub character: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub kind: String,
    pub config: ClassifierConfig,
    pub vocab: Vocabularies,
    pub epochs: usize,
    pub final_loss: f32,
    pub val_accuracy: Option<HeadAccuracy>,
}

#[derive(Debug, Clone)]
struct Layers {
    conv1: Conv2d,
    conv2: Conv2d,
    script: Linear,
    character: Linear,
}

impl Layers {
    fn build<S: Scalar, R: Rng + ?Sized>(config: &ClassifierConfig, store: &mut ParamStore<S>, rng: &mut R) -> Self {
        let (c1, c2) = config.channels;
        Self {
            conv1: Conv2d::register(store, "conv1", 1, c1, 3, false, rng),
            conv2: Conv2d::register(store, "conv2", c1, c2, 3, false, rng),
            script: Linear::register(store, "head.script", config.flat_width(), config.n_scripts, rng),
            character: Linear::register(store, "head.character", config.flat_width(), config.n_characters, rng),
        }
    }
}

struct Ctx<S> {
    x: Tensor<S>,
    h1: Tensor<S>,
    p1: Tensor<S>,
    h2: Tensor<S>,
    flat: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    meta: ClassifierMeta,
    store: ParamStore<f32>,
    layers: Layers,
}

/// Class probabilities from both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub script: Vec<f64>,
    pub character: Vec<f64>,
}

impl Prediction {
    pub fn script_id(&self) -> usize {
        argmax(&self.script)
    }

    pub fn character_id(&self) -> usize {
        argmax(&self.character)
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn softmax<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap_or(f64::NAN)));
    let exps: Vec<f64> = logits.iter().map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn forward<S: Scalar>(layers: &Layers, p: &ParamStore<S>, x: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Ctx<S>) {
    let h1 = layers.conv1.forward(p, x);
    let p1 = avg_pool2(&silu(&h1));
    let h2 = layers.conv2.forward(p, &p1);
    let p2 = avg_pool2(&silu(&h2));
    let flat = Tensor::from_vec(p2.n, p2.c * p2.h * p2.w, 1, 1, p2.data);
    let script = layers.script.forward(p, &flat);
    let character = layers.character.forward(p, &flat);
    let ctx = Ctx {
        x: x.clone(),
        h1,
        p1,
        h2,
        flat,
    };
    (script, character, ctx)
}

/// Summed cross-entropy of both heads, averaged over the batch.
fn loss_and_grad<S: Scalar>(
    layers: &Layers,
    config: &ClassifierConfig,
    p: &ParamStore<S>,
    x: &Tensor<S>,
    labels: &[(usize, usize)],
    with_grad: bool,
) -> (f64, Option<ParamStore<S>>) {
    let (script, character, ctx) = forward(layers, p, x);
    let n = x.n as f64;
    let mut loss = 0.0;
    let mut d_script = script.clone();
    let mut d_char = character.clone();
    for (i, &(s, c)) in labels.iter().enumerate() {
        for (logits, grad, target) in [(&script, &mut d_script, s), (&character, &mut d_char, c)] {
            let probs = softmax(logits.item(i));
            loss -= probs[target].max(1e-300).ln();
            for (j, (g, pj)) in grad.item_mut(i).iter_mut().zip(&probs).enumerate() {
                let onehot = if j == target { 1.0 } else { 0.0 };
                *g = S::of((pj - onehot) / n);
            }
        }
    }
    let loss = loss / n;
    if !with_grad {
        return (loss, None);
    }
    let mut g = p.zeros_like();
    let mut d_flat = layers.script.backward(p, &mut g, &ctx.flat, &d_script);
    d_flat.add_assign(&layers.character.backward(p, &mut g, &ctx.flat, &d_char));
    let (c2, hh, ww) = (config.channels.1, config.resolution.0 / 4, config.resolution.1 / 4);
    let d_p2 = Tensor::from_vec(x.n, c2, hh, ww, d_flat.data);
    let d_h2 = silu_backward(&ctx.h2, &avg_pool2_backward(&d_p2));
    let d_p1 = layers.conv2.backward(p, &mut g, &ctx.p1, &d_h2, true).expect("dx");
    let d_h1 = silu_backward(&ctx.h1, &avg_pool2_backward(&d_p1));
    layers.conv1.backward(p, &mut g, &ctx.x, &d_h1, false);
    (loss, Some(g))
}

/// Random geometric and stroke-width perturbation of one training image.
/// Background is white (`1.0`); pixels sampled from outside stay white.
fn augment<R: Rng + ?Sized>(image: &[f32], (h, w): (usize, usize), config: &ClassifierTrainConfig, rng: &mut R) -> Vec<f32> {
    let s = config.max_shift as f64;
    let (dy, dx) = if s > 0.0 {
        (rng.gen_range(-s..=s), rng.gen_range(-s..=s))
    } else {
        (0.0, 0.0)
    };
    let scale = if config.max_scale > 0.0 {
        1.0 + rng.gen_range(-config.max_scale..=config.max_scale)
    } else {
        1.0
    };
    let angle = if config.max_rotation > 0.0 {
        rng.gen_range(-config.max_rotation..=config.max_rotation)
    } else {
        0.0
    };
    let (sin, cos) = angle.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |y: isize, x: isize| {
        if (0..h as isize).contains(&y) && (0..w as isize).contains(&x) {
            image[y as usize * w + x as usize] as f64
        } else {
            1.0
        }
    };
    let mut out = vec![1.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            // Inverse map from output to source coordinates.
            let (oy, ox) = (y as f64 - cy - dy, x as f64 - cx - dx);
            let sy = (cos * oy - sin * ox) / scale + cy;
            let sx = (sin * oy + cos * ox) / scale + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out[y * w + x] = v as f32;
        }
    }
    if config.stroke_jitter {
        match rng.gen_range(0..3) {
            0 => out = morph(&out, (h, w), f32::min),
            1 => out = morph(&out, (h, w), f32::max),
            _ => {}
        }
    }
    out
}

/// 4-neighbour min (thickens ink) or max (thins ink) filter.
fn morph(image: &[f32], (h, w): (usize, usize), pick: fn(f32, f32) -> f32) -> Vec<f32> {
    let mut out = image.to_vec();
    for y in 0..h {
        for x in 0..w {
            let mut v = image[y * w + x];
            if y > 0 {
                v = pick(v, image[(y - 1) * w + x]);
            }
            if y + 1 < h {
                v = pick(v, image[(y + 1) * w + x]);
            }
            if x > 0 {
                v = pick(v, image[y * w + x - 1]);
            }
            if x + 1 < w {
                v = pick(v, image[y * w + x + 1]);
            }
            out[y * w + x] = v;
        }
    }
    out
}

/// Fits a classifier on `train` and, if `val` is non-empty, records its
/// accuracy there.
pub fn train_classifier(
    train: &[LabeledGlyph],
    val: &[LabeledGlyph],
    vocab: &Vocabularies,
    config: &ClassifierTrainConfig,
) -> Result<Classifier> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidConfig("classifier training set is empty".into()));
    };
    if config.batch == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidConfig("batch and learning rate must be positive".into()));
    }
    let resolution = first.image.resolution();
    let net = ClassifierConfig {
        channels: config.channels,
        ..ClassifierConfig::for_vocab(vocab, resolution)
    };
    net.validate()?;
    for item in train.iter().chain(val) {
        item.image.ensure_resolution(resolution)?;
        vocab.check(&item.label)?;
    }
    if config.require_full_coverage {
        let mut seen_script = vec![false; net.n_scripts];
        let mut seen_char = vec![false; net.n_characters];
        for item in train {
            seen_script[item.label.script] = true;
            seen_char[item.label.character] = true;
        }
        if let Some(i) = seen_script.iter().position(|s| !s) {
            return Err(Error::InvalidConfig(format!(
                "script {:?} has no training image",
                vocab.script[i]
            )));
        }
        if let Some(i) = seen_char.iter().position(|s| !s) {
            return Err(Error::InvalidConfig(format!(
                "character {:?} has no training image",
                vocab.character[i]
            )));
        }
    }
    let stream = SeedStream::new(config.seed);
    let mut store = ParamStore::new();
    let layers = Layers::build(&net, &mut store, &mut stream.rng("init", 0));
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let (h, w) = resolution;
    let mut final_loss = f32::NAN;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream.rng("epoch", epoch as u64));
        let mut aug = stream.rng("augment", epoch as u64);
        let (mut sum, mut batches) = (0.0, 0);
        for chunk in order.chunks(config.batch) {
            let mut data = Vec::with_capacity(chunk.len() * h * w);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend(augment(train[i].image.pixels(), resolution, config, &mut aug));
                labels.push((train[i].label.script, train[i].label.character));
            }
            let x = Tensor::from_vec(chunk.len(), 1, h, w, data);
            let (loss, grads) = loss_and_grad(&layers, &net, &store, &x, &labels, true);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss at epoch {epoch}")));
            }
            adam.update(&mut store, &grads.expect("requested"));
            sum += loss;
            batches += 1;
        }
        final_loss = (sum / batches as f64) as f32;
    }
    let mut classifier = Classifier {
        meta: ClassifierMeta {
            kind: "classifier".into(),
            config: net,
            vocab: vocab.clone(),
            epochs: config.epochs,
            final_loss,
            val_accuracy: None,
        },
        store,
        layers,
    };
    if !val.is_empty() {
        classifier.meta.val_accuracy = Some(classifier.accuracy(val)?);
    }
    Ok(classifier)
}

impl Classifier {
    pub fn meta(&self) -> &ClassifierMeta {
        &self.meta
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.meta.vocab
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.meta.config.resolution
    }

    /// Mean cross-entropy over `data` (both heads summed).
    pub fn loss(&self, data: &[LabeledGlyph]) -> Result<f64> {
        let (h, w) = self.resolution();
        let mut pixels = Vec::with_capacity(data.len() * h * w);
        for item in data {
            item.image.ensure_resolution((h, w))?;
            pixels.extend_from_slice(item.image.pixels());
        }
        let labels: Vec<_> = data.iter().map(|d| (d.label.script, d.label.character)).collect();
        let x = Tensor::from_vec(data.len(), 1, h, w, pixels);
        Ok(loss_and_grad(&self.layers, &self.meta.config, &self.store, &x, &labels, false).0)
    }

    pub fn classify_batch(&self, images: &[&GlyphImage]) -> Result<Vec<Prediction>> {
        let (h, w) = self.resolution();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut data = Vec::with_capacity(chunk.len() * h * w);
            for img in chunk {
                img.ensure_resolution((h, w))?;
                data.extend(img.to_model().pixels());
            }
            let x = Tensor::from_vec(chunk.len(), 1, h, w, data);
            let (script, character, _) = forward(&self.layers, &self.store, &x);
            for i in 0..chunk.len() {
                out.push(Prediction {
                    script: softmax(script.item(i)),
                    character: softmax(character.item(i)),
                });
            }
        }
        Ok(out)
    }

    /// Per-head accuracy of argmax predictions on `data`.
    pub fn accuracy(&self, data: &[LabeledGlyph]) -> Result<HeadAccuracy> {
        let images: Vec<_> = data.iter().map(|d| &d.image).collect();
        let preds = self.classify_batch(&images)?;
        let n = data.len().max(1) as f64;
        let script = data
            .iter()
            .zip(&preds)
            .filter(|(d, p)| p.script_id() == d.label.script)
            .count();
        let character = data
            .iter()
            .zip(&preds)
            .filter(|(d, p)| p.character_id() == d.label.character)
            .count();
        Ok(HeadAccuracy {
            script: script as f64 / n,
            character: character as f64 / n,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_container(&self.meta, &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, store): (ClassifierMeta, ParamStore<f32>) = read_container(bytes)?;
        if meta.kind != "classifier" {
            return Err(Error::Checkpoint(format!("expected a classifier, found {:?}", meta.kind)));
        }
        meta.vocab.validate()?;
        meta.config.validate()?;
        if (meta.vocab.script.len(), meta.vocab.character.len()) != (meta.config.n_scripts, meta.config.n_characters) {
            return Err(Error::VocabularyMismatch(
                "classifier heads do not match its vocabularies".into(),
            ));
        }
        let mut reference = ParamStore::<f32>::new();
        let layers = Layers::build(&meta.config, &mut reference, &mut SeedStream::new(0).rng("layout", 0));
        let same = reference.len() == store.len()
            && reference
                .entries()
                .iter()
                .zip(store.entries())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same {
            return Err(Error::Checkpoint("classifier tensors do not match its configuration".into()));
        }
        Ok(Self { meta, store, layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Both heads' probabilities for one image.
pub fn classify(classifier: &Classifier, image: &GlyphImage) -> Result<Prediction> {
    Ok(classifier.classify_batch(&[image])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ConditionLabel;
    use crate::image::PixelRange;

    fn vocab(chars: usize, scripts: usize) -> Vocabularies {
        Vocabularies::new(
            (0..chars).map(|i| format!("c{i}")).collect(),
            (0..scripts).map(|i| format!("s{i}")).collect(),
            vec!["y".into()],
        )
        .unwrap()
    }

    fn noise_glyph(seed: u64, label: ConditionLabel) -> LabeledGlyph {
        let px = SeedStream::new(seed).normal_vec("px", 0, 64);
        LabeledGlyph {
            image: GlyphImage::new(8, 8, PixelRange::Model, px.iter().map(|v| v.clamp(-1.0, 1.0)).collect()).unwrap(),
            label,
        }
    }

    #[test]
    fn overfits_a_single_image() {
        let item = noise_glyph(1, ConditionLabel::new(2, 1, 0));
        let config = ClassifierTrainConfig {
            epochs: 300,
            max_shift: 0,
            max_scale: 0.0,
            max_rotation: 0.0,
            stroke_jitter: false,
            require_full_coverage: false,
            ..ClassifierTrainConfig::default()
        };
        let c = train_classifier(std::slice::from_ref(&item), &[], &vocab(3, 2), &config).unwrap();
        assert!(c.loss(std::slice::from_ref(&item)).unwrap() < 1e-3);
        let p = classify(&c, &item.image).unwrap();
        assert_eq!((p.script_id(), p.character_id()), (1, 2));
        assert!((p.script.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((p.character.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p, classify(&c, &item.image).unwrap());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let data: Vec<_> = (0..6)
            .map(|i| noise_glyph(i, ConditionLabel::new(i as usize % 3, i as usize % 2, 0)))
            .collect();
        let config = ClassifierTrainConfig {
            epochs: 3,
            batch: 4,
            ..ClassifierTrainConfig::default()
        };
        let a = train_classifier(&data, &data, &vocab(3, 2), &config).unwrap();
        let b = train_classifier(&data, &data, &vocab(3, 2), &config).unwrap();
        assert_eq!(a.store, b.store);
        let back = Classifier::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(back.store, a.store);
        assert_eq!(back.meta, a.meta);
        assert!(a.meta.val_accuracy.is_some());
    }

    #[test]
    fn missing_coverage_is_rejected() {
        let data = vec![noise_glyph(0, ConditionLabel::new(0, 0, 0))];
        let err = train_classifier(&data, &[], &vocab(2, 1), &ClassifierTrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = ClassifierConfig {
            resolution: (8, 8),
            channels: (2, 3),
            n_scripts: 2,
            n_characters: 3,
        };
        let mut store = ParamStore::<f64>::new();
        let stream = SeedStream::new(3);
        let layers = Layers::build(&config, &mut store, &mut stream.rng("init", 0));
        let px: Vec<f64> = stream.normal_vec("x", 0, 128).into_iter().map(f64::from).collect();
        let x = Tensor::from_vec(2, 1, 8, 8, px);
        let labels = [(0, 2), (1, 0)];
        let (_, g) = loss_and_grad(&layers, &config, &store, &x, &labels, true);
        let g = g.unwrap();
        let h = 1e-5;
        for idx in (0..store.param_count()).step_by(7) {
            let orig = store.flat_get(idx);
            store.flat_set(idx, orig + h);
            let up = loss_and_grad(&layers, &config, &store, &x, &labels, false).0;
            store.flat_set(idx, orig - h);
            let down = loss_and_grad(&layers, &config, &store, &x, &labels, false).0;
            store.flat_set(idx, orig);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.flat_get(idx);
            let scale = numeric.abs().max(analytic.abs()).max(1e-6);
            assert!((numeric - analytic).abs() / scale < 1e-4, "{idx}: {analytic} vs {numeric}");
        }
    }
}
