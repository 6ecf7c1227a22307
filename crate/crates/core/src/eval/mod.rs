//! Classifier-based evaluation of inpainting and generation, and survey
//! tooling.

mod binomial;
mod classifier;
mod report;
mod survey;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use binomial::binomial_p_value;
pub use classifier::{
    classify, train_classifier, Classifier, ClassifierConfig, ClassifierMeta, ClassifierTrainConfig, HeadAccuracy, Prediction,
};
pub use report::{
    rows_from_outcomes, weighted_total, EvalReport, Outcome, ReportRow, REFERENCE_CHARACTER_ACCURACY, REFERENCE_SCRIPT_ACCURACY,
};
pub use survey::{
    load_key, make_survey, option_letter, parse_responses, save_key, score_survey, write_bundle, AnswerKey, GroupScore, KeyEntry,
    OptionSource, PoolImage, Response, SurveyBundle, SurveyQuestion, SurveyScore, TypeScore, FIND_FAKE, FIND_GENUINE,
    REFERENCE_TYPE_ACCURACY,
};

use crate::corpus::{random_mask, LabeledGlyph, MaskSpec};
use crate::denoiser::Checkpoint;
use crate::diffusion::sample_batch;
use crate::error::{Error, Result};
use crate::image::{GlyphImage, Mask};
use crate::repaint::{inpaint_batch, InpaintJob};
use crate::rng::SeedStream;

/// Settings shared by [`eval_inpainting`] and [`compare_inpaint_vs_generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mask: MaskSpec,
    pub jump_len: usize,
    pub n_resample: usize,
    pub seed: u64,
    /// Items generated together per network call.
    pub batch: usize,
}

impl EvalConfig {
    pub fn new(mask: MaskSpec, seed: u64) -> Self {
        Self {
            mask,
            jump_len: 10,
            n_resample: 5,
            seed,
            batch: 16,
        }
    }
}

/// Published accuracies of inpainting and of full generation, for display.
pub const REFERENCE_INPAINT_ACCURACY: f64 = 0.95;
pub const REFERENCE_GENERATE_ACCURACY: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    /// Character accuracy of inpainted gold images.
    pub acc_inpaint: f64,
    /// Character accuracy of fully sampled images.
    pub acc_generate: f64,
    pub delta: f64,
    pub script_acc_inpaint: f64,
    pub script_acc_generate: f64,
    pub mean_mask_coverage: f64,
    pub mask: MaskSpec,
    pub seed: u64,
}

impl Comparison {
    pub fn summary(&self) -> String {
        format!(
            "acc_inpaint {:.3}  acc_generate {:.3}  delta {:+.3}  (n = {}, script {:.3} vs {:.3}, mean coverage {:.3})\n\
             Reference (published): inpaint {:.2}, generate {:.2}, delta {:+.2}.",
            self.acc_inpaint,
            self.acc_generate,
            self.delta,
            self.n,
            self.script_acc_inpaint,
            self.script_acc_generate,
            self.mean_mask_coverage,
            REFERENCE_INPAINT_ACCURACY,
            REFERENCE_GENERATE_ACCURACY,
            REFERENCE_INPAINT_ACCURACY - REFERENCE_GENERATE_ACCURACY
        )
    }
}

fn check_compatible(ckpt: &Checkpoint, classifier: &Classifier, val: &[LabeledGlyph]) -> Result<()> {
    if ckpt.vocab != *classifier.vocab() {
        return Err(Error::VocabularyMismatch(
            "generator and classifier vocabularies differ".into(),
        ));
    }
    let res = ckpt.params.config().resolution;
    if res != classifier.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: res,
            actual: classifier.resolution(),
        });
    }
    for item in val {
        ckpt.vocab.check(&item.label)?;
        item.image.ensure_resolution(res)?;
    }
    Ok(())
}

/// One evaluation draw: which val item, its mask, and a generation seed.
struct Draw {
    item: usize,
    mask: Mask,
    seed: u64,
}

fn draws(val: &[LabeledGlyph], count: usize, config: &EvalConfig, res: (usize, usize)) -> Result<Vec<Draw>> {
    let stream = SeedStream::new(config.seed);
    (0..count)
        .map(|i| {
            Ok(Draw {
                item: i % val.len(),
                mask: random_mask(stream.derive("mask", i as u64), &config.mask, res)?,
                seed: stream.derive("generate", i as u64),
            })
        })
        .collect()
}

fn inpaint_draws(ckpt: &Checkpoint, val: &[LabeledGlyph], draws: &[Draw], config: &EvalConfig) -> Result<Vec<GlyphImage>> {
    let mut out: Vec<Option<GlyphImage>> = vec![None; draws.len()];
    // An empty mask reproduces the condition image exactly, so skip the work.
    let pending: Vec<usize> = (0..draws.len())
        .filter(|&i| {
            if draws[i].mask.count() == 0 {
                out[i] = Some(val[draws[i].item].image.to_model());
                false
            } else {
                true
            }
        })
        .collect();
    for chunk in pending.chunks(config.batch.max(1)) {
        let jobs: Vec<InpaintJob> = chunk
            .iter()
            .map(|&i| InpaintJob {
                image: val[draws[i].item].image.to_model(),
                mask: draws[i].mask.clone(),
                cond: val[draws[i].item].label,
                seed: draws[i].seed,
            })
            .collect();
        let images = inpaint_batch(&ckpt.params, &jobs, config.jump_len, config.n_resample, ckpt.schedule)?;
        for (&i, img) in chunk.iter().zip(images) {
            out[i] = Some(img);
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every draw filled")).collect())
}

fn outcomes(classifier: &Classifier, val: &[LabeledGlyph], draws: &[Draw], images: &[GlyphImage]) -> Result<Vec<Outcome>> {
    let refs: Vec<&GlyphImage> = images.iter().collect();
    let preds = classifier.classify_batch(&refs)?;
    Ok(draws
        .iter()
        .zip(&preds)
        .map(|(d, p)| {
            let label = val[d.item].label;
            Outcome {
                script: label.script,
                script_correct: p.script_id() == label.script,
                character_correct: p.character_id() == label.character,
            }
        })
        .collect())
}

fn mean_coverage(draws: &[Draw]) -> f64 {
    draws.iter().map(|d| d.mask.coverage()).sum::<f64>() / draws.len().max(1) as f64
}

/// Masks every val item `samples_per_item` times, inpaints it under its true
/// condition, classifies the result, and tabulates accuracy per script.
pub fn eval_inpainting(
    ckpt: &Checkpoint,
    classifier: &Classifier,
    val: &[LabeledGlyph],
    samples_per_item: usize,
    config: &EvalConfig,
) -> Result<EvalReport> {
    check_compatible(ckpt, classifier, val)?;
    config.mask.validate()?;
    if val.is_empty() || samples_per_item == 0 {
        return Err(Error::InvalidConfig(
            "evaluation needs at least one item and one sample".into(),
        ));
    }
    let res = ckpt.params.config().resolution;
    let draws = draws(val, val.len() * samples_per_item, config, res)?;
    let images = inpaint_draws(ckpt, val, &draws, config)?;
    let rows = rows_from_outcomes(&outcomes(classifier, val, &draws, &images)?, &ckpt.vocab.script);
    Ok(EvalReport {
        total: weighted_total(&rows),
        rows,
        total_weighting: "sample-weighted".into(),
        mask: config.mask,
        mean_mask_coverage: mean_coverage(&draws),
        samples_per_item,
        seed: config.seed,
        generator: format!("denoiser step {} {}", ckpt.step, ckpt.schedule),
        classifier: format!("classifier {} epochs", classifier.meta().epochs),
        reference_script_accuracy: REFERENCE_SCRIPT_ACCURACY,
        reference_character_accuracy: REFERENCE_CHARACTER_ACCURACY,
    })
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Classifier accuracy of `n` inpainted gold images against `n` images
/// sampled from noise under the same conditions, cycling through `val`.
pub fn compare_inpaint_vs_generate(
    ckpt: &Checkpoint,
    classifier: &Classifier,
    val: &[LabeledGlyph],
    n: usize,
    config: &EvalConfig,
) -> Result<Comparison> {
    check_compatible(ckpt, classifier, val)?;
    config.mask.validate()?;
    if val.is_empty() || n == 0 {
        return Err(Error::InvalidConfig(
            "comparison needs at least one item and one sample".into(),
        ));
    }
    let res = ckpt.params.config().resolution;
    let draws = draws(val, n, config, res)?;
    let inpainted = inpaint_draws(ckpt, val, &draws, config)?;
    let schedule = ckpt.schedule.build()?;
    let mut generated = Vec::with_capacity(n);
    for chunk in draws.chunks(config.batch.max(1)) {
        let jobs: Vec<_> = chunk.iter().map(|d| (val[d.item].label, d.seed)).collect();
        generated.extend(sample_batch(&ckpt.params, &jobs, &schedule)?);
    }
    let acc = |outcomes: &[Outcome]| {
        let total = weighted_total(&rows_from_outcomes(outcomes, &ckpt.vocab.script));
        (total.character_accuracy, total.script_accuracy)
    };
    let (acc_inpaint, script_acc_inpaint) = acc(&outcomes(classifier, val, &draws, &inpainted)?);
    let (acc_generate, script_acc_generate) = acc(&outcomes(classifier, val, &draws, &generated)?);
    Ok(Comparison {
        n,
        acc_inpaint,
        acc_generate,
        delta: acc_inpaint - acc_generate,
        script_acc_inpaint,
        script_acc_generate,
        mean_mask_coverage: mean_coverage(&draws),
        mask: config.mask,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ConditionLabel, Vocabularies};
    use crate::denoiser::{init_params, DenoiserConfig};
    use crate::diffusion::ScheduleId;
    use crate::image::PixelRange;

    fn fixture() -> (Checkpoint, Classifier, Vec<LabeledGlyph>) {
        let vocab = Vocabularies::new(
            vec!["a".into(), "b".into()],
            vec!["regular".into(), "cursive".into()],
            vec!["s".into()],
        )
        .unwrap();
        let mut config = DenoiserConfig::new(2, 2, 1);
        config.resolution = (8, 8);
        config.base_channels = 4;
        config.channel_mults = vec![1, 2];
        config.time_embed_dim = 8;
        config.groups = 2;
        let schedule = ScheduleId {
            steps: 10,
            beta_start: 1e-3,
            beta_end: 0.2,
        };
        config.timesteps = schedule.steps;
        let ckpt = Checkpoint::fresh(init_params(&config, 1).unwrap(), vocab.clone(), schedule).unwrap();
        let data: Vec<LabeledGlyph> = (0..4)
            .map(|i| LabeledGlyph {
                image: GlyphImage::new(
                    8,
                    8,
                    PixelRange::Model,
                    (0..64).map(|p| if (p + i) % 3 == 0 { 1.0 } else { -1.0 }).collect(),
                )
                .unwrap(),
                label: ConditionLabel::new(i % 2, i / 2, 0),
            })
            .collect();
        let train_config = ClassifierTrainConfig {
            epochs: 3,
            batch: 4,
            ..Default::default()
        };
        let classifier = train_classifier(&data, &[], &vocab, &train_config).unwrap();
        (ckpt, classifier, data)
    }

    #[test]
    fn empty_masks_reproduce_gold_accuracy() {
        let (ckpt, classifier, val) = fixture();
        let report = eval_inpainting(&ckpt, &classifier, &val, 2, &EvalConfig::new(MaskSpec::EMPTY, 5)).unwrap();
        let gold = classifier.accuracy(&val).unwrap();
        assert_eq!(report.total.script_accuracy, gold.script);
        assert_eq!(report.total.character_accuracy, gold.character);
        assert_eq!(report.mean_mask_coverage, 0.0);
        assert_eq!(report.total.samples, 8);
    }

    #[test]
    fn comparison_runs_and_is_deterministic() {
        let (ckpt, classifier, val) = fixture();
        let mut config = EvalConfig::new(MaskSpec::EVAL, 3);
        config.jump_len = 5;
        config.n_resample = 2;
        config.batch = 3;
        let a = compare_inpaint_vs_generate(&ckpt, &classifier, &val, 5, &config).unwrap();
        let b = compare_inpaint_vs_generate(&ckpt, &classifier, &val, 5, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.delta, a.acc_inpaint - a.acc_generate);
        assert!(a.mean_mask_coverage > 0.0);
        assert!(a.summary().contains("delta"));
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let (mut ckpt, classifier, val) = fixture();
        ckpt.vocab.style = vec!["other".into()];
        let err = eval_inpainting(&ckpt, &classifier, &val, 1, &EvalConfig::new(MaskSpec::EMPTY, 0)).unwrap_err();
        assert!(matches!(err, Error::VocabularyMismatch(_)));
    }
}
