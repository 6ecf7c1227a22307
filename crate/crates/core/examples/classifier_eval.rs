//! Trains the script/character classifier on a held-out split, then
//! evaluates inpainting at two mask coverages and compares it against
//! sampling from scratch.
//!
//! Run `train_and_sample` first for the checkpoint, or pass one.

use std::path::PathBuf;

use callipaint::corpus::{load_dataset, Manifest, MaskSpec, Split, MANIFEST_FILE};
use callipaint::denoiser::load_checkpoint;
use callipaint::eval::{compare_inpaint_vs_generate, eval_inpainting, train_classifier, ClassifierTrainConfig, EvalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("callipaint-example");
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("denoiser.ckpt"));
    let ckpt = load_checkpoint(&path).map_err(|e| format!("{e} (run the train_and_sample example first)"))?;

    // The corpus the checkpoint was trained on; its val split is unseen.
    let manifest = Manifest::load(dir.join("corpus").join(MANIFEST_FILE))?;
    let train = load_dataset(&manifest, Split::Train, None)?;
    let val = load_dataset(&manifest, Split::Val, None)?;
    let config = ClassifierTrainConfig {
        epochs: 60,
        ..ClassifierTrainConfig::default()
    };
    let classifier = train_classifier(&train, &val, &manifest.vocab, &config)?;
    println!("classifier val accuracy {:?}", classifier.meta().val_accuracy);

    for mask in [MaskSpec::EMPTY, MaskSpec::EVAL.with_coverage(0.25, 0.5)] {
        let config = EvalConfig {
            n_resample: 2,
            ..EvalConfig::new(mask, 0)
        };
        let report = eval_inpainting(&ckpt, &classifier, &val, 1, &config)?;
        println!("\n{}", report.to_table());
    }
    let config = EvalConfig {
        n_resample: 2,
        ..EvalConfig::new(MaskSpec::EVAL.with_coverage(0.25, 0.5), 0)
    };
    println!(
        "{}",
        compare_inpaint_vs_generate(&ckpt, &classifier, &val, 12, &config)?.summary()
    );
    Ok(())
}
