//! Trains a small conditional denoiser on a few characters, saves the
//! checkpoint, and samples one glyph per (character, script) pair.
//!
//! ```text
//! cargo run --release --example train_and_sample -- 2000
//! ```
//!
//! The checkpoint and corpus land in the system temp dir and are reused by
//! the `inpaint`, `radical_swap` and `classifier_eval` examples.

use std::path::PathBuf;
use std::time::Instant;

use callipaint::corpus::{build_manifest, load_dataset, CorpusSpec, Split};
use callipaint::denoiser::{init_params, save_checkpoint, train, Checkpoint, DenoiserConfig, TrainConfig};
use callipaint::diffusion::{sample_batch, ScheduleId};

fn workdir() -> PathBuf {
    std::env::temp_dir().join("callipaint-example")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let dir = workdir();
    let fonts = ["noto-serif-sc", "ma-shan-zheng", "zhi-mang-xing", "liu-jian-mao-cao"];
    let manifest = build_manifest(&CorpusSpec::builtin_with_fonts(6, fonts, 0.25, 0), dir.join("corpus"))?;
    let data = load_dataset(&manifest, Split::Train, None)?;
    println!("{} training glyphs, vocabulary {:?}", data.len(), manifest.vocab.character);

    let config = DenoiserConfig::desk(&manifest.vocab);
    let params = init_params(&config, 0)?;
    println!("{} parameters", params.param_count());
    let start = Checkpoint::fresh(params, manifest.vocab.clone(), ScheduleId::DEFAULT)?;
    let clock = Instant::now();
    let outcome = train(
        start,
        &data,
        &TrainConfig {
            steps,
            log_every: 100,
            ..TrainConfig::default()
        },
        |step, loss| {
            println!("step {step:>6}  loss {loss:.4}  {:.0}s", clock.elapsed().as_secs_f64());
        },
    )?;
    let ckpt = outcome.checkpoint;
    save_checkpoint(&ckpt, dir.join("denoiser.ckpt"))?;

    let schedule = ckpt.schedule.build()?;
    let mut jobs = Vec::new();
    for character in &manifest.vocab.character {
        for script in &manifest.vocab.script {
            let style = &manifest
                .entries
                .iter()
                .find(|e| &e.script == script)
                .expect("every script has a font")
                .style;
            jobs.push((ckpt.vocab.resolve(character, script, style)?, jobs.len() as u64));
        }
    }
    let images = sample_batch(&ckpt.params, &jobs, &schedule)?;
    let out = dir.join("samples");
    std::fs::create_dir_all(&out)?;
    for ((cond, seed), image) in jobs.iter().zip(&images) {
        let (c, s, _) = ckpt.vocab.names(cond)?;
        image.save_png(out.join(format!("{c}_{s}_{seed}.png")))?;
    }
    println!("{} samples in {}", images.len(), out.display());
    Ok(())
}
