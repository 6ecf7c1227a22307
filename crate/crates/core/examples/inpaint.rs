//! Inpaints the right half of a rendered glyph under each script, exports
//! the intermediate states, and shows that unmasked pixels are untouched.
//!
//! Run `train_and_sample` first, or pass a checkpoint path.

use std::path::PathBuf;

use callipaint::corpus::{load_font, render_glyph};
use callipaint::denoiser::load_checkpoint;
use callipaint::diffusion::TraceOptions;
use callipaint::image::Mask;
use callipaint::repaint::{boundary_discrepancy, export_trace, inpaint, InpaintConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("callipaint-example");
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("denoiser.ckpt"));
    let ckpt = load_checkpoint(&path).map_err(|e| format!("{e} (run the train_and_sample example first)"))?;
    let (h, w) = ckpt.params.config().resolution;

    let character = ckpt.vocab.character[0].clone();
    let glyph = render_glyph(
        character.chars().next().unwrap(),
        &load_font("builtin:noto-serif-sc")?,
        (h, w),
    )?;
    let mask = Mask::from_fn(h, w, |_, x| x >= w / 2);
    let out = dir.join("inpaint");
    std::fs::create_dir_all(&out)?;
    glyph.save_png(out.join("input.png"))?;
    mask.save_png(out.join("mask.png"))?;

    for script in &ckpt.vocab.script {
        let style = &ckpt.vocab.style[0];
        let cond = ckpt.vocab.resolve(&character, script, style)?;
        for n_resample in [1, 5] {
            let config = InpaintConfig {
                n_resample,
                schedule: ckpt.schedule,
                trace: TraceOptions::every(100),
                ..InpaintConfig::new(7)
            };
            let (image, trace) = inpaint(&ckpt.params, &glyph.to_model(), &mask, &cond, &config)?;
            let kept = (0..h * w)
                .filter(|&i| mask.bits()[i] == 0)
                .all(|i| image.pixels()[i] == glyph.to_model().pixels()[i]);
            println!(
                "{script:<14} r={n_resample}  {:>4} steps  {:>5} ms  unmasked identical: {kept}  boundary discrepancy {:.4}",
                trace.denoise_steps(),
                trace.elapsed_ms,
                boundary_discrepancy(&image, &mask).unwrap_or(0.0)
            );
            image.save_png(out.join(format!("{script}_r{n_resample}.png")))?;
            export_trace(&trace, &config.plan()?, out.join(format!("trace_{script}_r{n_resample}")))?;
        }
    }
    println!("results in {}", out.display());
    Ok(())
}
