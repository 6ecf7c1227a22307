//! Pastes the left half of one character onto another and lets the model
//! blend the seam, producing a glyph that need not exist.
//!
//! Run `train_and_sample` first, or pass a checkpoint path.

use std::path::PathBuf;

use callipaint::corpus::{compose_condition_image, load_font, render_glyph};
use callipaint::denoiser::load_checkpoint;
use callipaint::image::Mask;
use callipaint::repaint::{inpaint, InpaintConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("callipaint-example");
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("denoiser.ckpt"));
    let ckpt = load_checkpoint(&path).map_err(|e| format!("{e} (run the train_and_sample example first)"))?;
    let (h, w) = ckpt.params.config().resolution;
    let vocab = &ckpt.vocab;
    let [base_char, patch_char] = [&vocab.character[0], &vocab.character[1 % vocab.character.len()]];

    let font = load_font("builtin:ma-shan-zheng")?;
    let base = render_glyph(base_char.chars().next().unwrap(), &font, (h, w))?;
    let patch = render_glyph(patch_char.chars().next().unwrap(), &font, (h, w))?;
    let left = Mask::from_fn(h, w, |_, x| x < w / 2);
    let composed = compose_condition_image(&base, &patch, &left)?;

    // Regenerate a band around the seam only.
    let seam = Mask::from_fn(h, w, |_, x| (w / 2 - 3..w / 2 + 3).contains(&x));
    let cond = vocab.resolve(base_char, &vocab.script[0], &vocab.style[0])?;
    let config = InpaintConfig {
        schedule: ckpt.schedule,
        ..InpaintConfig::new(3)
    };
    let (blended, _) = inpaint(&ckpt.params, &composed.to_model(), &seam, &cond, &config)?;

    let out = dir.join("swap");
    std::fs::create_dir_all(&out)?;
    composed.save_png(out.join("composed.png"))?;
    seam.save_png(out.join("seam.png"))?;
    blended.save_png(out.join("blended.png"))?;
    println!("{patch_char} left half on {base_char}: {}", out.display());
    Ok(())
}
