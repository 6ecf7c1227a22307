//! Renders a small glyph corpus from the bundled fonts and prints what the
//! manifest holds.
//!
//! ```text
//! cargo run --release --example render_corpus -- /tmp/corpus
//! ```

use std::collections::BTreeMap;

use callipaint::corpus::{build_manifest, CorpusSpec, Split, BUILTIN_FONTS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("callipaint-corpus").display().to_string());
    for font in BUILTIN_FONTS {
        println!("{:<20} {:<14} {}", font.id, font.script, font.style);
    }

    let manifest = build_manifest(&CorpusSpec::builtin(12, 0.2, 0), &out)?;
    println!(
        "\n{} glyphs at {:?}: {} train, {} val",
        manifest.entries.len(),
        manifest.resolution,
        manifest.len_split(Split::Train),
        manifest.len_split(Split::Val)
    );

    let mut per_script: BTreeMap<&str, usize> = BTreeMap::new();
    for entry in &manifest.entries {
        *per_script.entry(entry.script.as_str()).or_default() += 1;
    }
    for (script, n) in per_script {
        println!("  {script:<14} {n}");
    }
    println!("manifest written to {out}/manifest.jsonl");
    Ok(())
}
