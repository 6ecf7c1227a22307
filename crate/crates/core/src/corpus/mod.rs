//! Glyph corpus: font rendering, manifests, dataset loading, and mask tools.

mod label;
mod manifest;
mod mask;
mod render;

pub use label::{ConditionLabel, Vocabularies};
pub use manifest::{
    build_manifest, load_dataset, CorpusGroup, CorpusSpec, FontSource, LabeledGlyph, Manifest, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use mask::{compose_condition_image, random_mask, MaskSpec};
pub use render::{
    builtin_font, load_font, render_glyph, BuiltinFont, GlyphFont, BUILTIN_CHARACTERS, BUILTIN_FONTS, GLYPH_MARGIN,
};
