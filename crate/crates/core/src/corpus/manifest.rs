//! Corpus manifests: a JSON-lines file whose first line carries the frozen
//! vocabularies and resolution, followed by one line per rendered image.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::label::{ConditionLabel, Vocabularies};
use super::render::{load_font, render_glyph};
use crate::error::{Error, Result};
use crate::image::GlyphImage;
use crate::rng::SeedStream;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One font standing in for a `(script, style)` pair. `font` is a path or
/// `builtin:<id>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FontSource {
    pub font: String,
    pub script: String,
    pub style: String,
}

/// A character set rendered with every font in `fonts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusGroup {
    pub characters: Vec<char>,
    pub fonts: Vec<FontSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub groups: Vec<CorpusGroup>,
    pub resolution: (usize, usize),
    pub val_fraction: f64,
    pub seed: u64,
}

impl CorpusSpec {
    /// Every builtin font over the first `n_chars` builtin characters.
    pub fn builtin(n_chars: usize, val_fraction: f64, seed: u64) -> Self {
        Self::builtin_with_fonts(n_chars, super::render::BUILTIN_FONTS.iter().map(|f| f.id), val_fraction, seed)
    }

    pub fn builtin_with_fonts<'a>(
        n_chars: usize,
        font_ids: impl IntoIterator<Item = &'a str>,
        val_fraction: f64,
        seed: u64,
    ) -> Self {
        let fonts = font_ids
            .into_iter()
            .filter_map(super::render::builtin_font)
            .map(|f| FontSource {
                font: format!("builtin:{}", f.id),
                script: f.script.to_string(),
                style: f.style.to_string(),
            })
            .collect();
        Self {
            groups: vec![CorpusGroup {
                characters: super::render::BUILTIN_CHARACTERS.chars().take(n_chars).collect(),
                fonts,
            }],
            resolution: (32, 32),
            val_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub character: String,
    pub script: String,
    pub style: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestHeader {
    vocab_character: Vec<String>,
    vocab_script: Vec<String>,
    vocab_style: Vec<String>,
    height: usize,
    width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory entry paths are relative to.
    pub root: PathBuf,
    pub vocab: Vocabularies,
    pub resolution: (usize, usize),
    pub entries: Vec<ManifestEntry>,
}

/// A dataset item: an image and its condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGlyph {
    pub image: GlyphImage,
    pub label: ConditionLabel,
}

impl Manifest {
    pub fn label_of(&self, entry: &ManifestEntry) -> Result<ConditionLabel> {
        self.vocab
            .resolve(&entry.character, &entry.script, &entry.style)
            .map_err(|e| Error::Manifest(format!("entry {}: {e}", entry.path)))
    }

    pub fn len_split(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            vocab_character: self.vocab.character.clone(),
            vocab_script: self.vocab.script.clone(),
            vocab_style: self.vocab.style.clone(),
            height: self.resolution.0,
            width: self.resolution.1,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Manifest("empty manifest".into()))?)?;
        let vocab = Vocabularies::new(header.vocab_character, header.vocab_script, header.vocab_style)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let entries = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let manifest = Self {
            root,
            vocab,
            resolution: (header.height, header.width),
            entries,
        };
        manifest.validate_labels()?;
        Ok(manifest)
    }

    fn validate_labels(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            let label = self.label_of(e)?;
            if !seen.insert(label) {
                return Err(Error::Manifest(format!(
                    "combination ({}, {}, {}) appears more than once",
                    e.character, e.script, e.style
                )));
            }
        }
        Ok(())
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Checks that every file exists and decodes at the declared resolution.
    pub fn validate_files(&self) -> Result<()> {
        for e in &self.entries {
            self.load_image(e)?;
        }
        Ok(())
    }

    fn load_image(&self, entry: &ManifestEntry) -> Result<GlyphImage> {
        let img = GlyphImage::load_png(self.image_path(entry))?;
        img.ensure_resolution(self.resolution)?;
        Ok(img)
    }
}

/// Renders every `(character, font)` pair of `spec` into `out_dir/images`
/// and writes `out_dir/manifest.jsonl`.
pub fn build_manifest(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if spec.groups.is_empty() || spec.groups.iter().all(|g| g.characters.is_empty() || g.fonts.is_empty()) {
        return Err(Error::InvalidConfig("corpus spec renders nothing".into()));
    }
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val fraction {} outside (0, 1)",
            spec.val_fraction
        )));
    }
    let (h, w) = spec.resolution;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut characters = BTreeSet::new();
    let mut scripts = BTreeSet::new();
    let mut styles = BTreeSet::new();
    let mut combos = HashSet::new();
    let mut entries = Vec::new();
    for group in &spec.groups {
        let mut seen_chars = HashSet::new();
        for source in &group.fonts {
            let font = load_font(&source.font)?;
            for &ch in &group.characters {
                if !seen_chars.insert((ch, &source.script, &source.style)) {
                    continue;
                }
                if !combos.insert((ch, source.script.clone(), source.style.clone())) {
                    return Err(Error::Manifest(format!(
                        "({ch}, {}, {}) is produced by more than one source",
                        source.script, source.style
                    )));
                }
                let img = render_glyph(ch, &font, (h, w)).map_err(|e| Error::Render {
                    character: ch,
                    font: source.font.clone(),
                    source: Box::new(e),
                })?;
                let file = format!(
                    "images/u{:04x}_{}_{}.png",
                    ch as u32,
                    sanitize(&source.script),
                    sanitize(&source.style)
                );
                img.save_png(out_dir.join(&file))?;
                characters.insert(ch.to_string());
                scripts.insert(source.script.clone());
                styles.insert(source.style.clone());
                entries.push(ManifestEntry {
                    path: file,
                    character: ch.to_string(),
                    script: source.script.clone(),
                    style: source.style.clone(),
                    split: Split::Train,
                });
            }
        }
    }

    let n_val = (entries.len() as f64 * spec.val_fraction).round() as usize;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut SeedStream::new(spec.seed).rng("split", 0));
    for &i in &order[..n_val] {
        entries[i].split = Split::Val;
    }

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        vocab: Vocabularies::new(
            characters.into_iter().collect(),
            scripts.into_iter().collect(),
            styles.into_iter().collect(),
        )?,
        resolution: (h, w),
        entries,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Loads one split in model range. `shuffle_seed` permutes the otherwise
/// manifest-ordered result.
pub fn load_dataset(manifest: &Manifest, split: Split, shuffle_seed: Option<u64>) -> Result<Vec<LabeledGlyph>> {
    let mut items = manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            Ok(LabeledGlyph {
                image: manifest.load_image(e)?.to_model(),
                label: manifest.label_of(e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = shuffle_seed {
        items.shuffle(&mut SeedStream::new(seed).rng("shuffle", 0));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_by_two_split_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::builtin_with_fonts(10, ["ma-shan-zheng", "liu-jian-mao-cao"], 0.2, 3);
        let m = build_manifest(&spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 20);
        assert_eq!(m.len_split(Split::Train), 16);
        assert_eq!(m.len_split(Split::Val), 4);
        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        build_manifest(&spec, dir2.path()).unwrap();
        assert_eq!(first, fs::read(dir2.path().join(MANIFEST_FILE)).unwrap());

        let loaded = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);
        loaded.validate_files().unwrap();
        let val = load_dataset(&loaded, Split::Val, None).unwrap();
        assert_eq!(val.len(), 4);
        assert!(val.iter().all(|g| g.image.range() == crate::image::PixelRange::Model));

        let mut sorted = m.vocab.character.clone();
        sorted.sort();
        assert_eq!(sorted, m.vocab.character);
        assert_eq!(m.vocab.script, vec!["cursive".to_string(), "regular".to_string()]);
    }

    #[test]
    fn single_entry_and_empty_specs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::builtin_with_fonts(1, ["noto-serif-sc"], 0.2, 0);
        let m = build_manifest(&spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.len_split(Split::Train), 1);

        let empty = CorpusSpec {
            groups: vec![],
            ..spec.clone()
        };
        assert!(build_manifest(&empty, dir.path()).is_err());
        let bad_frac = CorpusSpec {
            val_fraction: 1.0,
            ..spec
        };
        assert!(build_manifest(&bad_frac, dir.path()).is_err());
    }

    #[test]
    fn render_errors_name_the_pair() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = CorpusSpec::builtin_with_fonts(2, ["noto-serif-sc"], 0.5, 0);
        spec.groups[0].characters.push('Ω');
        match build_manifest(&spec, dir.path()) {
            Err(Error::Render { character, font, .. }) => {
                assert_eq!(character, 'Ω');
                assert_eq!(font, "builtin:noto-serif-sc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_resolution_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::builtin_with_fonts(2, ["noto-serif-sc"], 0.5, 0);
        let mut m = build_manifest(&spec, dir.path()).unwrap();
        m.resolution = (16, 16);
        assert!(matches!(
            load_dataset(&m, Split::Train, None),
            Err(Error::ResolutionMismatch { .. })
        ));
        m.resolution = (32, 32);
        fs::remove_file(m.image_path(&m.entries[0])).unwrap();
        assert!(m.validate_files().is_err());
    }
}
