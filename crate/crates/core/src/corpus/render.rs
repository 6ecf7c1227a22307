use std::path::{Path, PathBuf};

use fontdue::{Font, FontSettings};

use crate::error::{Error, Result};
use crate::image::GlyphImage;

/// Minimum blank border around rendered ink, in pixels.
pub const GLYPH_MARGIN: usize = 2;

/// A loaded font file.
pub struct GlyphFont {
    name: String,
    font: Font,
}

impl std::fmt::Debug for GlyphFont {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlyphFont").field("name", &self.name).finish()
    }
}

impl GlyphFont {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFont {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&path.display().to_string(), &bytes)
    }

    pub fn from_bytes(name: &str, bytes: &[u8]) -> Result<Self> {
        let font = Font::from_bytes(bytes, FontSettings::default()).map_err(|e| Error::UnreadableFont {
            path: PathBuf::from(name),
            reason: e.to_string(),
        })?;
        Ok(Self {
            name: name.to_string(),
            font,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_glyph(&self, ch: char) -> bool {
        self.font.lookup_glyph_index(ch) != 0
    }
}

/// A font shipped with the crate, tagged with the script and style it stands
/// in for.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinFont {
    pub id: &'static str,
    pub script: &'static str,
    pub style: &'static str,
    pub bytes: &'static [u8],
}

impl BuiltinFont {
    pub fn load(&self) -> Result<GlyphFont> {
        GlyphFont::from_bytes(&format!("builtin:{}", self.id), self.bytes)
    }
}

pub const BUILTIN_FONTS: &[BuiltinFont] = &[
    BuiltinFont {
        id: "ma-shan-zheng",
        script: "regular",
        style: "ma-shan-zheng",
        bytes: include_bytes!("../../assets/fonts/MaShanZheng-Regular.ttf"),
    },
    BuiltinFont {
        id: "noto-serif-sc",
        script: "regular",
        style: "noto-serif-sc",
        bytes: include_bytes!("../../assets/fonts/NotoSerifSC-Regular.ttf"),
    },
    BuiltinFont {
        id: "noto-serif-sc-bold",
        script: "regular",
        style: "noto-serif-sc-bold",
        bytes: include_bytes!("../../assets/fonts/NotoSerifSC-Bold.ttf"),
    },
    BuiltinFont {
        id: "noto-sans-sc",
        script: "regular",
        style: "noto-sans-sc",
        bytes: include_bytes!("../../assets/fonts/NotoSansSC-Regular.ttf"),
    },
    BuiltinFont {
        id: "zcool-xiaowei",
        script: "regular",
        style: "zcool-xiaowei",
        bytes: include_bytes!("../../assets/fonts/ZCOOLXiaoWei-Regular.ttf"),
    },
    BuiltinFont {
        id: "zcool-kuaile",
        script: "regular",
        style: "zcool-kuaile",
        bytes: include_bytes!("../../assets/fonts/ZCOOLKuaiLe-Regular.ttf"),
    },
    BuiltinFont {
        id: "zhi-mang-xing",
        script: "semi-cursive",
        style: "zhi-mang-xing",
        bytes: include_bytes!("../../assets/fonts/ZhiMangXing-Regular.ttf"),
    },
    BuiltinFont {
        id: "long-cang",
        script: "semi-cursive",
        style: "long-cang",
        bytes: include_bytes!("../../assets/fonts/LongCang-Regular.ttf"),
    },
    BuiltinFont {
        id: "liu-jian-mao-cao",
        script: "cursive",
        style: "liu-jian-mao-cao",
        bytes: include_bytes!("../../assets/fonts/LiuJianMaoCao-Regular.ttf"),
    },
];

/// Every character present in all builtin fonts.
pub const BUILTIN_CHARACTERS: &str =
    "永天地人山水火木日月心礼礻衤初补被社神福祝金土石田中大小上下王玉白百千万年文字书风云花草鸟马鱼龙寿春秋东西南北";

pub fn builtin_font(id: &str) -> Option<&'static BuiltinFont> {
    BUILTIN_FONTS.iter().find(|f| f.id == id)
}

/// Resolves `builtin:<id>` or a filesystem path.
pub fn load_font(reference: &str) -> Result<GlyphFont> {
    match reference.strip_prefix("builtin:") {
        Some(id) => builtin_font(id)
            .ok_or_else(|| Error::UnreadableFont {
                path: PathBuf::from(reference),
                reason: "no such builtin font".into(),
            })?
            .load(),
        None => GlyphFont::load(reference),
    }
}

/// Rasterizes one character, dark ink on a white background, with its ink
/// bounding box centred and at least [`GLYPH_MARGIN`] pixels of border.
pub fn render_glyph(ch: char, font: &GlyphFont, resolution: (usize, usize)) -> Result<GlyphImage> {
    let (h, w) = resolution;
    if h < 8 || w < 8 {
        return Err(Error::InvalidConfig(format!("resolution {h}x{w} below the 8x8 minimum")));
    }
    if !font.has_glyph(ch) {
        return Err(Error::MissingGlyph(ch as u32));
    }
    let box_h = h - 2 * GLYPH_MARGIN;
    let box_w = w - 2 * GLYPH_MARGIN;
    let mut px = box_h.min(box_w) as f32;
    let (metrics, coverage) = loop {
        let (metrics, coverage) = font.font.rasterize(ch, px);
        if metrics.width <= box_w && metrics.height <= box_h {
            break (metrics, coverage);
        }
        let scale = (box_w as f32 / metrics.width as f32).min(box_h as f32 / metrics.height as f32);
        // Rasterized extents do not scale exactly linearly; shrink a little more each round.
        px = (px * scale * 0.98).min(px - 0.25);
    };
    let mut bytes = vec![255u8; h * w];
    let off_y = (h - metrics.height) / 2;
    let off_x = (w - metrics.width) / 2;
    for gy in 0..metrics.height {
        for gx in 0..metrics.width {
            let c = coverage[gy * metrics.width + gx];
            bytes[(off_y + gy) * w + off_x + gx] = 255 - c;
        }
    }
    GlyphImage::from_bytes(h, w, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn font() -> GlyphFont {
        BUILTIN_FONTS[0].load().unwrap()
    }

    #[test]
    fn space_renders_blank() {
        let img = render_glyph(' ', &font(), (32, 32)).unwrap();
        assert_eq!(img.ink_coverage(), 0.0);
        assert!(img.pixels().iter().all(|&p| p == 255.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let f = font();
        let a = render_glyph('永', &f, (32, 32)).unwrap();
        let b = render_glyph('永', &f, (32, 32)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn missing_glyph_and_bad_font() {
        assert!(matches!(
            render_glyph('Ω', &font(), (32, 32)),
            Err(Error::MissingGlyph(0x3A9))
        ));
        assert!(matches!(
            GlyphFont::from_bytes("junk", b"not a font"),
            Err(Error::UnreadableFont { .. })
        ));
        assert!(render_glyph('永', &font(), (4, 32)).is_err());
    }

    #[test]
    fn every_builtin_font_covers_the_builtin_characters_within_margins() {
        for bf in BUILTIN_FONTS {
            let f = bf.load().unwrap();
            for ch in BUILTIN_CHARACTERS.chars() {
                let img = render_glyph(ch, &f, (32, 32)).unwrap();
                let bytes = img.to_bytes();
                for y in 0..32 {
                    for x in 0..32 {
                        let border = y < GLYPH_MARGIN || x < GLYPH_MARGIN || y >= 32 - GLYPH_MARGIN || x >= 32 - GLYPH_MARGIN;
                        if border {
                            assert_eq!(bytes[y * 32 + x], 255, "{} {ch} at {y},{x}", bf.id);
                        }
                    }
                }
                assert!(img.ink_coverage() > 0.0, "{} {ch} blank", bf.id);
            }
        }
    }
}
