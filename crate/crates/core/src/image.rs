//! Grayscale glyph images, binary masks, and their PNG encodings.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value range a [`GlyphImage`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelRange {
    /// `[0, 255]`, ink dark on a light background.
    Unit8,
    /// `[-1, +1]`, the range the diffusion model works in.
    Model,
}

impl PixelRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            PixelRange::Unit8 => (0.0, 255.0),
            PixelRange::Model => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphImage {
    height: usize,
    width: usize,
    range: PixelRange,
    pixels: Vec<f32>,
}

impl GlyphImage {
    pub fn new(height: usize, width: usize, range: PixelRange, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(p) = pixels.iter().find(|p| !(lo..=hi).contains(*p)) {
            return Err(Error::InvalidConfig(format!("pixel value {p} outside {range:?} range")));
        }
        Ok(Self {
            height,
            width,
            range,
            pixels,
        })
    }

    /// Builds a model-range image without range validation. Used for
    /// intermediate diffusion states, which may leave `[-1, 1]`.
    pub(crate) fn unchecked_model(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        Self {
            height,
            width,
            range: PixelRange::Model,
            pixels,
        }
    }

    pub fn filled(height: usize, width: usize, range: PixelRange, value: f32) -> Result<Self> {
        Self::new(height, width, range, vec![value; height * width])
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            PixelRange::Unit8,
            bytes.iter().map(|&b| f32::from(b)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> PixelRange {
        self.range
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// `x / 127.5 - 1`. Identity on model-range images.
    pub fn to_model(&self) -> GlyphImage {
        match self.range {
            PixelRange::Model => self.clone(),
            PixelRange::Unit8 => GlyphImage {
                height: self.height,
                width: self.width,
                range: PixelRange::Model,
                pixels: self.pixels.iter().map(|&p| p / 127.5 - 1.0).collect(),
            },
        }
    }

    /// `round((x + 1) * 127.5)`, clamped to `[0, 255]`.
    pub fn to_unit8(&self) -> GlyphImage {
        match self.range {
            PixelRange::Unit8 => self.clone(),
            PixelRange::Model => GlyphImage {
                height: self.height,
                width: self.width,
                range: PixelRange::Unit8,
                pixels: self
                    .pixels
                    .iter()
                    .map(|&p| ((p + 1.0) * 127.5).round().clamp(0.0, 255.0))
                    .collect(),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_unit8().pixels.iter().map(|&p| p as u8).collect()
    }

    /// Fraction of pixels darker than mid-gray.
    pub fn ink_coverage(&self) -> f64 {
        let bytes = self.to_bytes();
        bytes.iter().filter(|&&b| b < 128).count() as f64 / bytes.len() as f64
    }

    pub fn ensure_resolution(&self, expected: (usize, usize)) -> Result<()> {
        if self.resolution() != expected {
            return Err(Error::ResolutionMismatch {
                expected,
                actual: self.resolution(),
            });
        }
        Ok(())
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_gray_png(self.width, self.height, &self.to_bytes())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, gray) = decode_gray_png(bytes, "<memory>")?;
        Self::from_bytes(h, w, &gray)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_gray_png(path.as_ref(), self.width, self.height, &self.to_bytes())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, gray) = decode_gray_png(&bytes, &path.display().to_string())?;
        Self::from_bytes(h, w, &gray)
    }
}

/// Binary inpainting mask. `1` marks pixels to regenerate, `0` pixels to keep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidConfig("mask bits must be 0 or 1".into()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub(crate) fn set(&mut self, y: usize, x: usize) {
        self.bits[y * self.width + x] = 1;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.resolution() != other.resolution() {
            return Err(Error::ResolutionMismatch {
                expected: self.resolution(),
                actual: other.resolution(),
            });
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect(),
        })
    }

    /// Pixels on either side of the mask edge: a masked pixel with a
    /// 4-neighbour outside the mask, or an unmasked pixel with a 4-neighbour
    /// inside it.
    pub fn boundary_band(&self) -> Mask {
        let (h, w) = (self.height, self.width);
        Mask::from_fn(h, w, |y, x| {
            let here = self.is_set(y, x);
            let mut neighbours = Vec::with_capacity(4);
            if y > 0 {
                neighbours.push((y - 1, x));
            }
            if y + 1 < h {
                neighbours.push((y + 1, x));
            }
            if x > 0 {
                neighbours.push((y, x - 1));
            }
            if x + 1 < w {
                neighbours.push((y, x + 1));
            }
            neighbours.iter().any(|&(ny, nx)| self.is_set(ny, nx) != here)
        })
    }

    pub fn ensure_resolution(&self, expected: (usize, usize)) -> Result<()> {
        if self.resolution() != expected {
            return Err(Error::ResolutionMismatch {
                expected,
                actual: self.resolution(),
            });
        }
        Ok(())
    }

    /// 255 = inpaint, 0 = keep.
    pub fn encode_png(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| b * 255).collect();
        encode_gray_png(self.width, self.height, &bytes)
    }

    /// Values `>= 128` are read as "inpaint".
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, gray) = decode_gray_png(bytes, "<memory>")?;
        Ok(Self::from_gray(h, w, &gray))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| b * 255).collect();
        write_gray_png(path.as_ref(), self.width, self.height, &bytes)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, gray) = decode_gray_png(&bytes, &path.display().to_string())?;
        Ok(Self::from_gray(h, w, &gray))
    }

    fn from_gray(height: usize, width: usize, gray: &[u8]) -> Self {
        Self {
            height,
            width,
            bits: gray.iter().map(|&g| u8::from(g >= 128)).collect(),
        }
    }
}

fn encode_gray_png(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(Cursor::new(&mut out), width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(gray).expect("in-memory PNG data");
    }
    out
}

fn write_gray_png(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(gray).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Decodes any 8/16-bit PNG to 8-bit luma. Alpha is composited over white.
fn decode_gray_png(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<u8>)> {
    let err = |reason: String| Error::ImageDecode {
        path: origin.to_string(),
        reason,
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let composite = |v: f32, a: f32| v * a / 255.0 + 255.0 * (1.0 - a / 255.0);
    let luma = |r: u8, g: u8, b: u8| 0.299 * f32::from(r) + 0.587 * f32::from(g) + 0.114 * f32::from(b);
    let gray: Vec<u8> = match info.color_type {
        png::ColorType::Grayscale => data.to_vec(),
        png::ColorType::GrayscaleAlpha => data
            .chunks_exact(2)
            .map(|p| composite(f32::from(p[0]), f32::from(p[1])).round() as u8)
            .collect(),
        png::ColorType::Rgb => data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2]).round() as u8).collect(),
        png::ColorType::Rgba => data
            .chunks_exact(4)
            .map(|p| composite(luma(p[0], p[1], p[2]), f32::from(p[3])).round() as u8)
            .collect(),
        png::ColorType::Indexed => return Err(err("indexed PNG was not expanded".into())),
    };
    if gray.len() != w * h {
        return Err(err(format!("decoded {} pixels for {w}x{h}", gray.len())));
    }
    Ok((w, h, gray))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn range_endpoints() {
        let img = GlyphImage::from_bytes(1, 3, &[0, 128, 255]).unwrap().to_model();
        assert_eq!(img.pixels()[0], -1.0);
        assert_eq!(img.pixels()[2], 1.0);
        assert!((img.pixels()[1] - (128.0 / 127.5 - 1.0)).abs() < 1e-7);
        assert!((img.pixels()[1] - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(GlyphImage::new(1, 1, PixelRange::Model, vec![1.5]).is_err());
        assert!(GlyphImage::new(1, 2, PixelRange::Model, vec![0.0]).is_err());
    }

    #[test]
    fn mask_png_round_trip_and_polarity() {
        let m = Mask::from_fn(4, 5, |y, x| (y + x) % 3 == 0);
        let png = m.encode_png();
        assert_eq!(Mask::decode_png(&png).unwrap(), m);
        let gray = GlyphImage::decode_png(&png).unwrap().to_bytes();
        for (g, b) in gray.iter().zip(m.bits()) {
            assert_eq!(*g, b * 255);
        }
    }

    #[test]
    fn boundary_band_of_half_mask() {
        let m = Mask::from_fn(4, 4, |_, x| x < 2);
        let band = m.boundary_band();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(band.is_set(y, x), x == 1 || x == 2);
            }
        }
        assert_eq!(Mask::full(3, 3).boundary_band().count(), 0);
    }

    proptest! {
        #[test]
        fn unit8_model_round_trip_is_exact(bytes in proptest::collection::vec(any::<u8>(), 16)) {
            let img = GlyphImage::from_bytes(4, 4, &bytes).unwrap();
            let back = img.to_model().to_unit8();
            prop_assert_eq!(back.to_bytes(), bytes.clone());
            prop_assert_eq!(back, img.clone());
            let png = img.encode_png();
            prop_assert_eq!(GlyphImage::decode_png(&png).unwrap(), img);
        }
    }
}
