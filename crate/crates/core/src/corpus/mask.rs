use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GlyphImage, Mask};
use crate::rng::{SeedStream, StreamRng};

/// Union of between `min_rects` and `max_rects` axis-aligned rectangles whose
/// side lengths are drawn uniformly from `[min_frac, max_frac]` of the image
/// side. Draws whose total coverage falls outside
/// `[min_coverage, max_coverage]` are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub min_rects: usize,
    pub max_rects: usize,
    pub min_frac: f64,
    pub max_frac: f64,
    pub min_coverage: f64,
    pub max_coverage: f64,
}

/// Redraws allowed before a coverage window is declared unreachable.
const MAX_ATTEMPTS: u64 = 10_000;

impl MaskSpec {
    pub const EMPTY: MaskSpec = MaskSpec {
        min_rects: 0,
        max_rects: 0,
        min_frac: 0.0,
        max_frac: 0.0,
        min_coverage: 0.0,
        max_coverage: 1.0,
    };

    /// One to three rectangles with sides a quarter to a half of the image.
    pub const EVAL: MaskSpec = MaskSpec {
        min_rects: 1,
        max_rects: 3,
        min_frac: 0.25,
        max_frac: 0.5,
        min_coverage: 0.0,
        max_coverage: 1.0,
    };

    /// `n` rectangles with sides in `[min_frac, max_frac]`, any coverage.
    pub fn rects(n: usize, min_frac: f64, max_frac: f64) -> Self {
        Self {
            min_rects: n,
            max_rects: n,
            min_frac,
            max_frac,
            min_coverage: 0.0,
            max_coverage: 1.0,
        }
    }

    pub fn with_coverage(self, min_coverage: f64, max_coverage: f64) -> Self {
        Self {
            min_coverage,
            max_coverage,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_frac && self.min_frac <= self.max_frac && self.max_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask fractions must satisfy 0 <= {} <= {} <= 1",
                self.min_frac, self.max_frac
            )));
        }
        if self.min_rects > self.max_rects {
            return Err(Error::InvalidConfig(format!(
                "rectangle count range {}..={} is empty",
                self.min_rects, self.max_rects
            )));
        }
        if !(0.0 <= self.min_coverage && self.min_coverage <= self.max_coverage && self.max_coverage <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "coverage window must satisfy 0 <= {} <= {} <= 1",
                self.min_coverage, self.max_coverage
            )));
        }
        Ok(())
    }
}

fn draw_rects(rng: &mut StreamRng, spec: &MaskSpec, (h, w): (usize, usize)) -> Mask {
    let mut mask = Mask::empty(h, w);
    let side = |rng: &mut StreamRng, n: usize| -> usize {
        let f = if spec.max_frac > spec.min_frac {
            rng.gen_range(spec.min_frac..=spec.max_frac)
        } else {
            spec.min_frac
        };
        ((f * n as f64).floor() as usize).min(n)
    };
    let count = rng.gen_range(spec.min_rects..=spec.max_rects);
    for _ in 0..count {
        let rh = side(rng, h);
        let rw = side(rng, w);
        let y0 = rng.gen_range(0..=h - rh);
        let x0 = rng.gen_range(0..=w - rw);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                mask.set(y, x);
            }
        }
    }
    mask
}

pub fn random_mask(seed: u64, spec: &MaskSpec, resolution: (usize, usize)) -> Result<Mask> {
    spec.validate()?;
    let stream = SeedStream::new(seed);
    for attempt in 0..MAX_ATTEMPTS {
        let mask = draw_rects(&mut stream.rng("mask", attempt), spec, resolution);
        let c = mask.coverage();
        if spec.min_coverage <= c && c <= spec.max_coverage {
            return Ok(mask);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no mask within coverage [{}, {}] after {MAX_ATTEMPTS} draws",
        spec.min_coverage, spec.max_coverage
    )))
}

/// `patch` where `patch_mask` is set, `base` elsewhere. The result is in
/// `base`'s value range.
pub fn compose_condition_image(base: &GlyphImage, patch: &GlyphImage, patch_mask: &Mask) -> Result<GlyphImage> {
    patch.ensure_resolution(base.resolution())?;
    patch_mask.ensure_resolution(base.resolution())?;
    let patch = match base.range() {
        crate::image::PixelRange::Unit8 => patch.to_unit8(),
        crate::image::PixelRange::Model => patch.to_model(),
    };
    let pixels = base
        .pixels()
        .iter()
        .zip(patch.pixels())
        .zip(patch_mask.bits())
        .map(|((&b, &p), &m)| if m == 1 { p } else { b })
        .collect();
    GlyphImage::new(base.height(), base.width(), base.range(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PixelRange;
    use proptest::prelude::*;
    use rand::Rng;

    fn img(seed: u8) -> GlyphImage {
        let bytes: Vec<u8> = (0..1024u32)
            .map(|i| (i as u8).wrapping_mul(seed).wrapping_add(seed))
            .collect();
        GlyphImage::from_bytes(32, 32, &bytes).unwrap()
    }

    #[test]
    fn empty_spec_gives_empty_mask() {
        let m = random_mask(5, &MaskSpec::EMPTY, (32, 32)).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(m.coverage(), 0.0);
    }

    #[test]
    fn half_side_rectangle_covers_a_quarter() {
        let spec = MaskSpec::rects(1, 0.5, 0.5);
        for seed in 0..20 {
            assert_eq!(random_mask(seed, &spec, (32, 32)).unwrap().coverage(), 0.25);
        }
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(random_mask(0, &MaskSpec::rects(1, 0.6, 0.5), (32, 32)).is_err());
        let mut spec = MaskSpec::EVAL;
        spec.min_rects = 4;
        assert!(random_mask(0, &spec, (32, 32)).is_err());
        assert!(random_mask(0, &MaskSpec::rects(1, 0.1, 0.1).with_coverage(0.5, 1.0), (32, 32)).is_err());
    }

    #[test]
    fn coverage_window_is_respected() {
        let spec = MaskSpec::EVAL.with_coverage(0.25, 0.5);
        for seed in 0..200 {
            let c = random_mask(seed, &spec, (32, 32)).unwrap().coverage();
            assert!((0.25..=0.5).contains(&c), "{c}");
        }
    }

    #[test]
    fn compose_identity_full_and_half() {
        let (b, p) = (img(3), img(7));
        assert_eq!(compose_condition_image(&b, &p, &Mask::empty(32, 32)).unwrap(), b);
        assert_eq!(compose_condition_image(&b, &p, &Mask::full(32, 32)).unwrap(), p);
        let half = Mask::from_fn(32, 32, |_, x| x < 16);
        let c = compose_condition_image(&b, &p, &half).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expect = if x < 16 { p.get(y, x) } else { b.get(y, x) };
                assert_eq!(c.get(y, x), expect);
            }
        }
        assert!(compose_condition_image(&b, &p, &Mask::empty(16, 32)).is_err());
    }

    proptest! {
        #[test]
        fn random_mask_is_deterministic_and_within_union_bound(
            seed in any::<u64>(), n in 0usize..5, lo in 0.0f64..1.0, span in 0.0f64..1.0,
        ) {
            let spec = MaskSpec::rects(n, lo, (lo + span).min(1.0));
            let a = random_mask(seed, &spec, (32, 32)).unwrap();
            prop_assert_eq!(&a, &random_mask(seed, &spec, (32, 32)).unwrap());
            let bound = (n as f64 * spec.max_frac * spec.max_frac).min(1.0);
            prop_assert!(a.coverage() <= bound + 1e-12);
        }

        #[test]
        fn compose_matches_mask_algebra(seed in any::<u64>(), bits in proptest::collection::vec(0u8..2, 64)) {
            let mut rng: rand::rngs::StdRng = rand::SeedableRng::seed_from_u64(seed);
            let mut pix = |_: ()| -> Vec<f32> { (0..64).map(|_| rng.gen_range(-1.0f32..=1.0)).collect() };
            let b = GlyphImage::new(8, 8, PixelRange::Model, pix(())).unwrap();
            let p = GlyphImage::new(8, 8, PixelRange::Model, pix(())).unwrap();
            let m = Mask::from_bits(8, 8, bits).unwrap();
            let c = compose_condition_image(&b, &p, &m).unwrap();
            for i in 0..64 {
                let mf = f32::from(m.bits()[i]);
                prop_assert_eq!(c.pixels()[i], mf * p.pixels()[i] + (1.0 - mf) * b.pixels()[i]);
            }
        }
    }
}
