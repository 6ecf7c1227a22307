use serde::{Deserialize, Serialize};

use crate::corpus::Vocabularies;
use crate::error::{Error, Result};

/// Shape of the ε-prediction U-Net.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub resolution: (usize, usize),
    pub base_channels: usize,
    /// One entry per resolution level; level `l` has
    /// `base_channels * channel_mults[l]` channels at `1 / 2^l` scale.
    pub channel_mults: Vec<usize>,
    pub time_embed_dim: usize,
    pub n_characters: usize,
    pub n_scripts: usize,
    pub n_styles: usize,
    pub groups: usize,
    /// Largest timestep the network is conditioned on (the schedule's T).
    pub timesteps: usize,
}

impl DenoiserConfig {
    /// 32×32, 32 base channels, levels 32/16/8, 128-wide embeddings, 8 groups.
    pub fn new(n_characters: usize, n_scripts: usize, n_styles: usize) -> Self {
        Self {
            resolution: (32, 32),
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            time_embed_dim: 128,
            n_characters,
            n_scripts,
            n_styles,
            groups: 8,
            timesteps: 200,
        }
    }

    pub fn for_vocab(vocab: &Vocabularies) -> Self {
        let (c, s, y) = vocab.sizes();
        Self::new(c, s, y)
    }

    /// A smaller network that trains tens of thousands of steps in about an
    /// hour on one CPU core: 16 base channels, levels 16/32/32, 64-wide
    /// embeddings.
    pub fn desk(vocab: &Vocabularies) -> Self {
        Self {
            base_channels: 16,
            channel_mults: vec![1, 2, 2],
            time_embed_dim: 64,
            ..Self::for_vocab(vocab)
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return bad("channel multipliers must be non-empty and positive".into());
        }
        let div = 1usize << (self.levels() - 1);
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return bad(format!(
                "resolution {h}x{w} not divisible by 2^{} for {} levels",
                self.levels() - 1,
                self.levels()
            ));
        }
        if self.base_channels == 0 || self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return bad("channel and embedding widths must be positive (embedding even)".into());
        }
        if self.n_characters == 0 || self.n_scripts == 0 || self.n_styles == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if self.timesteps == 0 {
            return bad("timesteps must be positive".into());
        }
        if self.groups == 0 {
            return bad("normalization groups must be positive".into());
        }
        for width in self.normalized_widths() {
            if width % self.groups != 0 {
                return bad(format!("{width} channels not divisible into {} groups", self.groups));
            }
        }
        Ok(())
    }

    /// Every channel count a group norm sees.
    fn normalized_widths(&self) -> Vec<usize> {
        let mut widths = Vec::new();
        let last = self.levels() - 1;
        let mut prev = self.base_channels;
        for l in 0..self.levels() {
            widths.push(prev);
            widths.push(self.level_channels(l));
            prev = self.level_channels(l);
        }
        for l in (0..self.levels()).rev() {
            let incoming = if l == last {
                self.level_channels(last)
            } else {
                self.level_channels(l + 1)
            };
            widths.push(incoming + self.level_channels(l));
        }
        widths
    }

    pub fn check_vocab(&self, vocab: &Vocabularies) -> Result<()> {
        if vocab.sizes() != (self.n_characters, self.n_scripts, self.n_styles) {
            return Err(Error::VocabularyMismatch(format!(
                "vocabulary sizes {:?} do not match model sizes {:?}",
                vocab.sizes(),
                (self.n_characters, self.n_scripts, self.n_styles)
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        DenoiserConfig::new(10, 2, 2).validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_shapes() {
        let mut c = DenoiserConfig::new(10, 2, 2);
        c.resolution = (30, 32);
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::new(10, 2, 2);
        c.base_channels = 12;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::new(0, 2, 2);
        assert!(c.validate().is_err());
        c.n_characters = 1;
        c.time_embed_dim = 7;
        assert!(c.validate().is_err());
    }
}
