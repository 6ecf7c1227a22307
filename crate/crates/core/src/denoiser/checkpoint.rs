//! Binary checkpoint container.
//!
//! Layout (integers little-endian): `b"CPKT"`, `u32` version, `u32` length
//! plus UTF-8 JSON metadata, `u32` tensor count, then for each tensor a
//! `u32`-length-prefixed name, `u8` rank, `u64` dims, `u8` dtype tag
//! (0 = f32) and the raw element bytes.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserParams};
use crate::corpus::Vocabularies;
use crate::diffusion::ScheduleId;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CPKT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Metadata stored alongside denoiser weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: DenoiserConfig,
    pub vocab: Vocabularies,
    pub schedule: ScheduleId,
    pub step: u64,
    /// The most recent logged losses, oldest first.
    pub loss_tail: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub vocab: Vocabularies,
    pub schedule: ScheduleId,
    pub step: u64,
    pub loss_tail: Vec<f32>,
}

impl Checkpoint {
    /// A step-0 checkpoint for freshly initialized parameters.
    pub fn fresh(params: DenoiserParams, vocab: Vocabularies, schedule: ScheduleId) -> Result<Self> {
        params.config().check_vocab(&vocab)?;
        if params.config().timesteps != schedule.steps {
            return Err(Error::InvalidConfig(format!(
                "model conditioned on {} steps but schedule has {}",
                params.config().timesteps,
                schedule.steps
            )));
        }
        Ok(Self {
            params,
            vocab,
            schedule,
            step: 0,
            loss_tail: Vec::new(),
        })
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: "denoiser".into(),
            config: self.params.config().clone(),
            vocab: self.vocab.clone(),
            schedule: self.schedule,
            step: self.step,
            loss_tail: self.loss_tail.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_container(&self.meta(), self.params.store())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, store): (CheckpointMeta, _) = read_container(bytes)?;
        if meta.kind != "denoiser" {
            return Err(Error::Checkpoint(format!(
                "expected a denoiser checkpoint, found {:?}",
                meta.kind
            )));
        }
        meta.vocab.validate()?;
        meta.config.check_vocab(&meta.vocab)?;
        let params = DenoiserParams::from_store(meta.config, store)?;
        Ok(Self {
            params,
            vocab: meta.vocab,
            schedule: meta.schedule,
            step: meta.step,
            loss_tail: meta.loss_tail,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} too large")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes any JSON metadata plus a tensor store.
pub fn write_container<M: Serialize>(meta: &M, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(64 + json.len() + store.param_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len(), "metadata")?;
    out.extend_from_slice(&json);
    put_u32(&mut out, store.len(), "tensor count")?;
    for entry in store.entries() {
        put_u32(&mut out, entry.name.len(), "tensor name")?;
        out.extend_from_slice(entry.name.as_bytes());
        let rank = u8::try_from(entry.shape.len()).map_err(|_| Error::Checkpoint("tensor rank above 255".into()))?;
        out.push(rank);
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in &entry.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::TruncatedCheckpoint(what.to_string()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a container written by [`write_container`].
pub fn read_container<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, ParamStore<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let len = r.u32("metadata length")? as usize;
    let meta: M = serde_json::from_slice(r.take(len, "metadata")?)?;
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = r.u32("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8(&name)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64(&name)?).map_err(|_| Error::Checkpoint(format!("{name}: dimension overflow")))?);
        }
        let dtype = r.u8(&name)?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype tag {dtype}")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let raw = r.take(numel, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if store.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
        }
        store.push(name, shape, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ConditionLabel;
    use crate::denoiser::{forward, init_params};
    use crate::image::{GlyphImage, PixelRange};

    fn small() -> Checkpoint {
        let mut config = DenoiserConfig::new(3, 2, 2);
        config.resolution = (8, 8);
        config.base_channels = 8;
        config.channel_mults = vec![1, 2];
        config.time_embed_dim = 16;
        config.groups = 4;
        let vocab = Vocabularies::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let mut params = init_params(&config, 3).unwrap();
        // Make the output layer nonzero so the round trip is meaningful.
        let id = params.store().id("out.conv.weight").unwrap();
        for (i, v) in params.store_mut().get_mut(id).iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin() * 0.1;
        }
        let mut ck = Checkpoint::fresh(params, vocab, ScheduleId::DEFAULT).unwrap();
        ck.step = 42;
        ck.loss_tail = vec![0.5, 0.25, 0.123_456_79];
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let x = GlyphImage::filled(8, 8, PixelRange::Model, 0.3).unwrap();
        let cond = ConditionLabel::new(1, 0, 1);
        let a = forward(&ck.params, &x, 17, &cond).unwrap();
        let b = forward(&back.params, &x, 17, &cond).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncation_and_version_are_rejected() {
        let bytes = small().to_bytes().unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::TruncatedCheckpoint(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CheckpointVersion(9))));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn inconsistent_vocab_is_rejected() {
        let mut ck = small();
        ck.vocab.character.push("d".into());
        let bytes = write_container(&ck.meta(), ck.params.store()).unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::VocabularyMismatch(_))));
    }

    #[test]
    fn shape_inconsistency_is_rejected() {
        let ck = small();
        let mut meta = ck.meta();
        meta.config.base_channels = 16;
        let bytes = write_container(&meta, ck.params.store()).unwrap();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
