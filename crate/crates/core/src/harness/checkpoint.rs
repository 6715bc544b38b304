//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "AENC"                     magic
//! u32                        format version
//! u32 + UTF-8                config block: key=value lines (model settings, vocabulary)
//! u32                        tensor count
//! per tensor:
//!   u32 + UTF-8              name
//!   u32                      rank
//!   u32 * rank               extents
//!   f32 * prod(extents)      payload
//! ```
//!
//! The vocabulary, when stored, is a single `vocab=` line of space-separated
//! tokens in index order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::kv_lines;
use crate::data::Vocab;
use crate::error::{AenError, Result};
use crate::model::{init_params, AenConfig, AenParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AENC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: AenParams<f32>,
    pub config: AenConfig,
    pub vocab: Option<Vocab>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_len(buf: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| AenError::Format(format!("length {n} does not fit in u32")))?;
    put_u32(buf, v);
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_checkpoint(params: &AenParams<f32>, config: &AenConfig, vocab: Option<&Vocab>) -> Result<Vec<u8>> {
    params.validate(config)?;
    if let Some(v) = vocab {
        if v.len() != params.embedding.shape()[0] {
            return Err(AenError::Integrity(format!(
                "vocabulary of {} tokens for an embedding of {} rows",
                v.len(),
                params.embedding.shape()[0]
            )));
        }
    }
    let mut block = config.to_kv();
    if let Some(v) = vocab {
        block.push_str("vocab=");
        block.push_str(&v.tokens().join(" "));
        block.push('\n');
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &block)?;
    let tensors = params.all_tensors();
    put_len(&mut buf, tensors.len())?;
    for (name, t) in tensors {
        put_str(&mut buf, &name)?;
        put_len(&mut buf, t.rank())?;
        for &d in t.shape() {
            put_len(&mut buf, d)?;
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(
    params: &AenParams<f32>,
    config: &AenConfig,
    vocab: Option<&Vocab>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_checkpoint(params, config, vocab)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| AenError::Format(format!("truncated checkpoint while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let n = self.len(what)?;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| AenError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(AenError::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(AenError::Format(format!("unsupported checkpoint version {version}")));
    }

    let mut config = AenConfig::default();
    let mut vocab = None;
    let block = r.string("config block")?;
    for (_, key, value) in kv_lines(block).map_err(|e| AenError::Format(e.to_string()))? {
        if key == "vocab" {
            vocab = Some(Vocab::from_tokens(value.split_whitespace())?);
        } else if !config.set(&key, &value).map_err(|e| AenError::Format(e.to_string()))? {
            return Err(AenError::Format(format!("unknown config key {key:?} in checkpoint")));
        }
    }
    config.validate().map_err(|e| AenError::Integrity(e.to_string()))?;

    let count = r.len("tensor count")?;
    let mut tensors: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string("tensor name")?.to_string();
        let rank = r.len("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len("extent")?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| AenError::Format(format!("extents of {name} overflow")))?;
        let payload = r.take(
            n.checked_mul(4).ok_or_else(|| AenError::Format(format!("payload of {name} overflows")))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| AenError::Format(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(AenError::Format(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(AenError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let embedding = tensors
        .remove("embedding")
        .ok_or_else(|| AenError::Integrity("checkpoint has no embedding".into()))?;
    if embedding.rank() != 2 || embedding.shape()[1] != config.d_emb {
        return Err(AenError::Integrity(format!(
            "embedding {:?} does not match d_emb {}",
            embedding.shape(),
            config.d_emb
        )));
    }
    if let Some(v) = &vocab {
        if v.len() != embedding.shape()[0] {
            return Err(AenError::Integrity(format!(
                "vocabulary of {} tokens for an embedding of {} rows",
                v.len(),
                embedding.shape()[0]
            )));
        }
    }

    // a freshly shaped parameter set supplies the expected names and shapes
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params: AenParams<f32> = init_params(&config, embedding.shape()[0].max(2), &mut rng)?;
    params.embedding = embedding;
    for (name, slot) in params.trainable_mut() {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| AenError::Integrity(format!("checkpoint has no tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(AenError::Integrity(format!(
                "tensor {name} has shape {:?}, config implies {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.with_grad();
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(AenError::Integrity(format!("unexpected tensor {extra}")));
    }
    params.validate(&config)?;
    Ok(Checkpoint { params, config, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (AenParams<f32>, AenConfig, Vocab) {
        let config = AenConfig { d_emb: 4, d_hid: 4, n_head: 2, ..AenConfig::default() };
        let mut vocab = Vocab::new();
        for t in ["the", "food", "was", "great", "!"] {
            vocab.insert(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params: AenParams<f32> = init_params(&config, vocab.len(), &mut rng).unwrap();
        params.embedding = Tensor::from_fn(&[vocab.len(), 4], |i| i as f32 * 0.25 - 1.0);
        (params, config, vocab)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (params, config, vocab) = tiny();
        let bytes = encode_checkpoint(&params, &config, Some(&vocab)).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.config, config);
        assert_eq!(back.vocab.as_ref(), Some(&vocab));
        for ((_, a), (_, b)) in params.all_tensors().iter().zip(back.params.all_tensors()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(encode_checkpoint(&back.params, &back.config, back.vocab.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let (params, config, _) = tiny();
        let bytes = encode_checkpoint(&params, &config, None).unwrap();
        assert_eq!(&bytes[..4], b"AENC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let block_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let block = std::str::from_utf8(&bytes[12..12 + block_len]).unwrap();
        assert!(block.contains("d_hid=4\n"));
        let count = u32::from_le_bytes(bytes[12 + block_len..16 + block_len].try_into().unwrap());
        assert_eq!(count as usize, params.all_tensors().len());
        assert!(decode_checkpoint(&bytes).unwrap().vocab.is_none());
    }

    #[test]
    fn corruption_is_detected() {
        let (params, config, vocab) = tiny();
        let bytes = encode_checkpoint(&params, &config, Some(&vocab)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(AenError::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(AenError::Format(_))));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(AenError::Format(_))), "cut {cut}");
        }

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(AenError::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_an_integrity_error() {
        let (params, config, _) = tiny();
        let mut bytes = encode_checkpoint(&params, &config, None).unwrap();
        // claim d_hid=8 in the config block without touching the tensors
        let at = bytes.windows(8).position(|w| w == b"d_hid=4\n").unwrap();
        bytes[at + 6] = b'8';
        assert!(matches!(decode_checkpoint(&bytes), Err(AenError::Integrity(_))));
    }
}
