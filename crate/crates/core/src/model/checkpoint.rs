//! Named tensors plus a little-endian binary codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "GSTR"
//! version      u32      1
//! d_model      u32
//! n_layers     u32
//! n_heads      u32
//! vocab_size   u32
//! max_seq_len  u32
//! rms_eps      f64
//! has_seed     u8       0 or 1
//! seed         u64      0 when has_seed == 0
//! n_tensors    u32
//! n_tensors × { name_len u32, name utf-8, rank u32, dims u32 × rank, f32 × Π dims }
//! ```
//!
//! Tensors are written in name order. Trailing bytes are an error.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSTR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A shape-tagged `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch { expected: n, found: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![value; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
    pub seed: Option<u64>,
}

impl Checkpoint {
    /// Every tensor name and shape the forward pass expects, in a fixed order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, v, f) = (config.d_model, config.vocab_size, config.d_ff());
        let mut out = Vec::new();
        out.push(("tok_embed".to_string(), alloc::vec![v, d]));
        out.push(("pos_embed".to_string(), alloc::vec![config.max_seq_len, d]));
        for l in 0..config.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            out.push((p("attn_norm"), alloc::vec![d]));
            out.push((p("attn.wq"), alloc::vec![d, d]));
            out.push((p("attn.wk"), alloc::vec![d, d]));
            out.push((p("attn.wv"), alloc::vec![d, d]));
            out.push((p("attn.wo"), alloc::vec![d, d]));
            out.push((p("mlp_norm"), alloc::vec![d]));
            out.push((p("mlp.w_in"), alloc::vec![f, d]));
            out.push((p("mlp.w_out"), alloc::vec![d, f]));
        }
        out.push(("final_norm".to_string(), alloc::vec![d]));
        out.push(("unembed".to_string(), alloc::vec![v, d]));
        out
    }

    /// Checks that every documented tensor is present with its exact shape
    /// and that no extra tensors are carried.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = Self::layout(&self.config);
        for (name, shape) in &layout {
            match self.tensors.get(name) {
                None => return Err(Error::CorruptCheckpoint(format!("missing tensor {name}"))),
                Some(t) if &t.shape != shape => {
                    return Err(Error::CorruptCheckpoint(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape, shape
                    )))
                }
                Some(t) if t.data.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::CorruptCheckpoint(format!("tensor {name} has non-finite values")))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != layout.len() {
            return Err(Error::CorruptCheckpoint("unexpected extra tensors".into()));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.d_model, c.n_layers, c.n_heads, c.vocab_size, c.max_seq_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.rms_eps.to_le_bytes());
        out.push(self.seed.is_some() as u8);
        out.extend_from_slice(&self.seed.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let d_model = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        let n_heads = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let max_seq_len = r.u32()? as usize;
        let rms_eps = f64::from_le_bytes(r.array()?);
        let config = ModelConfig { d_model, n_layers, n_heads, vocab_size, max_seq_len, rms_eps };
        config.validate().map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let has_seed = r.take(1)?[0];
        let seed_value = u64::from_le_bytes(r.array()?);
        let seed = match has_seed {
            0 => None,
            1 => Some(seed_value),
            other => return Err(Error::CorruptCheckpoint(format!("bad seed flag {other}"))),
        };

        let n_tensors = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} is too large")))?;
            let payload_len =
                count.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} is too large")))?;
            let payload = r.take(payload_len)?;
            let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes after last tensor".into()));
        }
        let ckpt = Checkpoint { config, tensors, seed };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn small() -> Checkpoint {
        let cfg = ModelConfig { d_model: 8, n_layers: 2, n_heads: 2, vocab_size: 16, max_seq_len: 8, rms_eps: 1e-6 };
        init_model(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = small();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_detected() {
        let bytes = small().to_bytes();
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = small().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
        let mut bytes = small().to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = small().to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn wrong_shape_rejected() {
        let mut c = small();
        c.tensors.insert("final_norm".into(), Tensor::filled(alloc::vec![7], 1.0));
        assert!(matches!(c.validate(), Err(Error::CorruptCheckpoint(_))));
        let mut c = small();
        c.tensors.remove("unembed");
        assert!(c.validate().is_err());
    }
}
