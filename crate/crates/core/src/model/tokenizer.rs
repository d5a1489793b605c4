use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Token ids. Range and length are checked against a model at use.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Byte-level: token id `b` is the byte `b`.
pub fn tokenize(text: &[u8]) -> TokenSequence {
    TokenSequence(text.iter().map(|b| u32::from(*b)).collect())
}

/// Inverse of [`tokenize`]. Ids in `256..vocab_size` carry no bytes and are
/// dropped; ids at or above `vocab_size` are an error.
pub fn detokenize(ids: &[u32], vocab_size: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id as usize >= vocab_size {
            return Err(Error::InvalidToken { id, vocab_size });
        }
        if let Ok(b) = u8::try_from(id) {
            out.push(b);
        }
    }
    Ok(out)
}
