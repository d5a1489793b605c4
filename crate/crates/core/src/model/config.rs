use alloc::format;

use crate::error::{Error, Result};

/// Shape hyperparameters of the toy transformer.
///
/// The MLP hidden width is fixed at `4 · d_model`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rms_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 64, n_layers: 4, n_heads: 4, vocab_size: 256, max_seq_len: 256, rms_eps: 1e-6 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("d_model, n_layers and n_heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("n_heads ({}) must divide d_model ({})", self.n_heads, self.d_model));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.max_seq_len < 1 {
            return bad("max_seq_len must be at least 1".into());
        }
        if !self.rms_eps.is_finite() || self.rms_eps <= 0.0 {
            return bad(format!("rms_eps must be positive, got {}", self.rms_eps));
        }
        // Dimensions are stored as u32 on disk.
        let limit = u32::MAX as usize;
        if [self.d_model, self.n_layers, self.n_heads, self.vocab_size, self.max_seq_len].iter().any(|v| *v > limit) {
            return bad("dimensions must fit in u32".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}
