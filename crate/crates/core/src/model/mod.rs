//! A minimal pre-norm decoder-only transformer with residual-stream hooks.
//!
//! Block `l` computes
//!
//! ```text
//! x ← x + Wo · attn(rms(x; attn_norm))
//! x ← x + W_out · gelu(W_in · rms(x; mlp_norm))
//! ```
//!
//! and the hook point `post_block(l)` sees `x` after both residual adds.
//! Logits are `unembed · rms(x; final_norm)`.

mod checkpoint;
mod config;
pub(crate) mod forward;
mod init;
mod tokenizer;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{ActivationHook, ForwardOutput, HookList, HookPoint, HookSite, Identity, Model};
pub use init::init_model;
pub use tokenizer::{detokenize, tokenize, TokenSequence};
