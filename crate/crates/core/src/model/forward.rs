use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{dot, rms_normalize_slice, Vector};

/// Where in a block a hook fires. Only the post-block residual is exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HookSite {
    PostBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HookPoint {
    pub layer: usize,
    pub site: HookSite,
}

impl HookPoint {
    pub fn post_block(layer: usize) -> Self {
        Self { layer, site: HookSite::PostBlock }
    }
}

/// Rewrites one token's residual activation. The return value replaces the
/// residual stream and must keep its dimension.
pub trait ActivationHook {
    fn apply(&self, point: HookPoint, position: usize, activation: &Vector) -> Result<Vector>;
}

impl<F> ActivationHook for F
where
    F: Fn(HookPoint, usize, &Vector) -> Result<Vector>,
{
    fn apply(&self, point: HookPoint, position: usize, activation: &Vector) -> Result<Vector> {
        self(point, position, activation)
    }
}

/// Returns its input unchanged; useful for capture-only hooks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl ActivationHook for Identity {
    fn apply(&self, _: HookPoint, _: usize, activation: &Vector) -> Result<Vector> {
        Ok(activation.clone())
    }
}

pub type HookList<'a> = Vec<(HookPoint, Box<dyn ActivationHook + 'a>)>;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `seq_len × vocab_size`.
    pub logits: Vec<Vec<f64>>,
    /// Post-hook activation at every position, for each hooked point.
    pub captured: BTreeMap<HookPoint, Vec<Vector>>,
}

struct Block {
    attn_norm: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    mlp_norm: Vec<f64>,
    w_in: Vec<f64>,
    w_out: Vec<f64>,
}

/// A checkpoint widened to `f64` and ready to run. Immutable; every call owns
/// its activation buffers.
pub struct Model {
    config: ModelConfig,
    tok_embed: Vec<f64>,
    pos_embed: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: Vec<f64>,
    unembed: Vec<f64>,
}

fn widen(ckpt: &Checkpoint, name: &str) -> Result<Vec<f64>> {
    Ok(ckpt.tensor(name)?.data.iter().map(|x| f64::from(*x)).collect())
}

/// `y = W x` with `W` stored row-major as `out × in`.
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
        *o = dot(row, x);
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanh(C * (x + 0.044_715 * x * x * x)))
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        let blocks = (0..ckpt.config.n_layers)
            .map(|l| {
                let t = |s: &str| widen(ckpt, &alloc::format!("blocks.{l}.{s}"));
                Ok(Block {
                    attn_norm: t("attn_norm")?,
                    wq: t("attn.wq")?,
                    wk: t("attn.wk")?,
                    wv: t("attn.wv")?,
                    wo: t("attn.wo")?,
                    mlp_norm: t("mlp_norm")?,
                    w_in: t("mlp.w_in")?,
                    w_out: t("mlp.w_out")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: ckpt.config,
            tok_embed: widen(ckpt, "tok_embed")?,
            pos_embed: widen(ckpt, "pos_embed")?,
            blocks,
            final_norm: widen(ckpt, "final_norm")?,
            unembed: widen(ckpt, "unembed")?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("token sequence is empty".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong { len: tokens.len(), max: self.config.max_seq_len });
        }
        if let Some(&id) = tokens.ids().iter().find(|id| **id as usize >= self.config.vocab_size) {
            return Err(Error::InvalidToken { id, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Plain causal forward pass; `seq_len × vocab_size` logits.
    pub fn forward(&self, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_with_hooks(tokens, &[])?.logits)
    }

    /// Causal forward pass. After block `l`, every hook registered at
    /// `post_block(l)` is applied to every position in list order, and its
    /// output is what block `l + 1` reads.
    pub fn forward_with_hooks(
        &self,
        tokens: &TokenSequence,
        hooks: &[(HookPoint, Box<dyn ActivationHook + '_>)],
    ) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        for (p, _) in hooks {
            if p.layer >= self.config.n_layers {
                return Err(Error::LayerOutOfRange { layer: p.layer, n_layers: self.config.n_layers });
            }
        }
        let d = self.config.d_model;
        let seq = tokens.len();

        let mut x: Vec<Vec<f64>> = tokens
            .ids()
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                let e = &self.tok_embed[id as usize * d..(id as usize + 1) * d];
                let p = &self.pos_embed[pos * d..(pos + 1) * d];
                e.iter().zip(p).map(|(a, b)| a + b).collect()
            })
            .collect();

        let mut captured = BTreeMap::new();
        for (layer, block) in self.blocks.iter().enumerate() {
            self.block_forward(block, &mut x);
            let point = HookPoint::post_block(layer);
            let mut any = false;
            for (_, hook) in hooks.iter().filter(|(p, _)| *p == point) {
                any = true;
                for (pos, row) in x.iter_mut().enumerate() {
                    let input = Vector::new(core::mem::take(row))?;
                    let output = hook.apply(point, pos, &input)?;
                    if output.dim() != d {
                        return Err(Error::HookContractViolation { layer, expected: d, found: output.dim() });
                    }
                    *row = output.into_inner();
                }
            }
            if any {
                let rows = x.iter().map(|r| Vector::new(r.clone())).collect::<Result<Vec<_>>>()?;
                captured.insert(point, rows);
            }
        }

        let mut normed = vec![0.0; d];
        let logits = x
            .iter()
            .map(|row| {
                rms_normalize_slice(row, &self.final_norm, self.config.rms_eps, &mut normed);
                let mut out = vec![0.0; self.config.vocab_size];
                matvec(&self.unembed, &normed, &mut out);
                out
            })
            .collect();
        debug_assert_eq!(x.len(), seq);
        Ok(ForwardOutput { logits, captured })
    }

    fn block_forward(&self, b: &Block, x: &mut [Vec<f64>]) {
        let cfg = &self.config;
        let (d, h, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let seq = x.len();
        let scale = 1.0 / libm::sqrt(dh as f64);

        let mut normed = vec![0.0; d];
        let mut q = vec![vec![0.0; d]; seq];
        let mut k = vec![vec![0.0; d]; seq];
        let mut v = vec![vec![0.0; d]; seq];
        for i in 0..seq {
            rms_normalize_slice(&x[i], &b.attn_norm, cfg.rms_eps, &mut normed);
            matvec(&b.wq, &normed, &mut q[i]);
            matvec(&b.wk, &normed, &mut k[i]);
            matvec(&b.wv, &normed, &mut v[i]);
        }

        let mut mixed = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut weights = vec![0.0; seq];
        for i in 0..seq {
            for head in 0..h {
                let r = head * dh..(head + 1) * dh;
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let s = dot(&q[i][r.clone()], &k[j][r.clone()]) * scale;
                    weights[j] = s;
                    max = max.max(s);
                }
                let mut total = 0.0;
                for w in &mut weights[..=i] {
                    *w = libm::exp(*w - max);
                    total += *w;
                }
                let out = &mut mixed[r.clone()];
                out.iter_mut().for_each(|o| *o = 0.0);
                for j in 0..=i {
                    let w = weights[j] / total;
                    for (o, vv) in out.iter_mut().zip(&v[j][r.clone()]) {
                        *o += w * vv;
                    }
                }
            }
            matvec(&b.wo, &mixed, &mut proj);
            for (xi, p) in x[i].iter_mut().zip(&proj) {
                *xi += p;
            }
        }

        let mut hidden = vec![0.0; cfg.d_ff()];
        for row in x.iter_mut() {
            rms_normalize_slice(row, &b.mlp_norm, cfg.rms_eps, &mut normed);
            matvec(&b.w_in, &normed, &mut hidden);
            hidden.iter_mut().for_each(|z| *z = gelu(*z));
            matvec(&b.w_out, &hidden, &mut proj);
            for (xi, p) in row.iter_mut().zip(&proj) {
                *xi += p;
            }
        }
    }

    /// Greedy autoregressive decoding. Hooks fire at every step over the full
    /// prefix (no KV cache). Ties in the argmax go to the lowest id.
    pub fn generate_greedy(
        &self,
        prompt: &TokenSequence,
        max_new: usize,
        hooks: &[(HookPoint, Box<dyn ActivationHook + '_>)],
    ) -> Result<TokenSequence> {
        let total = prompt.len() + max_new;
        if total > self.config.max_seq_len {
            return Err(Error::SequenceTooLong { len: total, max: self.config.max_seq_len });
        }
        let mut seq = prompt.clone();
        for _ in 0..max_new {
            let out = self.forward_with_hooks(&seq, hooks)?;
            let last = out.logits.last().expect("non-empty sequence");
            seq.0.push(argmax(last) as u32);
        }
        Ok(seq)
    }
}

/// Index of the largest value; lowest index wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
