//! Contrastive prototype directions.
//!
//! For each pair `(x, y⁺, y⁻)` the model reads `x ∥ y⁺` and `x ∥ y⁻` and the
//! post-block residual of the final token is recorded at each requested
//! layer. The prototype at a layer is the normalised difference of the mean
//! positive and mean negative activations.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{norm, CompensatedSum, UnitVector, Vector};
use crate::model::{tokenize, HookList, HookPoint, Identity, Model, TokenSequence};

/// `‖Δ‖` at or below this is treated as no contrastive signal.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePair {
    pub question: String,
    pub positive: String,
    pub negative: String,
}

impl ContrastivePair {
    pub fn new(question: impl Into<String>, positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let pair = Self { question: question.into(), positive: positive.into(), negative: negative.into() };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() || self.positive.is_empty() || self.negative.is_empty() {
            return Err(Error::InvalidInput("contrastive pair fields must be non-empty".into()));
        }
        if self.positive == self.negative {
            return Err(Error::InvalidInput("positive and negative answers must differ".into()));
        }
        Ok(())
    }

    /// `question ∥ answer` as bytes; no separator is inserted.
    pub fn sequence(&self, polarity: Polarity) -> TokenSequence {
        let answer = match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        };
        let mut bytes = Vec::with_capacity(self.question.len() + answer.len());
        bytes.extend_from_slice(self.question.as_bytes());
        bytes.extend_from_slice(answer.as_bytes());
        tokenize(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub pair_index: usize,
    pub layer: usize,
    pub polarity: Polarity,
    pub vector: Vector,
}

/// Unit direction separating positive from negative activations at a layer.
/// The opposite pole is always `−mu_t` and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    layer: usize,
    mu_t: UnitVector,
    raw_delta_norm: f64,
    n_pairs: usize,
}

impl Prototype {
    pub fn new(layer: usize, mu_t: UnitVector, raw_delta_norm: f64, n_pairs: usize) -> Result<Self> {
        if !raw_delta_norm.is_finite() || raw_delta_norm <= 0.0 {
            return Err(Error::InvalidInput("raw_delta_norm must be positive".into()));
        }
        if n_pairs == 0 {
            return Err(Error::InvalidInput("prototype needs at least one pair".into()));
        }
        Ok(Self { layer, mu_t, raw_delta_norm, n_pairs })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn mu_t(&self) -> &UnitVector {
        &self.mu_t
    }

    pub fn mu_h(&self) -> UnitVector {
        self.mu_t.antipode()
    }

    pub fn raw_delta_norm(&self) -> f64 {
        self.raw_delta_norm
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn dim(&self) -> usize {
        self.mu_t.dim()
    }
}

/// Runs both completions of every pair and records the final-token residual
/// at each layer in `layers`. The model is only read.
///
/// Records come out pair by pair, positive before negative, layers ascending.
pub fn extract_last_token(model: &Model, pairs: &[ContrastivePair], layers: &[usize]) -> Result<Vec<ActivationRecord>> {
    extract_with_hooks(model, pairs, layers, Vec::new)
}

/// Like [`extract_last_token`], but with extra hooks active during each
/// forward; the recorded activation is taken after them.
pub(crate) fn extract_with_hooks<'a, F>(
    model: &Model,
    pairs: &[ContrastivePair],
    layers: &[usize],
    mut extra: F,
) -> Result<Vec<ActivationRecord>>
where
    F: FnMut() -> HookList<'a>,
{
    let mut layers = layers.to_vec();
    layers.sort_unstable();
    layers.dedup();
    let n_layers = model.config().n_layers;
    if let Some(&bad) = layers.iter().find(|l| **l >= n_layers) {
        return Err(Error::LayerOutOfRange { layer: bad, n_layers });
    }
    let mut records = Vec::with_capacity(2 * pairs.len() * layers.len());
    for (pair_index, pair) in pairs.iter().enumerate() {
        pair.validate()?;
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let tokens = pair.sequence(polarity);
            if tokens.len() > model.config().max_seq_len {
                return Err(Error::SequenceTooLong { len: tokens.len(), max: model.config().max_seq_len });
            }
            let mut hooks = extra();
            hooks.extend(layers.iter().map(|&l| (HookPoint::post_block(l), Box::new(Identity) as Box<_>)));
            let out = model.forward_with_hooks(&tokens, &hooks)?;
            for &layer in &layers {
                let rows = &out.captured[&HookPoint::post_block(layer)];
                let vector = rows.last().expect("non-empty sequence").clone();
                records.push(ActivationRecord { pair_index, layer, polarity, vector });
            }
        }
    }
    Ok(records)
}

fn record_order(a: &&ActivationRecord, b: &&ActivationRecord) -> Ordering {
    a.pair_index.cmp(&b.pair_index).then_with(|| {
        a.vector
            .as_slice()
            .iter()
            .zip(b.vector.as_slice())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Compensated mean in a canonical order, so the result does not depend on
/// how the records were arranged.
fn canonical_mean(mut group: Vec<&ActivationRecord>, dim: usize) -> Vec<f64> {
    group.sort_by(record_order);
    let mut sums = vec![CompensatedSum::default(); dim];
    for r in &group {
        for (s, x) in sums.iter_mut().zip(r.vector.as_slice()) {
            s.add(*x);
        }
    }
    let n = group.len() as f64;
    sums.iter().map(|s| s.value() / n).collect()
}

/// `μ = (m₊ − m₋) / ‖m₊ − m₋‖` over the records at `layer`.
pub fn build_prototype(records: &[ActivationRecord], layer: usize) -> Result<Prototype> {
    let at_layer: Vec<&ActivationRecord> = records.iter().filter(|r| r.layer == layer).collect();
    let dim = at_layer
        .first()
        .map(|r| r.vector.dim())
        .ok_or_else(|| Error::InvalidInput(alloc::format!("no records at layer {layer}")))?;
    if let Some(r) = at_layer.iter().find(|r| r.vector.dim() != dim) {
        return Err(Error::DimMismatch { expected: dim, found: r.vector.dim() });
    }
    let (pos, neg): (Vec<_>, Vec<_>) = at_layer.iter().partition(|r| r.polarity == Polarity::Positive);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(alloc::format!(
            "layer {layer} needs at least one positive and one negative record"
        )));
    }
    let mut pair_ids: Vec<usize> = at_layer.iter().map(|r| r.pair_index).collect();
    pair_ids.sort_unstable();
    pair_ids.dedup();

    let m_pos = canonical_mean(pos, dim);
    let m_neg = canonical_mean(neg, dim);
    let delta: Vec<f64> = m_pos.iter().zip(&m_neg).map(|(a, b)| a - b).collect();
    let delta_norm = norm(&delta);
    if delta_norm.is_nan() || delta_norm <= DEGENERACY_THRESHOLD {
        return Err(Error::DegeneratePrototype { layer, norm: delta_norm });
    }
    let mu_t = UnitVector::normalize(&delta)?;
    Prototype::new(layer, mu_t, delta_norm, pair_ids.len())
}
