//! Likelihood-based multiple-choice evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{tokenize, Model};
use crate::plan::SteeringPlan;

/// Which token positions a plan's hooks may touch while scoring or decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SteerScope {
    /// Every position, prompt included.
    #[default]
    All,
    /// Only positions whose next-token distributions are scored: the last
    /// prompt token onward.
    AnswerOnly,
}

impl SteerScope {
    /// First steered position for a prompt of `prompt_len` tokens.
    pub fn start(self, prompt_len: usize) -> usize {
        match self {
            SteerScope::All => 0,
            SteerScope::AnswerOnly => prompt_len.saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MCItem {
    pub question: String,
    pub choices: Vec<String>,
    pub correct: Vec<usize>,
}

impl MCItem {
    pub fn new(question: impl Into<String>, choices: Vec<String>, mut correct: Vec<usize>) -> Result<Self> {
        correct.sort_unstable();
        correct.dedup();
        let item = Self { question: question.into(), choices, correct };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.question.is_empty() {
            return bad("question must be non-empty");
        }
        if self.choices.len() < 2 {
            return bad("an item needs at least two choices");
        }
        if self.choices.iter().any(|c| c.is_empty()) {
            return bad("choices must be non-empty");
        }
        if self.correct.is_empty() {
            return bad("an item needs at least one correct choice");
        }
        if self.correct.iter().any(|c| *c >= self.choices.len()) {
            return bad("correct index out of range");
        }
        let mut distinct = self.correct.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() >= self.choices.len() {
            return bad("an item needs at least one incorrect choice");
        }
        Ok(())
    }

    pub fn is_correct(&self, choice: usize) -> bool {
        self.correct.contains(&choice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemMetrics {
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCScores {
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
    pub per_item: Vec<Vec<f64>>,
    pub item_metrics: Vec<ItemMetrics>,
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| libm::exp(z - max)).sum();
    logits[index] - max - libm::log(sum)
}

/// `Σ log p(token_j | prefix)` over the choice tokens of `question ∥ choice`,
/// teacher-forced in one forward pass with the plan's hooks active.
pub fn score_choice(
    model: &Model,
    plan: Option<&SteeringPlan>,
    question: &str,
    choice: &str,
    scope: SteerScope,
) -> Result<f64> {
    if question.is_empty() || choice.is_empty() {
        return Err(Error::InvalidInput("question and choice must be non-empty".into()));
    }
    let mut bytes = Vec::with_capacity(question.len() + choice.len());
    bytes.extend_from_slice(question.as_bytes());
    bytes.extend_from_slice(choice.as_bytes());
    let tokens = tokenize(&bytes);
    let max = model.config().max_seq_len;
    if tokens.len() > max {
        return Err(Error::SequenceTooLong { len: tokens.len(), max });
    }
    let q_len = question.len();
    let hooks = plan.map(|p| p.hooks(scope.start(q_len))).unwrap_or_default();
    let out = model.forward_with_hooks(&tokens, &hooks)?;
    let ids = tokens.ids();
    Ok((q_len..ids.len()).map(|j| log_softmax_at(&out.logits[j - 1], ids[j] as usize)).sum())
}

/// Scores every choice of one item, in choice order.
pub fn score_item(model: &Model, plan: Option<&SteeringPlan>, item: &MCItem, scope: SteerScope) -> Result<Vec<f64>> {
    item.choices.iter().map(|c| score_choice(model, plan, &item.question, c, scope)).collect()
}

/// MC1, MC2 and MC3 for one item. Ties between the best correct and best
/// incorrect score count against MC1 and MC3.
pub fn item_metrics(item: &MCItem, scores: &[f64]) -> ItemMetrics {
    let best_incorrect =
        (0..scores.len()).filter(|i| !item.is_correct(*i)).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let correct: Vec<f64> = item.correct.iter().map(|&i| scores[i]).collect();
    let best_correct = correct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mc1 = if best_correct > best_incorrect { 1.0 } else { 0.0 };
    let mc3 = correct.iter().filter(|s| **s > best_incorrect).count() as f64 / correct.len() as f64;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|s| libm::exp(s - max)).sum();
    let mass: f64 = correct.iter().map(|s| libm::exp(s - max)).sum();
    ItemMetrics { mc1, mc2: mass / total, mc3 }
}

/// Dataset metrics as unweighted means over items, folded in item order.
pub fn mc_metrics(items: &[MCItem], scores: &[Vec<f64>]) -> Result<MCScores> {
    if scores.len() != items.len() {
        return Err(Error::IncompleteScores {
            item: scores.len().min(items.len()),
            expected: items.len(),
            found: scores.len(),
        });
    }
    let mut metrics = Vec::with_capacity(items.len());
    for (i, (item, s)) in items.iter().zip(scores).enumerate() {
        if s.len() != item.choices.len() {
            return Err(Error::IncompleteScores { item: i, expected: item.choices.len(), found: s.len() });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("item {i} has non-finite scores")));
        }
        metrics.push(item_metrics(item, s));
    }
    let n = items.len().max(1) as f64;
    let mean = |f: fn(&ItemMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    Ok(MCScores {
        mc1: mean(|m| m.mc1),
        mc2: mean(|m| m.mc2),
        mc3: mean(|m| m.mc3),
        per_item: scores.to_vec(),
        item_metrics: metrics,
    })
}

/// Train/validation ratio and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratio: (u32, u32),
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 0, ratio: (4, 1) }
    }
}

/// Seeded uniform shuffle, then the first `⌊n · a / (a + b)⌋` items train.
pub fn split<T: Clone>(items: &[T], spec: SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = spec.ratio;
    if a == 0 || b == 0 {
        return Err(Error::InvalidInput("split ratio parts must be positive".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (items.len() as u128 * a as u128 / (a as u128 + b as u128)) as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}
