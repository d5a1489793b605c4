//! Norm profiles, effective-rank collapse, strength sweeps, and the
//! planted-direction check.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::{mc_metrics, score_item, MCItem, SteerScope};
use crate::linalg::{effective_rank, singular_values, Matrix, SingularSpectrum, UnitVector};
use crate::model::forward::argmax;
use crate::model::{
    init_model, tokenize, ActivationHook, HookList, HookPoint, Identity, Model, ModelConfig, TokenSequence,
};
use crate::plan::{intervene, Intervention, RotationStrength, SteeringPlan};
use crate::prototype::{extract_with_hooks, ActivationRecord, ContrastivePair, Polarity, Prototype};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorms {
    pub layer: usize,
    pub mean_norm_pos: f64,
    pub std_pos: f64,
    pub mean_norm_neg: f64,
    pub std_neg: f64,
    /// `mean_norm_pos − mean_norm_neg`.
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormProfile {
    pub per_layer: Vec<LayerNorms>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Mean and population standard deviation of last-token `‖z⁺‖` and `‖z⁻‖`
/// at every layer. With a plan, norms are read after its interventions.
pub fn norm_profile(model: &Model, pairs: &[ContrastivePair], plan: Option<&SteeringPlan>) -> Result<NormProfile> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("norm profile needs at least one pair".into()));
    }
    let layers: Vec<usize> = (0..model.config().n_layers).collect();
    let records = extract_with_hooks(model, pairs, &layers, || plan.map(|p| p.hooks(0)).unwrap_or_default())?;
    norm_profile_from_records(&records)
}

/// The per-layer norm statistics of already extracted records, for every
/// layer that has both polarities.
pub fn norm_profile_from_records(records: &[ActivationRecord]) -> Result<NormProfile> {
    let mut layers: Vec<usize> = records.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let mut per_layer = Vec::with_capacity(layers.len());
    for layer in layers {
        let norms = |pol: Polarity| -> Vec<f64> {
            records.iter().filter(|r| r.layer == layer && r.polarity == pol).map(|r| r.vector.norm()).collect()
        };
        let (pos, neg) = (norms(Polarity::Positive), norms(Polarity::Negative));
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::InvalidInput(alloc::format!("layer {layer} lacks one polarity")));
        }
        let (mean_norm_pos, std_pos) = mean_std(&pos);
        let (mean_norm_neg, std_neg) = mean_std(&neg);
        per_layer.push(LayerNorms {
            layer,
            mean_norm_pos,
            std_pos,
            mean_norm_neg,
            std_neg,
            delta_norm: mean_norm_pos - mean_norm_neg,
        });
    }
    Ok(NormProfile { per_layer })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub layer: usize,
    /// Fixed `t` or `λ`; `None` for a gated rotation.
    pub strength: Option<f64>,
    pub effective_rank_pre: f64,
    pub effective_rank_post: f64,
    /// `effective_rank_pre − effective_rank_post`.
    pub rank_drop: f64,
    pub spectrum_pre: SingularSpectrum,
    pub spectrum_post: SingularSpectrum,
}

fn plan_strength(plan: &SteeringPlan) -> Option<f64> {
    match plan.intervention() {
        Intervention::Add(a) => Some(a.lambda()),
        Intervention::Rotate { strength: RotationStrength::Fixed(t), .. } => Some(*t),
        Intervention::Rotate { strength: RotationStrength::Gated(_), .. } => None,
    }
}

/// Every token activation of every probe text at `layer`, stacked as rows,
/// before and after the plan's intervention at that layer. Interventions at
/// earlier plan layers are live in both.
pub fn stacked_activations(
    model: &Model,
    plan: &SteeringPlan,
    probe_texts: &[&str],
    layer: usize,
) -> Result<(Matrix, Matrix)> {
    if probe_texts.is_empty() {
        return Err(Error::InvalidInput("rank analysis needs at least one probe text".into()));
    }
    let n_layers = model.config().n_layers;
    if layer >= n_layers {
        return Err(Error::LayerOutOfRange { layer, n_layers });
    }
    let mut pre = Vec::new();
    for text in probe_texts {
        let tokens = tokenize(text.as_bytes());
        let mut hooks = plan.hooks_where(0, |l| l < layer);
        hooks.push((HookPoint::post_block(layer), Box::new(Identity)));
        let out = model.forward_with_hooks(&tokens, &hooks)?;
        pre.extend(out.captured[&HookPoint::post_block(layer)].iter().cloned());
    }
    let post = match plan.entry(layer) {
        None => pre.clone(),
        Some(entry) => pre
            .iter()
            .map(|h| Ok(intervene(h, &entry.prototype, plan.intervention())?.0))
            .collect::<Result<Vec<_>>>()?,
    };
    let rows = |vs: &[crate::linalg::Vector]| Matrix::from_rows(&vs.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
    Ok((rows(&pre)?, rows(&post)?))
}

/// Effective rank of the stacked token activations before and after
/// intervention, and the drop between them.
pub fn rank_drop(model: &Model, plan: &SteeringPlan, probe_texts: &[&str], layer: usize) -> Result<RankReport> {
    let (pre, post) = stacked_activations(model, plan, probe_texts, layer)?;
    let spectrum_pre = singular_values(&pre)?;
    let spectrum_post = if pre == post { spectrum_pre.clone() } else { singular_values(&post)? };
    let effective_rank_pre = effective_rank(&spectrum_pre)?;
    let effective_rank_post = effective_rank(&spectrum_post)?;
    Ok(RankReport {
        layer,
        strength: plan_strength(plan),
        effective_rank_pre,
        effective_rank_post,
        rank_drop: effective_rank_pre - effective_rank_post,
        spectrum_pre,
        spectrum_post,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Rotate,
    Add,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Rotate => "rotate",
            SweepMode::Add => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub mode: SweepMode,
    pub strength: f64,
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
    pub rank_drop: f64,
    pub effective_rank_post: f64,
}

/// Inputs for [`collapse_sweep`].
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    /// Layers and prototypes to steer; its intervention is replaced per point.
    pub base_plan: &'a SteeringPlan,
    /// Fixed rotation strengths `t`, ascending.
    pub rotate_strengths: &'a [f64],
    /// Addition strengths `λ`, ascending.
    pub add_strengths: &'a [f64],
    pub items: &'a [MCItem],
    pub probe_texts: &'a [&'a str],
    pub scope: SteerScope,
}

fn ascending(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1]) && xs.iter().all(|x| x.is_finite())
}

/// Ungated rotation at each fixed `t` and addition at each `λ`: MC metrics
/// plus the rank drop at the plan's first layer. Rotate points come first,
/// each mode in strength order.
pub fn collapse_sweep(model: &Model, setup: &SweepSetup<'_>) -> Result<Vec<SweepPoint>> {
    if !ascending(setup.rotate_strengths) || !ascending(setup.add_strengths) {
        return Err(Error::InvalidInput("sweep strengths must be sorted ascending".into()));
    }
    let layer = setup.base_plan.entries()[0].layer;
    let runs = setup
        .rotate_strengths
        .iter()
        .map(|&t| (SweepMode::Rotate, t))
        .chain(setup.add_strengths.iter().map(|&l| (SweepMode::Add, l)));
    let mut points = Vec::new();
    for (mode, strength) in runs {
        let intervention = match mode {
            SweepMode::Rotate => Intervention::fixed(strength)?,
            SweepMode::Add => Intervention::add(strength)?,
        };
        let plan = setup.base_plan.with_intervention(intervention)?;
        let scores =
            setup.items.iter().map(|it| score_item(model, Some(&plan), it, setup.scope)).collect::<Result<Vec<_>>>()?;
        let mc = mc_metrics(setup.items, &scores)?;
        let rank = rank_drop(model, &plan, setup.probe_texts, layer)?;
        points.push(SweepPoint {
            mode,
            strength,
            mc1: mc.mc1,
            mc2: mc.mc2,
            mc3: mc.mc3,
            rank_drop: rank.rank_drop,
            effective_rank_post: rank.effective_rank_post,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedReport {
    pub token: u32,
    /// Angle between the unsteered final activation and the planted row.
    pub theta: f64,
    pub t_grid: Vec<f64>,
    /// Logit of the planted token at the last position, per grid value.
    pub logits: Vec<f64>,
    pub strictly_increasing: bool,
    /// Argmax at the last position when fully rotated.
    pub argmax_at_full: u32,
    /// First greedily decoded token with `t = 1` steering.
    pub generated_at_full: u32,
}

/// Prompt used by [`planted_direction_check`].
pub const PLANTED_PROMPT: &[u8] = b"geodesic";

/// Builds a model whose final norm has unit gain and whose unembedding rows
/// are unit vectors, takes the planted token's row `v` as `μ_T`, and rotates
/// the final-layer residual toward `v` over `t_grid`. Under unit-gain
/// RMSNorm the planted logit is `√d · cos((1 − t) θ)` up to the norm's eps,
/// so it must rise strictly with `t`.
pub fn planted_direction_check(config: ModelConfig, t_grid: &[f64], seed: u64) -> Result<PlantedReport> {
    if t_grid.is_empty() || !ascending(t_grid) || t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput("t grid must be sorted within [0, 1]".into()));
    }
    let mut ckpt = init_model(config, seed)?;
    let d = config.d_model;
    ckpt.tensor_mut("final_norm")?.data.iter_mut().for_each(|g| *g = 1.0);
    for row in ckpt.tensor_mut("unembed")?.data.chunks_exact_mut(d) {
        let n = libm::sqrtf(row.iter().map(|x| x * x).sum());
        row.iter_mut().for_each(|x| *x /= n);
    }
    let token = (u32::from(b'T')) % config.vocab_size as u32;
    let row = &ckpt.tensor("unembed")?.data[token as usize * d..(token as usize + 1) * d];
    let v = UnitVector::normalize(&row.iter().map(|x| f64::from(*x)).collect::<Vec<_>>())?;
    let model = Model::from_checkpoint(&ckpt)?;
    let prototype = Prototype::new(config.n_layers - 1, v.clone(), 1.0, 1)?;

    let prompt = TokenSequence(
        PLANTED_PROMPT
            .iter()
            .take(config.max_seq_len.saturating_sub(1).max(1))
            .map(|b| u32::from(*b) % config.vocab_size as u32)
            .collect(),
    );
    let last = HookPoint::post_block(config.n_layers - 1);
    let base = model.forward_with_hooks(&prompt, &[(last, Box::new(Identity) as Box<dyn ActivationHook>)])?;
    let h = base.captured[&last].last().expect("non-empty prompt");
    let theta = crate::linalg::unit_angle(&UnitVector::normalize(h.as_slice())?, &v)?;

    let steered = |t: f64| -> Result<SteeringPlan> {
        SteeringPlan::from_prototypes(alloc::vec![prototype.clone()], Intervention::fixed(t)?)
    };
    let mut logits = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let plan = steered(t)?;
        let out = model.forward_with_hooks(&prompt, &plan.hooks(0))?;
        logits.push(out.logits.last().expect("non-empty")[token as usize]);
    }
    let strictly_increasing = logits.windows(2).all(|w| w[1] > w[0]);

    let full = steered(1.0)?;
    let hooks: HookList<'_> = full.hooks(0);
    let out = model.forward_with_hooks(&prompt, &hooks)?;
    let argmax_at_full = argmax(out.logits.last().expect("non-empty")) as u32;
    let generated = model.generate_greedy(&prompt, 1, &hooks)?;
    let generated_at_full = *generated.ids().last().expect("one new token");

    Ok(PlantedReport {
        token,
        theta,
        t_grid: t_grid.to_vec(),
        logits,
        strictly_increasing,
        argmax_at_full,
        generated_at_full,
    })
}
