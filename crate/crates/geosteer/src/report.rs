//! CSV and JSON outputs of evaluation and diagnostics.

use std::path::Path;

use geosteer_core::diagnostics::{NormProfile, PlantedReport, RankReport, SweepPoint};
use geosteer_core::eval::MCScores;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{write_bytes, write_json};

fn csv_bytes(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::format(path, e.to_string()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    write_bytes(path, &csv_bytes(path, header, rows)?)
}

/// `item_index, choice_index, loglik`, one row per scored choice.
pub fn write_results_csv(path: &Path, scores: &MCScores) -> Result<()> {
    let rows =
        scores.per_item.iter().enumerate().flat_map(|(i, s)| {
            s.iter().enumerate().map(move |(c, l)| vec![i.to_string(), c.to_string(), l.to_string()])
        });
    write_csv(path, &["item_index", "choice_index", "loglik"], rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
    pub n_items: usize,
    /// Hex SHA-256 of the plan, or `"none"` when unsteered.
    pub plan_digest: String,
}

pub fn write_summary(path: &Path, scores: &MCScores, plan_digest: Option<String>) -> Result<()> {
    write_json(
        path,
        &Summary {
            mc1: scores.mc1,
            mc2: scores.mc2,
            mc3: scores.mc3,
            n_items: scores.per_item.len(),
            plan_digest: plan_digest.unwrap_or_else(|| "none".into()),
        },
    )
}

pub fn write_norm_profile_csv(path: &Path, profile: &NormProfile) -> Result<()> {
    let rows = profile.per_layer.iter().map(|l| {
        let mut r = vec![l.layer.to_string()];
        r.extend([l.mean_norm_pos, l.std_pos, l.mean_norm_neg, l.std_neg, l.delta_norm].iter().map(f64::to_string));
        r
    });
    write_csv(path, &["layer", "mean_pos", "std_pos", "mean_neg", "std_neg", "delta"], rows)
}

pub const SWEEP_HEADER: [&str; 6] = ["mode", "strength", "mc1", "mc2", "mc3", "rank_drop"];

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let rows = points.iter().map(|p| {
        let mut r = vec![p.mode.as_str().to_string()];
        r.extend([p.strength, p.mc1, p.mc2, p.mc3, p.rank_drop].iter().map(f64::to_string));
        r
    });
    write_csv(path, &SWEEP_HEADER, rows)
}

#[derive(Debug, Serialize)]
struct RankSummary {
    layer: usize,
    strength: Option<f64>,
    effective_rank_pre: f64,
    effective_rank_post: f64,
    rank_drop: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Spectra {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// `rank.json` with the effective ranks and `spectra.json` with both
/// singular value lists, descending.
pub fn write_rank_report(dir: &Path, report: &RankReport) -> Result<()> {
    write_json(
        &dir.join("rank.json"),
        &RankSummary {
            layer: report.layer,
            strength: report.strength,
            effective_rank_pre: report.effective_rank_pre,
            effective_rank_post: report.effective_rank_post,
            rank_drop: report.rank_drop,
        },
    )?;
    write_json(
        &dir.join("spectra.json"),
        &Spectra { pre: report.spectrum_pre.values().to_vec(), post: report.spectrum_post.values().to_vec() },
    )
}

#[derive(Debug, Serialize)]
struct PlantedSummary {
    token: u32,
    theta: f64,
    strictly_increasing: bool,
    argmax_at_full: u32,
    generated_at_full: u32,
}

/// `planted.csv` with the logit curve and `planted.json` with the verdict.
pub fn write_planted_report(dir: &Path, report: &PlantedReport) -> Result<()> {
    let rows = report.t_grid.iter().zip(&report.logits).map(|(t, l)| vec![t.to_string(), l.to_string()]);
    write_csv(&dir.join("planted.csv"), &["t", "logit"], rows)?;
    write_json(
        &dir.join("planted.json"),
        &PlantedSummary {
            token: report.token,
            theta: report.theta,
            strictly_increasing: report.strictly_increasing,
            argmax_at_full: report.argmax_at_full,
            generated_at_full: report.generated_at_full,
        },
    )
}
