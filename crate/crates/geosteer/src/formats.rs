//! On-disk formats: checkpoints, activation dumps, prototypes and plans.

use std::fs;
use std::path::{Path, PathBuf};

use geosteer_core::plan::{Intervention, RotationStrength};
use geosteer_core::{ActivationRecord, Checkpoint, GateParams, Polarity, Prototype, SteeringPlan, UnitVector, Vector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ACTS_MAGIC: [u8; 4] = *b"GACT";
pub const ACTS_VERSION: u32 = 1;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

// Numeric failures keep their kind; everything else is reported against the file.
fn in_file(path: &Path, e: geosteer_core::Error) -> Error {
    if e.is_numeric() {
        Error::Core(e)
    } else {
        Error::format(path, e.to_string())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?).map_err(|e| in_file(path, e))
}

pub fn encode_activations(records: &[ActivationRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.vector.dim());
    if records.iter().any(|r| r.vector.dim() != dim) {
        return Err(Error::Core(geosteer_core::Error::InvalidInput("activation records have mixed dimensions".into())));
    }
    let mut out = Vec::with_capacity(16 + records.len() * (9 + 8 * dim));
    out.extend_from_slice(&ACTS_MAGIC);
    out.extend_from_slice(&ACTS_VERSION.to_le_bytes());
    for n in [dim, records.len()] {
        out.extend_from_slice(&u32_of(n)?.to_le_bytes());
    }
    for r in records {
        out.extend_from_slice(&u32_of(r.pair_index)?.to_le_bytes());
        out.extend_from_slice(&u32_of(r.layer)?.to_le_bytes());
        out.push(match r.polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        });
        for x in r.vector.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Core(geosteer_core::Error::InvalidInput(format!("{n} does not fit in u32"))))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len())?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_activations(path: &Path, bytes: &[u8]) -> Result<Vec<ActivationRecord>> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let truncated = || bad("truncated activation file");
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4) != Some(&ACTS_MAGIC[..]) {
        return Err(bad("not an activation file (bad magic)"));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != ACTS_VERSION {
        return Err(bad(&format!("unsupported activation file version {version}")));
    }
    let dim = c.u32().ok_or_else(truncated)? as usize;
    let count = c.u32().ok_or_else(truncated)? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let pair_index = c.u32().ok_or_else(truncated)? as usize;
        let layer = c.u32().ok_or_else(truncated)? as usize;
        let polarity = match c.take(1).ok_or_else(truncated)?[0] {
            0 => Polarity::Positive,
            1 => Polarity::Negative,
            p => return Err(bad(&format!("invalid polarity byte {p}"))),
        };
        let values = (0..dim).map(|_| c.f64().ok_or_else(truncated)).collect::<Result<Vec<_>>>()?;
        let vector = Vector::new(values).map_err(|e| in_file(path, e))?;
        records.push(ActivationRecord { pair_index, layer, polarity, vector });
    }
    if c.at != bytes.len() {
        return Err(bad("trailing bytes after activation records"));
    }
    Ok(records)
}

pub fn save_activations(path: &Path, records: &[ActivationRecord]) -> Result<()> {
    write_bytes(path, &encode_activations(records)?)
}

pub fn load_activations(path: &Path) -> Result<Vec<ActivationRecord>> {
    decode_activations(path, &read_bytes(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeFile {
    pub layer: usize,
    pub dim: usize,
    pub mu_t: Vec<f64>,
    pub raw_delta_norm: f64,
    pub n_pairs: usize,
}

impl From<&Prototype> for PrototypeFile {
    fn from(p: &Prototype) -> Self {
        Self {
            layer: p.layer(),
            dim: p.dim(),
            mu_t: p.mu_t().as_slice().to_vec(),
            raw_delta_norm: p.raw_delta_norm(),
            n_pairs: p.n_pairs(),
        }
    }
}

pub fn save_prototype(path: &Path, prototype: &Prototype) -> Result<()> {
    write_json(path, &PrototypeFile::from(prototype))
}

/// Parses a prototype file and re-checks that `mu_t` is a unit vector.
pub fn load_prototype(path: &Path) -> Result<Prototype> {
    let f: PrototypeFile = serde_json::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    if f.mu_t.len() != f.dim {
        return Err(Error::format(path, format!("dim is {} but mu_t has {} entries", f.dim, f.mu_t.len())));
    }
    let mu = UnitVector::new(f.mu_t).map_err(|e| in_file(path, e))?;
    Prototype::new(f.layer, mu, f.raw_delta_norm, f.n_pairs).map_err(|e| in_file(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rotate,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntryFile {
    pub layer: usize,
    /// Resolved against the plan file's directory when relative.
    pub prototype_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub mode: Mode,
    pub entries: Vec<PlanEntryFile>,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    /// Bypasses the gate with a constant rotation strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_t: Option<f64>,
}

/// Steering parameters shared by plan files and command-line flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteerParams {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub fixed_t: Option<f64>,
}

impl SteerParams {
    pub fn intervention(&self) -> geosteer_core::Result<Intervention> {
        match (self.mode, self.fixed_t) {
            (Mode::Add, _) => Intervention::add(self.lambda),
            (Mode::Rotate, Some(t)) => Intervention::fixed(t),
            (Mode::Rotate, None) => Ok(Intervention::gated(GateParams::new(self.alpha, self.beta, self.kappa)?)),
        }
    }
}

pub fn load_plan(path: &Path) -> Result<SteeringPlan> {
    let f: PlanFile = serde_json::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut prototypes = Vec::with_capacity(f.entries.len());
    for entry in &f.entries {
        let p = load_prototype(&base.join(&entry.prototype_path))?;
        if p.layer() != entry.layer {
            return Err(Error::format(
                path,
                format!("entry layer {} points at a prototype for layer {}", entry.layer, p.layer()),
            ));
        }
        prototypes.push(p);
    }
    let params = SteerParams {
        mode: f.mode,
        alpha: f.alpha,
        beta: f.beta,
        kappa: f.kappa,
        lambda: f.lambda,
        fixed_t: f.fixed_t,
    };
    let intervention = params.intervention().map_err(|e| in_file(path, e))?;
    SteeringPlan::from_prototypes(prototypes, intervention).map_err(|e| in_file(path, e))
}

#[derive(Serialize)]
struct CanonicalEntry<'a> {
    layer: usize,
    mu_t: &'a [f64],
}

#[derive(Serialize)]
struct CanonicalPlan<'a> {
    mode: &'static str,
    alpha: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
    lambda: Option<f64>,
    fixed_t: Option<f64>,
    snap_antipodal: bool,
    entries: Vec<CanonicalEntry<'a>>,
}

/// Hex SHA-256 of the plan's canonical JSON (parameters plus every `μ_T`),
/// independent of file paths and formatting.
pub fn plan_digest(plan: &SteeringPlan) -> String {
    let (mut alpha, mut beta, mut kappa, mut lambda, mut fixed_t, mut snap) = (None, None, None, None, None, false);
    let mode = match plan.intervention() {
        Intervention::Add(a) => {
            lambda = Some(a.lambda());
            "add"
        }
        Intervention::Rotate { strength, snap_antipodal } => {
            snap = *snap_antipodal;
            match strength {
                RotationStrength::Gated(g) => {
                    (alpha, beta, kappa) = (Some(g.alpha()), Some(g.beta()), Some(g.kappa()));
                }
                RotationStrength::Fixed(t) => fixed_t = Some(*t),
            }
            "rotate"
        }
    };
    let canonical = CanonicalPlan {
        mode,
        alpha,
        beta,
        kappa,
        lambda,
        fixed_t,
        snap_antipodal: snap,
        entries: plan
            .entries()
            .iter()
            .map(|e| CanonicalEntry { layer: e.layer, mu_t: e.prototype.mu_t().as_slice() })
            .collect(),
    };
    let json = serde_json::to_vec(&canonical).expect("plain data serialises");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}
