//! Steering plans and the hooks that carry them into a forward pass.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{UnitVector, Vector};
use crate::model::{ActivationHook, HookList, HookPoint};
use crate::prototype::Prototype;
use crate::steering::{apply_addition, slerp_rotate, vmf_gate, AdditionParams, GateDecision, GateParams};

/// How the rotation strength `t` is chosen for a rotate plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationStrength {
    /// Per-token strength from the vMF gate.
    Gated(GateParams),
    /// The same `t ∈ [0, 1]` for every token; the gate is bypassed.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intervention {
    Rotate {
        strength: RotationStrength,
        /// Map an antipodal activation to `‖h‖ · μ_T` instead of failing.
        snap_antipodal: bool,
    },
    Add(AdditionParams),
}

impl Intervention {
    pub fn gated(params: GateParams) -> Self {
        Intervention::Rotate { strength: RotationStrength::Gated(params), snap_antipodal: false }
    }

    pub fn fixed(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidPlan(format!("fixed rotation strength must lie in [0, 1], got {t}")));
        }
        Ok(Intervention::Rotate { strength: RotationStrength::Fixed(t), snap_antipodal: false })
    }

    pub fn add(lambda: f64) -> Result<Self> {
        Ok(Intervention::Add(AdditionParams::new(lambda)?))
    }
}

/// Applies one intervention to a single activation.
///
/// Rotate mode normalises, gates (unless the strength is fixed) and rotates;
/// `t = 0` returns `h` untouched. Add mode is ungated `h + λμ`.
pub fn intervene(
    h: &Vector,
    prototype: &Prototype,
    intervention: &Intervention,
) -> Result<(Vector, Option<GateDecision>)> {
    let mu_t = prototype.mu_t();
    if h.dim() != mu_t.dim() {
        return Err(Error::DimMismatch { expected: mu_t.dim(), found: h.dim() });
    }
    match intervention {
        Intervention::Add(params) => Ok((apply_addition(h, mu_t, params.lambda())?, None)),
        Intervention::Rotate { strength, snap_antipodal } => {
            let (t, decision) = match strength {
                RotationStrength::Fixed(t) => (*t, None),
                RotationStrength::Gated(params) => {
                    let h_hat = UnitVector::normalize(h.as_slice())?;
                    let d = vmf_gate(&h_hat, mu_t, params)?;
                    (d.t, Some(d))
                }
            };
            if t == 0.0 {
                return Ok((h.clone(), decision));
            }
            match slerp_rotate(h, mu_t, t) {
                Err(Error::AntipodalDirection) if *snap_antipodal => {
                    let n = h.norm();
                    Ok((Vector::new(mu_t.as_slice().iter().map(|m| n * m).collect())?, decision))
                }
                other => Ok((other?, decision)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub layer: usize,
    pub prototype: Prototype,
}

/// Intervened layers with their prototypes and one shared intervention.
/// Entries are kept sorted by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringPlan {
    entries: Vec<PlanEntry>,
    intervention: Intervention,
}

impl SteeringPlan {
    pub fn new(mut entries: Vec<PlanEntry>, intervention: Intervention) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidPlan("a plan needs at least one layer".into()));
        }
        entries.sort_by_key(|e| e.layer);
        if entries.windows(2).any(|w| w[0].layer == w[1].layer) {
            return Err(Error::InvalidPlan("plan layers must be distinct".into()));
        }
        let dim = entries[0].prototype.dim();
        if let Some(e) = entries.iter().find(|e| e.prototype.dim() != dim) {
            return Err(Error::DimMismatch { expected: dim, found: e.prototype.dim() });
        }
        if let Intervention::Rotate { strength: RotationStrength::Fixed(t), .. } = intervention {
            Intervention::fixed(t)?;
        }
        Ok(Self { entries, intervention })
    }

    /// One entry per prototype, each at the prototype's own layer.
    pub fn from_prototypes(prototypes: Vec<Prototype>, intervention: Intervention) -> Result<Self> {
        let entries = prototypes.into_iter().map(|p| PlanEntry { layer: p.layer(), prototype: p }).collect();
        Self::new(entries, intervention)
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn intervention(&self) -> &Intervention {
        &self.intervention
    }

    /// `K`, the number of intervened layers.
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn layers(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.layer).collect()
    }

    pub fn entry(&self, layer: usize) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.layer == layer)
    }

    /// Same layers and prototypes with a different intervention.
    pub fn with_intervention(&self, intervention: Intervention) -> Result<Self> {
        Self::new(self.entries.clone(), intervention)
    }

    /// Hooks steering positions `from_position..`; earlier positions pass
    /// through unchanged.
    pub fn hooks(&self, from_position: usize) -> HookList<'_> {
        self.hooks_where(from_position, |_| true)
    }

    pub(crate) fn hooks_where(&self, from_position: usize, keep: impl Fn(usize) -> bool) -> HookList<'_> {
        self.entries
            .iter()
            .filter(|e| keep(e.layer))
            .map(|e| {
                let hook = LayerSteer { prototype: &e.prototype, intervention: &self.intervention, from_position };
                (HookPoint::post_block(e.layer), Box::new(hook) as Box<dyn ActivationHook + '_>)
            })
            .collect()
    }
}

/// The hook form of [`intervene`] for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerSteer<'a> {
    pub prototype: &'a Prototype,
    pub intervention: &'a Intervention,
    pub from_position: usize,
}

impl ActivationHook for LayerSteer<'_> {
    fn apply(&self, _: HookPoint, position: usize, activation: &Vector) -> Result<Vector> {
        if position < self.from_position {
            return Ok(activation.clone());
        }
        Ok(intervene(activation, self.prototype, self.intervention)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn proto(layer: usize, xs: &[f64]) -> Prototype {
        Prototype::new(layer, UnitVector::normalize(xs).unwrap(), 1.0, 1).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn near_one_beta_leaves_activation_alone() {
        let p = proto(0, &[1.0, 0.0, 0.0]);
        let gate = GateParams::new(0.5, 0.999, 20.0).unwrap();
        let h = v(&[0.2, 0.9, -0.4]);
        let (out, d) = intervene(&h, &p, &Intervention::gated(gate)).unwrap();
        assert!(d.unwrap().delta <= 0.999);
        assert_eq!(out, h);
    }

    #[test]
    fn aligned_activation_is_not_steered() {
        let p = proto(0, &[0.0, 1.0]);
        let gate = GateParams::new(1.0, -0.999_999, 20.0).unwrap();
        let h = v(&[0.0, 3.0]);
        let (out, d) = intervene(&h, &p, &Intervention::gated(gate)).unwrap();
        assert_eq!(d.unwrap().t, 0.0);
        assert_eq!(out, h);
    }

    #[test]
    fn zero_lambda_is_identity() {
        let p = proto(0, &[0.0, 1.0]);
        let h = v(&[-0.0, 3.0]);
        let (out, d) = intervene(&h, &p, &Intervention::add(0.0).unwrap()).unwrap();
        assert!(d.is_none());
        assert_eq!(out.as_slice()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn snap_handles_antipode() {
        let p = proto(0, &[1.0, 0.0]);
        let h = v(&[-2.0, 0.0]);
        let strict = Intervention::fixed(0.5).unwrap();
        assert_eq!(intervene(&h, &p, &strict), Err(Error::AntipodalDirection));
        let snap = Intervention::Rotate { strength: RotationStrength::Fixed(0.5), snap_antipodal: true };
        assert_eq!(intervene(&h, &p, &snap).unwrap().0.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn plan_validation() {
        let i = Intervention::fixed(1.0).unwrap();
        assert!(SteeringPlan::new(vec![], i).is_err());
        let dup = vec![
            PlanEntry { layer: 1, prototype: proto(1, &[1.0, 0.0]) },
            PlanEntry { layer: 1, prototype: proto(1, &[0.0, 1.0]) },
        ];
        assert!(SteeringPlan::new(dup, i).is_err());
        let mixed = vec![
            PlanEntry { layer: 1, prototype: proto(1, &[1.0, 0.0]) },
            PlanEntry { layer: 2, prototype: proto(2, &[0.0, 1.0, 0.0]) },
        ];
        assert!(matches!(SteeringPlan::new(mixed, i), Err(Error::DimMismatch { .. })));
        assert!(Intervention::fixed(1.5).is_err());
        let plan = SteeringPlan::from_prototypes(vec![proto(3, &[1.0, 1.0]), proto(0, &[1.0, 0.0])], i).unwrap();
        assert_eq!(plan.layers(), vec![0, 3]);
        assert_eq!(plan.k(), 2);
    }
}
