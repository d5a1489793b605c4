//! Geodesic activation steering for decoder-only transformers.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every piece of math:
//! contrastive prototype construction, norm-preserving slerp rotation with a
//! von Mises–Fisher confidence gate, the additive baseline, a small reference
//! transformer with residual-stream hooks, likelihood-based multiple-choice
//! scoring, and the rank/norm diagnostics. File formats and the command line
//! live in the `geosteer` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod plan;
pub mod prototype;
pub mod steering;

pub use error::{Error, Result};
pub use linalg::{Matrix, SingularSpectrum, UnitVector, Vector};
pub use model::{ActivationHook, Checkpoint, HookPoint, Model, ModelConfig, TokenSequence};
pub use plan::{Intervention, PlanEntry, RotationStrength, SteeringPlan};
pub use prototype::{ActivationRecord, ContrastivePair, Polarity, Prototype};
pub use steering::{AdditionParams, GateDecision, GateParams, GateThreshold};
