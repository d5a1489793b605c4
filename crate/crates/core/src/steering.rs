//! Per-activation interventions: the additive baseline, geodesic rotation
//! toward a prototype direction, and the vMF confidence gate that picks the
//! rotation strength.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, dot, unit_angle, UnitVector, Vector};

/// Angles at or below this are treated as already aligned; angles above
/// `π − THETA_EPS` are treated as antipodal.
pub const THETA_EPS: f64 = 1e-7;

/// Gate hyperparameters: rotation scale `alpha ∈ (0, 1]`, selectivity
/// threshold `beta ∈ [−1, 1)`, concentration `kappa > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    alpha: f64,
    beta: f64,
    kappa: f64,
}

impl GateParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidGateParams(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if !(-1.0..1.0).contains(&beta) {
            return Err(Error::InvalidGateParams(format!("beta must lie in [-1, 1), got {beta}")));
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::InvalidGateParams(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { alpha, beta, kappa })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Everything the gate computed for one activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub s_t: f64,
    pub s_h: f64,
    pub p_t: f64,
    pub p_h: f64,
    /// `p_h − p_t`, the lean toward the hallucinated pole.
    pub delta: f64,
    /// Rotation strength in `[0, 1]`.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditionParams {
    lambda: f64,
}

impl AdditionParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be finite, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Closed form for `‖h + λμ‖ / ‖h‖`.
pub fn norm_change_ratio(h: &Vector, mu: &UnitVector, lambda: f64) -> Result<f64> {
    check_dims(h.dim(), mu.dim())?;
    let sq = dot(h.as_slice(), h.as_slice());
    if sq == 0.0 {
        return Err(Error::ZeroActivation);
    }
    let along = dot(mu.as_slice(), h.as_slice());
    Ok(libm::sqrt(1.0 + (2.0 * lambda * along + lambda * lambda) / sq))
}

/// `h + λμ`, elementwise.
pub fn apply_addition(h: &Vector, mu: &UnitVector, lambda: f64) -> Result<Vector> {
    check_dims(h.dim(), mu.dim())?;
    if lambda == 0.0 {
        return Ok(h.clone());
    }
    Vector::new(h.as_slice().iter().zip(mu.as_slice()).map(|(x, m)| x + lambda * m).collect())
}

/// Rotates `h` a fraction `t` of the way along the great circle from its
/// direction to `mu_t`, then restores `‖h‖`.
pub fn slerp_rotate(h: &Vector, mu_t: &UnitVector, t: f64) -> Result<Vector> {
    check_dims(h.dim(), mu_t.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("rotation strength must lie in [0, 1], got {t}")));
    }
    let magnitude = h.norm();
    let h_hat = UnitVector::normalize(h.as_slice())?;
    let theta = unit_angle(&h_hat, mu_t)?;
    if theta <= THETA_EPS {
        return Ok(h.clone());
    }
    if theta > PI - THETA_EPS {
        return Err(Error::AntipodalDirection);
    }
    let sin_theta = libm::sin(theta);
    let a = libm::sin((1.0 - t) * theta) / sin_theta;
    let b = libm::sin(t * theta) / sin_theta;
    let dir: Vec<f64> = h_hat.as_slice().iter().zip(mu_t.as_slice()).map(|(x, m)| a * x + b * m).collect();
    // The combination is unit up to rounding; renormalising pins the norm.
    let dir = UnitVector::normalize(&dir)?;
    Vector::new(dir.as_slice().iter().map(|x| magnitude * x).collect())
}

/// Logistic function evaluated without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Two-class vMF softmax between `mu_t` and its antipode, then the
/// thresholded strength `t = clip(α (δ − β) / (1 − β), 0, 1)` for `δ > β`.
pub fn vmf_gate(h_hat: &UnitVector, mu_t: &UnitVector, params: &GateParams) -> Result<GateDecision> {
    check_dims(h_hat.dim(), mu_t.dim())?;
    let s_t = dot(mu_t.as_slice(), h_hat.as_slice()).clamp(-1.0, 1.0);
    let s_h = -s_t;
    // e^{κ s_T} / (e^{κ s_T} + e^{κ s_H}) = σ(κ (s_T − s_H)).
    let gap = params.kappa * (s_t - s_h);
    let p_t = logistic(gap);
    let p_h = logistic(-gap);
    let delta = p_h - p_t;
    let t = if delta <= params.beta {
        0.0
    } else {
        (params.alpha * (delta - params.beta) / (1.0 - params.beta)).clamp(0.0, 1.0)
    };
    Ok(GateDecision { s_t, s_h, p_t, p_h, delta, t })
}

/// `−tanh(κ s_T)`: the closed form of the gate's `δ`.
pub fn gate_tanh_identity(s_t: f64, kappa: f64) -> f64 {
    -libm::tanh(kappa * s_t)
}

/// Decision boundary of the gate on `s_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateThreshold {
    /// The gate fires exactly when `s_T` is below this value.
    Bounded(f64),
    /// `β = −1`: the boundary is at `+∞` and every state is steered.
    Ungated,
}

impl GateThreshold {
    pub fn value(&self) -> f64 {
        match self {
            GateThreshold::Bounded(v) => *v,
            GateThreshold::Ungated => f64::INFINITY,
        }
    }

    pub fn is_ungated(&self) -> bool {
        matches!(self, GateThreshold::Ungated)
    }

    /// Whether a state with alignment `s_t` is steered.
    pub fn triggers(&self, s_t: f64) -> bool {
        s_t < self.value()
    }
}

/// `−arctanh(β) / κ`.
pub fn gate_threshold(params: &GateParams) -> GateThreshold {
    if params.beta <= -1.0 || params.beta >= 1.0 {
        return GateThreshold::Ungated;
    }
    GateThreshold::Bounded(-libm::atanh(params.beta) / params.kappa)
}
