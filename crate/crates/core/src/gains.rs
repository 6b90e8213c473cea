//! Ancillary-feedback gain synthesis and constraint tightening.
//!
//! Given region bounds (J̲, J̄, J̃, Lipschitz constants) and a disturbance
//! bound d̃, the gain recipe fixes σ from the contraction requirement and
//! then picks ρ and k with multiplicative safety margins over their strict
//! inequalities:
//!
//! ```text
//! σ  = (L_c + σ̲)/J̲            Λ₁ = L + J̄ + σ(L_c + J̃)
//! ρ  > Λ₁/(4σ̲)                Λ₂ = L + σJ̄²
//! k  > ρΛ₁ + Λ₂
//! α₁ = σ̲ − Λ₁/(4ρ) > 0        α₂ = k − ρΛ₁ − Λ₂ > 0
//! ω₁ = d̃/min{α₁, α₂}          ω₂ = 2d̃/(J̄·min{α₁, α₂})
//! ```
//!
//! The balls of radius ω₁ and ω₂ are invariant for the closed-loop
//! deviation states, and the constraint sets of the nominal optimal
//! control problem are eroded by them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{JacobianBounds, LipschitzBounds};
use crate::error::{Error, Result};
use crate::sets::{matrix_set_multiply, minkowski_sum, pontryagin_diff, ConstraintSet};

/// Synthesized tube parameters: gains, intermediate constants and the
/// invariant-ball radii.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TubeParameters {
    pub sigma_under: f64,
    pub sigma: f64,
    pub rho: f64,
    pub k: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub omega1_radius: f64,
    pub omega2_radius: f64,
    pub d_tilde: f64,
    /// Jacobian norm bound the gains were synthesized against; reused by
    /// the input-tightening map.
    pub j_bar: f64,
}

impl TubeParameters {
    /// Verify the defining equalities and strict inequalities.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleGains(msg));
        if !(self.sigma_under > 0.0) {
            return fail(format!("sigma_under = {} must be > 0", self.sigma_under));
        }
        if !(self.rho > self.lambda1 / (4.0 * self.sigma_under)) {
            return fail(format!(
                "rho = {} must exceed Λ₁/(4σ̲) = {}",
                self.rho,
                self.lambda1 / (4.0 * self.sigma_under)
            ));
        }
        if !(self.k > self.rho * self.lambda1 + self.lambda2) {
            return fail(format!(
                "k = {} must exceed ρΛ₁ + Λ₂ = {}",
                self.k,
                self.rho * self.lambda1 + self.lambda2
            ));
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return fail(format!(
                "alpha1 = {}, alpha2 = {} must both be positive",
                self.alpha1, self.alpha2
            ));
        }
        if !(self.omega1_radius.is_finite() && self.omega2_radius.is_finite()) {
            return fail("tube radii are not finite".into());
        }
        Ok(())
    }

    pub fn min_alpha(&self) -> f64 {
        self.alpha1.min(self.alpha2)
    }
}

/// Synthesize tube gains from region bounds with multiplicative margins
/// (> 1) over the strict inequalities.
pub fn tube_gains(
    bounds: &JacobianBounds,
    lips: &LipschitzBounds,
    d_tilde: f64,
    sigma_under: f64,
    rho_margin: f64,
    k_margin: f64,
) -> Result<TubeParameters> {
    bounds.validate()?;
    if sigma_under <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma_under must be > 0, got {sigma_under}"
        )));
    }
    if rho_margin <= 1.0 || k_margin <= 1.0 {
        return Err(Error::InvalidParameter(
            "rho_margin and k_margin must exceed 1".into(),
        ));
    }
    if d_tilde < 0.0 {
        return Err(Error::InvalidParameter("d_tilde must be >= 0".into()));
    }
    let sigma = (lips.l_c + sigma_under) / bounds.j_under;
    let lambda1 = lips.l + bounds.j_bar + sigma * (lips.l_c + bounds.j_tilde);
    let lambda2 = lips.l + sigma * bounds.j_bar.powi(2);
    let rho = rho_margin * lambda1 / (4.0 * sigma_under);
    let k = k_margin * (rho * lambda1 + lambda2);
    let alpha1 = sigma_under - lambda1 / (4.0 * rho);
    let alpha2 = k - rho * lambda1 - lambda2;
    let min_alpha = alpha1.min(alpha2);
    let (omega1, omega2) = if d_tilde == 0.0 {
        (0.0, 0.0)
    } else {
        (
            d_tilde / min_alpha,
            2.0 * d_tilde / (bounds.j_bar * min_alpha),
        )
    };
    let params = TubeParameters {
        sigma_under,
        sigma,
        rho,
        k,
        lambda1,
        lambda2,
        alpha1,
        alpha2,
        omega1_radius: omega1,
        omega2_radius: omega2,
        d_tilde,
        j_bar: bounds.j_bar,
    };
    params.validate()?;
    Ok(params)
}

/// Erode the task-error, velocity and input constraint sets by the tube
/// cross-sections: `Ē = ℰ ⊖ Ω₁`, `Z̄ = 𝒵 ⊖ Ω₂`, and the input set by the
/// image of `Ω₁ × Ω₂` under `diag(−kI, −kσJ̄I)` collapsed into input space.
pub fn tighten_constraints(
    e_set: &ConstraintSet,
    z_set: &ConstraintSet,
    u_set: &ConstraintSet,
    tube: &TubeParameters,
) -> Result<(ConstraintSet, ConstraintSet, ConstraintSet)> {
    tube.validate()?;
    let omega1 = ConstraintSet::ball0(e_set.dim(), tube.omega1_radius)?;
    let omega2 = ConstraintSet::ball0(z_set.dim(), tube.omega2_radius)?;
    let e_bar = pontryagin_diff(e_set, &omega1)
        .map_err(|e| stage_tag(e, "task-error tightening"))?;
    let z_bar = pontryagin_diff(z_set, &omega2)
        .map_err(|e| stage_tag(e, "velocity tightening"))?;

    // Блock images of the feedback map; each is a ball, and their sum
    // bounds the ancillary input authority.
    let m1 = DMatrix::from_diagonal(&DVector::from_element(e_set.dim(), -tube.k));
    let img1 = matrix_set_multiply(&m1, &omega1)?;
    let m2 = DMatrix::from_diagonal(&DVector::from_element(
        z_set.dim(),
        -tube.k * tube.sigma * tube.j_bar,
    ));
    let img2 = matrix_set_multiply(&m2, &omega2)?;
    let r1 = match &img1 {
        ConstraintSet::NormBall { radius, .. } => *radius,
        _ => unreachable!(),
    };
    let r2 = match &img2 {
        ConstraintSet::NormBall { radius, .. } => *radius,
        _ => unreachable!(),
    };
    let feedback_image = minkowski_sum(
        &ConstraintSet::ball0(u_set.dim(), r1)?,
        &ConstraintSet::ball0(u_set.dim(), r2)?,
    )?;
    let u_bar = pontryagin_diff(u_set, &feedback_image)
        .map_err(|e| stage_tag(e, "input tightening"))?;
    Ok((e_bar, z_bar, u_bar))
}

fn stage_tag(e: Error, stage: &str) -> Error {
    match e {
        Error::EmptyResult(msg) => Error::EmptyResult(format!("{stage}: {msg}")),
        other => other,
    }
}

/// Invariant-ball radius for the kinematic-level tube, where the body
/// velocity is the (virtual) input and the contraction-consistent margin
/// is σ̲ = σJ̲ − L_c: the deviation settles inside `‖𝔢‖ ≤ w̃/σ̲`.
pub fn kinematic_tube_radius(w_tilde: f64, sigma_under: f64) -> Result<f64> {
    if sigma_under <= 0.0 {
        return Err(Error::InfeasibleGains(format!(
            "kinematic contraction margin must be positive, got {sigma_under}"
        )));
    }
    if w_tilde < 0.0 {
        return Err(Error::InvalidParameter("w_tilde must be >= 0".into()));
    }
    Ok(w_tilde / sigma_under)
}

/// Cross-check of a kinematic tube radius under two published readings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KinematicRadiusCrossCheck {
    /// `w̃/(σJ̲ + L_c)`: the sum-denominator reading.
    pub sum_reading: f64,
    /// `σJ̲ − L_c`: the contraction margin implied by the Lyapunov
    /// derivation; the certified radius is `w̃/(σJ̲ − L_c)` and only exists
    /// when this is positive.
    pub contraction_margin: f64,
    /// `w̃/(σJ̲ − L_c)` when the margin is positive.
    pub contraction_reading: Option<f64>,
}

/// Evaluate both readings of the kinematic radius arithmetic for a given
/// gain σ. The two agree only when L_c is negligible; for gain sets with
/// σJ̲ ≤ L_c the contraction-consistent radius does not exist at all.
pub fn kinematic_radius_cross_check(
    w_tilde: f64,
    sigma: f64,
    j_under: f64,
    l_c: f64,
) -> KinematicRadiusCrossCheck {
    let contraction_margin = sigma * j_under - l_c;
    KinematicRadiusCrossCheck {
        sum_reading: w_tilde / (sigma * j_under + l_c),
        contraction_margin,
        contraction_reading: (contraction_margin > 0.0).then(|| w_tilde / contraction_margin),
    }
}
