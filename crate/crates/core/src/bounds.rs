//! Sampling-based estimation of the Jacobian bounds and Lipschitz
//! constants that size the tube.
//!
//! The operating region contract asks for three Jacobian quantities — a
//! lower bound `J̲` on `λ_min(J J ᵀ)`, an upper bound `J̄` on `‖J‖₂` and an
//! upper bound `J̃` on `‖J̇‖₂` — plus Lipschitz constants of the task map
//! and the drift. None of these admit closed forms for a full kinematic
//! chain, so they are estimated by Monte-Carlo sweeps with running extrema
//! followed by a gradient-free coordinate polish around the extremal
//! sample.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::UvmsModel;
use crate::sets::ConstraintSet;

/// Extremal singular-value statistics of the task Jacobian over a region.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JacobianBounds {
    /// Lower bound on `λ_min(J Jᵀ)`.
    pub j_under: f64,
    /// Upper bound on `‖J‖₂`.
    pub j_bar: f64,
    /// Upper bound on `‖J̇‖₂`.
    pub j_tilde: f64,
    pub samples: usize,
    pub seed: u64,
}

impl JacobianBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.j_under > 0.0 && self.j_bar > 0.0 && self.j_tilde >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jacobian bounds must be positive: {self:?}"
            )));
        }
        // λ_min(JJᵀ) ≤ ‖J‖₂² always.
        if self.j_under > self.j_bar.powi(2) + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "j_under = {} exceeds j_bar² = {}",
                self.j_under,
                self.j_bar.powi(2)
            )));
        }
        Ok(())
    }
}

/// Lipschitz constants of the task map (in the task state) and the drift
/// (in each of its two arguments).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LipschitzBounds {
    pub l_c: f64,
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
}

impl LipschitzBounds {
    pub fn new(l_c: f64, l1: f64, l2: f64) -> Self {
        Self {
            l_c,
            l1,
            l2,
            l: l1.max(l2),
        }
    }
}

fn per_axis_scale(set: &ConstraintSet) -> DVector<f64> {
    match set {
        ConstraintSet::NormBall { center, radius } => {
            DVector::from_element(center.len(), (*radius).max(1e-9))
        }
        ConstraintSet::Box { lo, hi } => {
            DVector::from_fn(lo.len(), |i, _| ((hi[i] - lo[i]) * 0.5).max(1e-9))
        }
    }
}

fn clamp_into(set: &ConstraintSet, x: &DVector<f64>) -> DVector<f64> {
    match set {
        ConstraintSet::NormBall { center, radius } => {
            let d = x - center;
            let n = d.norm();
            if n <= *radius {
                x.clone()
            } else {
                center + d * (*radius / n)
            }
        }
        ConstraintSet::Box { lo, hi } => {
            DVector::from_fn(lo.len(), |i, _| x[i].clamp(lo[i], hi[i]))
        }
    }
}

/// Coordinate pattern search: improve `f` around `x0` inside `set`.
/// `sign` is +1 to maximize, −1 to minimize. Returns the best value found.
fn coordinate_polish<F>(
    f: &F,
    x0: &DVector<f64>,
    set: &ConstraintSet,
    sign: f64,
    rounds: usize,
) -> f64
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let scale = per_axis_scale(set);
    let mut x = x0.clone();
    let mut best = match f(&x) {
        Some(v) => v,
        None => return f64::NEG_INFINITY * sign,
    };
    let mut step = 0.1;
    for _ in 0..rounds {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[i] += dir * step * scale[i];
                let cand = clamp_into(set, &cand);
                if let Some(v) = f(&cand) {
                    if sign * v > sign * best {
                        best = v;
                        x = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Estimate the Jacobian bounds over `pose_set`, with `velocity_set`
/// supplying the body-velocity samples that drive `J̇`.
///
/// Samples whose Jacobian evaluation degenerates (singular task
/// orientation) fall outside the operating region by construction and are
/// rejected and redrawn.
pub fn estimate_jacobian_bounds(
    model: &UvmsModel,
    pose_set: &ConstraintSet,
    velocity_set: &ConstraintSet,
    samples: usize,
    seed: u64,
) -> Result<JacobianBounds> {
    estimate_jacobian_bounds_impl(model, pose_set, velocity_set, samples, seed, true)
}

/// Raw running extrema without the local polish; monotone in the sample
/// count for a fixed seed by construction.
pub(crate) fn sampled_jacobian_extrema(
    model: &UvmsModel,
    pose_set: &ConstraintSet,
    velocity_set: &ConstraintSet,
    samples: usize,
    seed: u64,
) -> Result<JacobianBounds> {
    estimate_jacobian_bounds_impl(model, pose_set, velocity_set, samples, seed, false)
}

fn estimate_jacobian_bounds_impl(
    model: &UvmsModel,
    pose_set: &ConstraintSet,
    velocity_set: &ConstraintSet,
    samples: usize,
    seed: u64,
    polish: bool,
) -> Result<JacobianBounds> {
    if pose_set.dim() != model.pose_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.pose_dim(),
            got: pose_set.dim(),
        });
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j_under = f64::INFINITY;
    let mut j_bar = 0.0_f64;
    let mut j_tilde = 0.0_f64;
    let mut at_under = None;
    let mut at_bar = None;
    let mut at_tilde = None;

    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let max_attempts = samples.saturating_mul(100).max(1000);
    while accepted < samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::NumericalFailure(format!(
                "rejected too many singular poses ({attempts} attempts for {samples} samples)"
            )));
        }
        let pose = pose_set.sample(&mut rng);
        let zeta = velocity_set.sample(&mut rng);
        let Ok(j) = model.task_jacobian(&pose) else {
            continue;
        };
        let sv = j.singular_values();
        let smin = sv.min();
        let smax = sv.max();
        let lam = smin * smin;
        if lam < j_under {
            j_under = lam;
            at_under = Some(pose.clone());
        }
        if smax > j_bar {
            j_bar = smax;
            at_bar = Some(pose.clone());
        }
        if let Ok(jd) = model.jacobian_time_derivative(&pose, &zeta) {
            let n = crate::sets::spectral_norm(&jd);
            if n > j_tilde {
                j_tilde = n;
                at_tilde = Some((pose, zeta));
            }
        }
        accepted += 1;
    }

    // Local polish around each extremal sample.
    if !polish {
        let out = JacobianBounds {
            j_under,
            j_bar,
            j_tilde,
            samples,
            seed,
        };
        out.validate()?;
        return Ok(out);
    }
    if let Some(x0) = at_under {
        let f = |p: &DVector<f64>| {
            model.task_jacobian(p).ok().map(|j| {
                let s = j.singular_values().min();
                s * s
            })
        };
        let v = coordinate_polish(&f, &x0, pose_set, -1.0, 8);
        if v.is_finite() {
            j_under = j_under.min(v);
        }
    }
    if let Some(x0) = at_bar {
        let f = |p: &DVector<f64>| {
            model
                .task_jacobian(p)
                .ok()
                .map(|j| j.singular_values().max())
        };
        j_bar = j_bar.max(coordinate_polish(&f, &x0, pose_set, 1.0, 8));
    }
    if let Some((p0, z0)) = at_tilde {
        let f = |p: &DVector<f64>| {
            model
                .jacobian_time_derivative(p, &z0)
                .ok()
                .map(|jd| crate::sets::spectral_norm(&jd))
        };
        j_tilde = j_tilde.max(coordinate_polish(&f, &p0, pose_set, 1.0, 6));
    }

    let out = JacobianBounds {
        j_under,
        j_bar,
        j_tilde,
        samples,
        seed,
    };
    out.validate()?;
    Ok(out)
}

/// Estimate the Lipschitz constant of `x ↦ g(x, z)` over a region by
/// multi-scale difference quotients.
///
/// `sample_x` draws base points, `sample_z` the frozen second argument;
/// pair separations are drawn log-uniformly over six decades so the
/// estimate approaches the local-gradient supremum, then a coordinate
/// polish refines the best direction at the smallest scale.
pub fn lipschitz_constant<G, SX, SZ>(
    g: G,
    sample_x: SX,
    sample_z: SZ,
    domain: &ConstraintSet,
    samples: usize,
    seed: u64,
) -> f64
where
    G: Fn(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>>,
    SX: Fn(&mut ChaCha8Rng) -> DVector<f64>,
    SZ: Fn(&mut ChaCha8Rng) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = domain.dim();
    let scale = per_axis_scale(domain);
    let quotient = |x: &DVector<f64>, dir: &DVector<f64>, delta: f64, z: &DVector<f64>| -> Option<f64> {
        let x2 = clamp_into(domain, &(x + dir * delta));
        let dx = (&x2 - x).norm();
        if dx < 1e-14 {
            return None;
        }
        let g1 = g(x, z)?;
        let g2 = g(&x2, z)?;
        Some((g2 - g1).norm() / dx)
    };

    let mut best = 0.0_f64;
    let mut best_at: Option<(DVector<f64>, DVector<f64>, f64, DVector<f64>)> = None;
    for _ in 0..samples {
        let x = clamp_into(domain, &sample_x(&mut rng));
        let z = sample_z(&mut rng);
        let mut dir = DVector::from_fn(dim, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let n = dir.norm();
        if n == 0.0 {
            continue;
        }
        dir /= n;
        let delta = scale.max() * 10f64.powf(rng.gen_range(-6.0..0.0));
        if let Some(q) = quotient(&x, &dir, delta, &z) {
            if q > best {
                best = q;
                best_at = Some((x, dir, delta, z));
            }
        }
    }

    if let Some((x, mut dir, _, z)) = best_at {
        // Refine the separation direction at a small scale.
        let delta = scale.max() * 1e-5;
        let mut step = 0.5;
        for _ in 0..12 {
            let mut improved = false;
            for i in 0..dim {
                for s in [step, -step] {
                    let mut cand = dir.clone();
                    cand[i] += s;
                    let n = cand.norm();
                    if n == 0.0 {
                        continue;
                    }
                    cand /= n;
                    if let Some(q) = quotient(&x, &cand, delta, &z) {
                        if q > best {
                            best = q;
                            dir = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        // And the base point along the coordinates.
        let f = |p: &DVector<f64>| quotient(p, &dir, delta, &z);
        best = best.max(coordinate_polish(&f, &x, domain, 1.0, 6));
    }
    best
}
