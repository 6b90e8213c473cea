//! Ancillary state feedback and deviation-state bookkeeping.
//!
//! The controller applies `𝔲 = ū + κ`, where `ū` comes from the nominal
//! optimal control problem and κ is a backstepping feedback on the
//! deviations `𝔢 = e − ē` and `𝔷 = ζ − ζ̄`:
//!
//! ```text
//! 𝔯 = 𝔷 + σ J(𝔮̄)ᵀ 𝔢          κ = −k 𝔯 = −kσ J(𝔮̄)ᵀ 𝔢 − k 𝔷
//! ```
//!
//! The `−k𝔯` form is the one under which the stacked deviation
//! `𝔶 = [𝔢; 𝔯]` contracts into its invariant ball; writing the 6- and
//! (6+n)-dimensional terms the other way around does not typecheck
//! dimensionally, let alone close the Lyapunov argument.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::PlantState;
use crate::error::{Error, Result};
use crate::gains::TubeParameters;
use crate::sets::ConstraintSet;

/// Deviations between the real and nominal closed-loop states.
#[derive(Debug, Clone)]
pub struct DeviationState {
    /// Task-error deviation `𝔢 = e − ē` (equivalently `χ − χ̄`).
    pub task_dev: DVector<f64>,
    /// Velocity deviation `𝔷 = ζ − ζ̄`.
    pub velocity_dev: DVector<f64>,
    /// Backstepping auxiliary state `𝔯 = 𝔷 + σJ(𝔮̄)ᵀ𝔢`.
    pub auxiliary: DVector<f64>,
    /// Stacked `𝔶 = [𝔢; 𝔯]`.
    pub stacked: DVector<f64>,
}

impl DeviationState {
    pub fn new(
        task_dev: DVector<f64>,
        velocity_dev: DVector<f64>,
        j_nominal: &DMatrix<f64>,
        sigma: f64,
    ) -> Result<Self> {
        if j_nominal.nrows() != task_dev.len() || j_nominal.ncols() != velocity_dev.len() {
            return Err(Error::DimensionMismatch {
                expected: j_nominal.ncols(),
                got: velocity_dev.len(),
            });
        }
        let auxiliary = &velocity_dev + j_nominal.transpose() * &task_dev * sigma;
        let mut stacked = DVector::zeros(task_dev.len() + auxiliary.len());
        stacked.rows_mut(0, task_dev.len()).copy_from(&task_dev);
        stacked
            .rows_mut(task_dev.len(), auxiliary.len())
            .copy_from(&auxiliary);
        Ok(Self {
            task_dev,
            velocity_dev,
            auxiliary,
            stacked,
        })
    }
}

/// Backstepping ancillary feedback `κ = −kσJ(𝔮̄)ᵀ𝔢 − k𝔷`.
pub fn ancillary_feedback(
    e: &DVector<f64>,
    e_bar: &DVector<f64>,
    zeta: &DVector<f64>,
    zeta_bar: &DVector<f64>,
    j_nominal: &DMatrix<f64>,
    tube: &TubeParameters,
) -> Result<DVector<f64>> {
    if e.len() != e_bar.len() || zeta.len() != zeta_bar.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: e_bar.len(),
        });
    }
    let dev = DeviationState::new(e - e_bar, zeta - zeta_bar, j_nominal, tube.sigma)?;
    Ok(dev.auxiliary * (-tube.k))
}

/// First-level (kinematic) ancillary feedback, where the body velocity is
/// itself the input: `κ = −σ J(𝔮̄)ᵀ 𝔢`.
pub fn kinematic_ancillary_feedback(
    e: &DVector<f64>,
    e_bar: &DVector<f64>,
    j_nominal: &DMatrix<f64>,
    sigma: f64,
) -> Result<DVector<f64>> {
    if e.len() != e_bar.len() || j_nominal.nrows() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: j_nominal.nrows(),
            got: e.len(),
        });
    }
    Ok(j_nominal.transpose() * (e - e_bar) * (-sigma))
}

/// Compose the applied input `𝔲 = ū + κ` and assert membership in the
/// input set. Returns the input together with its constraint margin
/// (distance left before the boundary). A violation indicates the tube
/// premise failed upstream and is reported, never saturated away.
pub fn composite_input(
    u_bar: &DVector<f64>,
    kappa: &DVector<f64>,
    u_set: &ConstraintSet,
) -> Result<(DVector<f64>, f64)> {
    if u_bar.len() != kappa.len() {
        return Err(Error::DimensionMismatch {
            expected: u_bar.len(),
            got: kappa.len(),
        });
    }
    let u = u_bar + kappa;
    let violation = u_set.violation(&u);
    if violation > 0.0 {
        return Err(Error::InputConstraintViolation(format!(
            "‖ū + κ‖ exceeds the input set by {violation:.3e}"
        )));
    }
    let margin = match u_set {
        ConstraintSet::NormBall { center, radius } => radius - (&u - center).norm(),
        ConstraintSet::Box { lo, hi } => u
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min),
    };
    Ok((u, margin))
}

/// Deviation bookkeeping between the actual and nominal plant states.
pub fn deviation_update(
    actual: &PlantState,
    nominal: &PlantState,
    chi_des: &DVector<f64>,
    j_nominal: &DMatrix<f64>,
    tube: &TubeParameters,
) -> Result<DeviationState> {
    let e = actual.chi.to_dvector() - chi_des;
    let e_bar = nominal.chi.to_dvector() - chi_des;
    DeviationState::new(e - e_bar, &actual.zeta - &nominal.zeta, j_nominal, tube.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{JacobianBounds, LipschitzBounds};
    use crate::gains::tube_gains;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_tube(k_target: f64, sigma_target: f64) -> TubeParameters {
        // Gains with prescribed (k, σ) are easiest to fabricate through the
        // synthesis with hand-shaped bounds, then overwritten where the
        // test wants round numbers.
        let b = JacobianBounds {
            j_under: 1.0,
            j_bar: 1.0,
            j_tilde: 0.0,
            samples: 0,
            seed: 0,
        };
        let l = LipschitzBounds::new(sigma_target - 1.0, 0.0, 0.0);
        let mut p = tube_gains(&b, &l, 0.0, 1.0, 2.0, 2.0).unwrap();
        p.k = k_target;
        p
    }

    #[test]
    fn feedback_vanishes_on_nominal_trajectory() {
        let j = DMatrix::identity(6, 10);
        let tube = simple_tube(3.0, 2.0);
        let e = DVector::from_element(6, 0.3);
        let z = DVector::from_element(10, -0.2);
        let k = ancillary_feedback(&e, &e, &z, &z, &j, &tube).unwrap();
        assert!(k.norm() == 0.0);
    }

    #[test]
    fn feedback_hand_evaluation() {
        // k = σ = 1, J = [I₆ | 0], 𝔢 = e₁, 𝔷 = 0: κ = −Jᵀe₁, i.e. −e₁
        // padded with four zeros.
        let mut j = DMatrix::zeros(6, 10);
        for i in 0..6 {
            j[(i, i)] = 1.0;
        }
        let tube = simple_tube(1.0, 1.0);
        let mut e = DVector::zeros(6);
        e[0] = 1.0;
        let z = DVector::zeros(10);
        let kappa =
            ancillary_feedback(&e, &DVector::zeros(6), &z, &z, &j, &tube).unwrap();
        let mut expected = DVector::zeros(10);
        expected[0] = -1.0;
        assert_relative_eq!(kappa, expected, epsilon = 1e-15);
    }

    #[test]
    fn feedback_norm_triangle_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let j = DMatrix::from_fn(6, 10, |_, _| rng.gen_range(-1.0..1.0));
            let j_norm = crate::sets::spectral_norm(&j);
            let tube = simple_tube(rng.gen_range(0.5..4.0), rng.gen_range(0.5..3.0));
            let e = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let eb = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let z = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let zb = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let kappa = ancillary_feedback(&e, &eb, &z, &zb, &j, &tube).unwrap();
            let bound = tube.k * (tube.sigma * j_norm * (&e - &eb).norm() + (&z - &zb).norm());
            assert!(kappa.norm() <= bound + 1e-12);
        }
    }

    #[test]
    fn composite_passthrough_and_violation() {
        let u_set = ConstraintSet::ball0(4, 2.0).unwrap();
        let ub = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
        let (u, margin) = composite_input(&ub, &DVector::zeros(4), &u_set).unwrap();
        assert_eq!(u, ub);
        assert_relative_eq!(margin, 1.0);
        let kappa = DVector::from_row_slice(&[0.5, 0.0, 0.0, 0.0]);
        let (u, _) = composite_input(&DVector::zeros(4), &kappa, &u_set).unwrap();
        assert_eq!(u, kappa);
        let big = DVector::from_row_slice(&[1.6, 0.0, 0.0, 0.0]);
        assert!(matches!(
            composite_input(&ub, &big, &u_set),
            Err(Error::InputConstraintViolation(_))
        ));
    }

    #[test]
    fn deviation_reconstruction_and_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let j = DMatrix::from_fn(6, 10, |_, _| rng.gen_range(-1.0..1.0));
            let sigma = rng.gen_range(0.0..3.0);
            let e = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let z = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let dev = DeviationState::new(e.clone(), z.clone(), &j, sigma).unwrap();
            let reconstructed = &z + j.transpose() * &e * sigma;
            assert_relative_eq!(dev.auxiliary, reconstructed, epsilon = 1e-14);
            // ‖𝔶‖² = ‖𝔢‖² + ‖𝔯‖² exactly, by stacking.
            assert_relative_eq!(
                dev.stacked.norm_squared(),
                dev.task_dev.norm_squared() + dev.auxiliary.norm_squared(),
                epsilon = 1e-12
            );
            if sigma == 0.0 {
                assert_relative_eq!(dev.auxiliary, z, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sigma_zero_decouples() {
        let j = DMatrix::from_element(6, 10, 0.7);
        let e = DVector::from_element(6, 0.4);
        let z = DVector::from_element(10, -0.1);
        let dev = DeviationState::new(e, z.clone(), &j, 0.0).unwrap();
        assert_relative_eq!(dev.auxiliary, z, epsilon = 1e-15);
    }

    #[test]
    fn kinematic_feedback_direction() {
        let j = DMatrix::identity(6, 10);
        let mut e = DVector::zeros(6);
        e[1] = 0.5;
        let kappa = kinematic_ancillary_feedback(&e, &DVector::zeros(6), &j, 2.0).unwrap();
        let mut expected = DVector::zeros(10);
        expected[1] = -1.0;
        assert_relative_eq!(kappa, expected, epsilon = 1e-15);
    }
}
