//! The Girona500 + ARM 5E Micro system and its grasp-and-push scenario.

use nalgebra::{DVector, Vector3};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::bounds::lipschitz_constant;
use rand::Rng;
use crate::error::{Error, Result};
use crate::kinematics::{
    euler_from_rotation, euler_rotation, DhRow, EulerAngles, HomogeneousTransform, UvmsModel,
};
use crate::sets::ConstraintSet;

/// Vehicle pitch margin used by the operating-region boxes.
pub const PITCH_MARGIN: f64 = 0.1;

/// Kinematic description of the Girona500 AUV with the ARM 5E Micro
/// four-joint manipulator: base offset (0.53, 0, 0.36), the four DH rows
/// of the arm, and a tool frame pitched by −π/2.
pub fn build_girona_arm5e() -> UvmsModel {
    let dh = vec![
        DhRow::new(0.0, 0.1, -FRAC_PI_2),
        DhRow::new(0.0, 0.26, 0.0),
        DhRow::new(0.0, 0.09, FRAC_PI_2),
        DhRow::new(0.29, 0.0, 0.0),
    ];
    let t_0b = HomogeneousTransform::from_rpy_xyz(
        &EulerAngles::zero(),
        Vector3::new(0.53, 0.0, 0.36),
    );
    let t_en = HomogeneousTransform::from_rpy_xyz(
        &EulerAngles::new(0.0, -FRAC_PI_2, 0.0),
        Vector3::zeros(),
    );
    let limits = vec![
        (-0.52, 1.46),
        (-0.1471, 1.3114),
        (-1.297, 0.73),
        (-3.14, 3.14),
    ];
    UvmsModel::new(dh, t_0b, t_en, limits).expect("static model data is valid")
}

/// Pose box of the scenario: free roll and yaw, pitch inside
/// ±(π/2 − 0.1), joints at their limits. The position block is pinned at
/// the origin since the Jacobian does not depend on it.
pub fn section_v_pose_set(model: &UvmsModel) -> ConstraintSet {
    let n = model.joint_count();
    let mut lo = DVector::zeros(6 + n);
    let mut hi = DVector::zeros(6 + n);
    lo[3] = -PI;
    hi[3] = PI;
    lo[4] = -(FRAC_PI_2 - PITCH_MARGIN);
    hi[4] = FRAC_PI_2 - PITCH_MARGIN;
    lo[5] = -PI;
    hi[5] = PI;
    for (i, (l, h)) in model.joint_limits().iter().enumerate() {
        lo[6 + i] = *l;
        hi[6 + i] = *h;
    }
    ConstraintSet::boxed(lo, hi).expect("pose box is well formed")
}

/// Close-form vehicle placement: find `(η₁, η₂)` so the end-effector
/// reaches the task state `chi` with the arm frozen at `q`. The vehicle
/// rotation is `R_B^I = R(𝔬_des)·(R_E^B)ᵀ` and the position follows from
/// the lever arm; no Jacobian inversion is involved.
pub fn place_vehicle(
    model: &UvmsModel,
    chi: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<(Vector3<f64>, EulerAngles)> {
    if chi.len() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            got: chi.len(),
        });
    }
    model.check_joint_limits(q)?;
    let p_des = Vector3::new(chi[0], chi[1], chi[2]);
    let r_des = euler_rotation(&EulerAngles::new(chi[3], chi[4], chi[5]));
    let ee = model.ee_in_body(q.as_slice());
    let r_b_i = r_des * ee.rotation.transpose();
    let eta2 = euler_from_rotation(&r_b_i)?;
    let eta1 = p_des - r_b_i * ee.translation;
    Ok((eta1, eta2))
}

/// Assemble the stacked pose for a task state and arm configuration.
pub fn pose_for_task(
    model: &UvmsModel,
    chi: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (eta1, eta2) = place_vehicle(model, chi, q)?;
    let n = model.joint_count();
    let mut pose = DVector::zeros(6 + n);
    pose.fixed_rows_mut::<3>(0).copy_from(&eta1);
    pose.fixed_rows_mut::<3>(3).copy_from(&eta2.as_vector());
    pose.rows_mut(6, n).copy_from(q);
    Ok(pose)
}

/// Estimate the Lipschitz constant of the end-effector linear-velocity
/// map with respect to the orientation part of the task state:
/// `sup ‖(R(𝔬) − R(𝔬′))ν₁‖ / ‖𝔬 − 𝔬′‖` over the scenario's Euler box with
/// `‖ν₁‖` at the velocity bound.
///
/// This is the dominant orientation sensitivity of the task kinematics;
/// the quotient is maximal on the velocity-ball boundary, so directions
/// are sampled there.
pub fn rotation_block_lipschitz(v_max: f64, samples: usize, seed: u64) -> f64 {
    let lo = DVector::from_row_slice(&[-PI, -(FRAC_PI_2 - PITCH_MARGIN), -PI]);
    let hi = DVector::from_row_slice(&[PI, FRAC_PI_2 - PITCH_MARGIN, PI]);
    let domain = ConstraintSet::boxed(lo, hi).expect("euler box");
    let d2 = domain.clone();
    lipschitz_constant(
        |o, v| {
            let r = euler_rotation(&EulerAngles::new(o[0], o[1], o[2]));
            let nu = Vector3::new(v[0], v[1], v[2]);
            let out = r * nu;
            Some(DVector::from_row_slice(out.as_slice()))
        },
        move |rng| d2.sample(rng),
        move |rng| {
            let mut v = DVector::from_fn(3, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let n = v.norm();
            if n > 0.0 {
                v *= v_max / n;
            }
            v
        },
        &domain,
        samples,
        seed,
    )
}
