//! Frames, Euler-angle transforms, Denavit-Hartenberg chains, forward
//! kinematics and the task-space Jacobian of a vehicle-manipulator system.
//!
//! The floating base is a 6-DoF rigid body with pose `(η₁, η₂)` (position
//! and roll/pitch/yaw per SNAME); an `n`-joint serial arm hangs off a fixed
//! base transform. The stacked pose vector is `𝔮 = [η₁; η₂; q] ∈ ℝ^(6+n)`
//! and body velocities are `ζ = [ν₁; ν₂; q̇]`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pitch values closer than this to ±π/2 (measured through |cos θ|) make
/// the Euler-rate transform singular.
pub const SINGULARITY_TOL: f64 = 1e-6;

/// Roll, pitch, yaw in radians (SNAME order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl EulerAngles {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Self { phi, theta, psi }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.phi, self.theta, self.psi)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Rotation of the body frame in the inertial frame for ZYX Euler angles:
/// `R = Rz(ψ) Ry(θ) Rx(φ)`.
pub fn euler_rotation(e: &EulerAngles) -> Matrix3<f64> {
    let (sph, cph) = e.phi.sin_cos();
    let (sth, cth) = e.theta.sin_cos();
    let (sps, cps) = e.psi.sin_cos();
    Matrix3::new(
        cth * cps,
        sph * sth * cps - sps * cph,
        sth * cph * cps + sph * sps,
        sps * cth,
        sph * sth * sps + cph * cps,
        sth * sps * cph - sph * cps,
        -sth,
        sph * cth,
        cph * cth,
    )
}

/// Transform from body angular velocity to Euler-angle rates. Singular at
/// pitch ±π/2.
pub fn euler_rate_transform(e: &EulerAngles) -> Result<Matrix3<f64>> {
    let (sph, cph) = e.phi.sin_cos();
    let (sth, cth) = e.theta.sin_cos();
    if cth.abs() <= SINGULARITY_TOL {
        return Err(Error::SingularOrientation(cth.abs()));
    }
    let tth = sth / cth;
    Ok(Matrix3::new(
        1.0,
        sph * tth,
        cph * tth,
        0.0,
        cph,
        -sph,
        0.0,
        sph / cth,
        cph / cth,
    ))
}

/// Extract ZYX Euler angles from a rotation matrix. Errors with
/// [`Error::GimbalLock`] when the pitch is within tolerance of ±π/2.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> Result<EulerAngles> {
    // |cos θ| = ‖(r11, r21)‖ for R = Rz Ry Rx.
    let cth = (r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt();
    if cth <= SINGULARITY_TOL {
        return Err(Error::GimbalLock(r[(2, 0)].abs()));
    }
    Ok(EulerAngles::new(
        r[(2, 1)].atan2(r[(2, 2)]),
        (-r[(2, 0)]).asin(),
        r[(1, 0)].atan2(r[(0, 0)]),
    ))
}

/// Skew-symmetric matrix of a 3-vector: `S(a) b = a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rigid transform with an orthonormality-checked rotation block.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl HomogeneousTransform {
    pub const ORTHONORMALITY_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > Self::ORTHONORMALITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "rotation block not orthonormal: ‖RᵀR − I‖ = {defect:.3e}"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::InvalidParameter(
                "rotation block has determinant −1 (reflection)".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from roll/pitch/yaw and a translation.
    pub fn from_rpy_xyz(rpy: &EulerAngles, xyz: Vector3<f64>) -> Self {
        Self {
            rotation: euler_rotation(rpy),
            translation: xyz,
        }
    }

    /// Composition `self ∘ other` (apply `other` first in `self`'s frame).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// One Denavit-Hartenberg row (standard distal convention). `theta_offset`
/// is added to the joint variable before evaluating the link transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn new(d: f64, a: f64, alpha: f64) -> Self {
        Self {
            d,
            a,
            alpha,
            theta_offset: 0.0,
        }
    }
}

/// Link transform for a DH row at joint angle `q_i`: rotate about z by
/// `θᵢ`, translate `d` along z, translate `a` along x, rotate `α` about x.
pub fn dh_transform(row: &DhRow, q_i: f64) -> HomogeneousTransform {
    let (sq, cq) = (q_i + row.theta_offset).sin_cos();
    let (sa, ca) = row.alpha.sin_cos();
    HomogeneousTransform {
        rotation: Matrix3::new(
            cq,
            -sq * ca,
            sq * sa,
            sq,
            cq * ca,
            -cq * sa,
            0.0,
            sa,
            ca,
        ),
        translation: Vector3::new(row.a * cq, row.a * sq, row.d),
    }
}

/// Kinematic description of the vehicle-manipulator system.
#[derive(Debug, Clone)]
pub struct UvmsModel {
    n: usize,
    dh: Vec<DhRow>,
    t_0b: HomogeneousTransform,
    t_en: HomogeneousTransform,
    joint_limits: Vec<(f64, f64)>,
}

impl UvmsModel {
    pub fn new(
        dh: Vec<DhRow>,
        t_0b: HomogeneousTransform,
        t_en: HomogeneousTransform,
        joint_limits: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if joint_limits.len() != dh.len() {
            return Err(Error::InvalidParameter(format!(
                "{} DH rows but {} joint limit pairs",
                dh.len(),
                joint_limits.len()
            )));
        }
        for (i, (lo, hi)) in joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "joint {i} limits [{lo}, {hi}] are empty or non-finite"
                )));
            }
        }
        if dh
            .iter()
            .any(|r| !(r.d.is_finite() && r.a.is_finite() && r.alpha.is_finite()))
        {
            return Err(Error::InvalidParameter("non-finite DH entry".into()));
        }
        Ok(Self {
            n: dh.len(),
            dh,
            t_0b,
            t_en,
            joint_limits,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.n
    }

    /// Pose-vector dimension `6 + n`.
    pub fn pose_dim(&self) -> usize {
        6 + self.n
    }

    pub fn dh_rows(&self) -> &[DhRow] {
        &self.dh
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    pub fn base_transform(&self) -> &HomogeneousTransform {
        &self.t_0b
    }

    pub fn tool_transform(&self) -> &HomogeneousTransform {
        &self.t_en
    }

    pub fn check_joint_limits(&self, q: &DVector<f64>) -> Result<()> {
        for (i, ((lo, hi), qi)) in self.joint_limits.iter().zip(q.iter()).enumerate() {
            if qi < lo || qi > hi {
                return Err(Error::InvalidParameter(format!(
                    "joint {i} value {qi} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn split_pose<'a>(&self, pose: &'a DVector<f64>) -> Result<(Vector3<f64>, EulerAngles, &'a [f64])> {
        if pose.len() != self.pose_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pose_dim(),
                got: pose.len(),
            });
        }
        let eta1 = Vector3::new(pose[0], pose[1], pose[2]);
        let eta2 = EulerAngles::new(pose[3], pose[4], pose[5]);
        Ok((eta1, eta2, &pose.as_slice()[6..]))
    }

    /// Frames of the arm expressed in the body frame: `T_0^B, …, T_n^B`
    /// followed by the end-effector frame `T_E^B`.
    fn body_frames(&self, q: &[f64]) -> (Vec<HomogeneousTransform>, HomogeneousTransform) {
        let mut frames = Vec::with_capacity(self.n + 1);
        let mut t = self.t_0b.clone();
        frames.push(t.clone());
        for (row, &qi) in self.dh.iter().zip(q.iter()) {
            t = t.compose(&dh_transform(row, qi));
            frames.push(t.clone());
        }
        let ee = t.compose(&self.t_en);
        (frames, ee)
    }

    /// End-effector frame in the body frame; its translation is the local
    /// end-effector position used in the task Jacobian.
    pub fn ee_in_body(&self, q: &[f64]) -> HomogeneousTransform {
        self.body_frames(q).1
    }

    /// Full homogeneous transform of the end-effector in the inertial
    /// frame. Total (no Euler extraction).
    pub fn forward_transform(&self, pose: &DVector<f64>) -> Result<HomogeneousTransform> {
        let (eta1, eta2, q) = self.split_pose(pose)?;
        let t_b_i = HomogeneousTransform {
            rotation: euler_rotation(&eta2),
            translation: eta1,
        };
        Ok(t_b_i.compose(&self.ee_in_body(q)))
    }

    /// Task-space state `(𝔭, 𝔬)`: end-effector position and ZYX Euler
    /// orientation in the inertial frame.
    pub fn forward_kinematics(&self, pose: &DVector<f64>) -> Result<TaskState> {
        let t = self.forward_transform(pose)?;
        Ok(TaskState {
            p: t.translation,
            o: euler_from_rotation(&t.rotation)?.as_vector(),
        })
    }

    /// Task Jacobian `J(𝔮) ∈ ℝ^{6×(6+n)}` mapping body velocities
    /// `ζ = [ν₁; ν₂; q̇]` to task rates `(𝔭̇, 𝔬̇)`.
    ///
    /// Row blocks: linear velocity `[R_B^I | −R_B^I S(p_ee) | R_B^I J_a1]`
    /// and Euler rates `[0 | T(𝔬) R_E^Bᵀ | T(𝔬) R_E^Bᵀ J_a2]`, with the arm
    /// columns `J_a1, J_a2` built from the DH chain in the body frame.
    pub fn task_jacobian(&self, pose: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(6, self.pose_dim());
        self.task_jacobian_into(pose, &mut j)?;
        Ok(j)
    }

    /// Allocation-free variant of [`task_jacobian`](Self::task_jacobian).
    pub fn task_jacobian_into(&self, pose: &DVector<f64>, j: &mut DMatrix<f64>) -> Result<()> {
        let (_, eta2, q) = self.split_pose(pose)?;
        if j.nrows() != 6 || j.ncols() != self.pose_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pose_dim(),
                got: j.ncols(),
            });
        }
        let r_b_i = euler_rotation(&eta2);
        let (frames, ee) = self.body_frames(q);
        let p_ee = ee.translation;
        let r_e_i = r_b_i * ee.rotation;
        let o = euler_from_rotation(&r_e_i)?;
        let rate = euler_rate_transform(&o)?;
        let r_b_e = ee.rotation.transpose();
        let rate_b_e = rate * r_b_e;

        j.fill(0.0);
        j.view_mut((0, 0), (3, 3)).copy_from(&r_b_i);
        j.view_mut((0, 3), (3, 3))
            .copy_from(&(-r_b_i * skew(&p_ee)));
        j.view_mut((3, 3), (3, 3)).copy_from(&rate_b_e);
        for i in 0..self.n {
            // Joint axis and origin of frame i−1, in body coordinates.
            let z = frames[i].rotation.column(2).into_owned();
            let col_lin = r_b_i * z.cross(&(p_ee - frames[i].translation));
            let col_ang = rate_b_e * z;
            j.view_mut((0, 6 + i), (3, 1)).copy_from(&col_lin);
            j.view_mut((3, 6 + i), (3, 1)).copy_from(&col_ang);
        }
        Ok(())
    }

    /// Pose flow `𝔮̇` induced by a body velocity: `η̇₁ = R(η₂)ν₁`,
    /// `η̇₂ = T(η₂)ν₂`, `q̇` direct.
    pub fn pose_rate(&self, pose: &DVector<f64>, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, eta2, _) = self.split_pose(pose)?;
        if zeta.len() != self.pose_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pose_dim(),
                got: zeta.len(),
            });
        }
        let rate = euler_rate_transform(&eta2)?;
        let rot = euler_rotation(&eta2);
        let mut out = DVector::zeros(self.pose_dim());
        let nu1 = Vector3::new(zeta[0], zeta[1], zeta[2]);
        let nu2 = Vector3::new(zeta[3], zeta[4], zeta[5]);
        out.fixed_rows_mut::<3>(0).copy_from(&(rot * nu1));
        out.fixed_rows_mut::<3>(3).copy_from(&(rate * nu2));
        for i in 6..self.pose_dim() {
            out[i] = zeta[i];
        }
        Ok(out)
    }

    /// Time derivative of the task Jacobian along the flow induced by `ζ`,
    /// by central differencing `J(𝔮 ± h·𝔮̇)`.
    pub fn jacobian_time_derivative(
        &self,
        pose: &DVector<f64>,
        zeta: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let qdot = self.pose_rate(pose, zeta)?;
        let h = 1e-6;
        let jp = self.task_jacobian(&(pose + &qdot * h))?;
        let jm = self.task_jacobian(&(pose - &qdot * h))?;
        Ok((jp - jm) / (2.0 * h))
    }
}

/// Task-space state: end-effector position and Euler orientation, stacked
/// as `χ = [𝔭; 𝔬] ∈ ℝ⁶`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    pub p: Vector3<f64>,
    pub o: Vector3<f64>,
}

impl TaskState {
    pub fn as_vector(&self) -> nalgebra::Vector6<f64> {
        nalgebra::Vector6::new(self.p[0], self.p[1], self.p[2], self.o[0], self.o[1], self.o[2])
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.p[0], self.p[1], self.p[2], self.o[0], self.o[1], self.o[2]])
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            p: Vector3::new(s[0], s[1], s[2]),
            o: Vector3::new(s[3], s[4], s[5]),
        }
    }
}

/// Full configuration of the system: base pose, joint angles and body
/// velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationState {
    pub eta1: Vector3<f64>,
    pub eta2: EulerAngles,
    pub q: DVector<f64>,
    pub nu1: Vector3<f64>,
    pub nu2: Vector3<f64>,
    pub qdot: DVector<f64>,
}

impl ConfigurationState {
    pub fn rest(eta1: Vector3<f64>, eta2: EulerAngles, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            eta1,
            eta2,
            q,
            nu1: Vector3::zeros(),
            nu2: Vector3::zeros(),
            qdot: DVector::zeros(n),
        }
    }

    /// Stacked pose `𝔮 = [η₁; η₂; q]`.
    pub fn pose(&self) -> DVector<f64> {
        let mut v = DVector::zeros(6 + self.q.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.eta1);
        v.fixed_rows_mut::<3>(3).copy_from(&self.eta2.as_vector());
        v.rows_mut(6, self.q.len()).copy_from(&self.q);
        v
    }

    /// Stacked body velocity `ζ = [ν₁; ν₂; q̇]`.
    pub fn velocity(&self) -> DVector<f64> {
        let mut v = DVector::zeros(6 + self.qdot.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.nu1);
        v.fixed_rows_mut::<3>(3).copy_from(&self.nu2);
        v.rows_mut(6, self.qdot.len()).copy_from(&self.qdot);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::girona::build_girona_arm5e;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euler_rotation_identity_and_yaw() {
        assert_relative_eq!(
            euler_rotation(&EulerAngles::zero()),
            Matrix3::identity(),
            epsilon = 1e-15
        );
        let r = euler_rotation(&EulerAngles::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn euler_rate_transform_values() {
        assert_relative_eq!(
            euler_rate_transform(&EulerAngles::zero()).unwrap(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
        assert!(matches!(
            euler_rate_transform(&EulerAngles::new(0.0, std::f64::consts::FRAC_PI_2, 0.0)),
            Err(Error::SingularOrientation(_))
        ));
        // Hand evaluation at (π/6, π/4, 0): tan θ = 1, 1/cos θ = √2.
        let t = euler_rate_transform(&EulerAngles::new(
            std::f64::consts::FRAC_PI_6,
            std::f64::consts::FRAC_PI_4,
            0.0,
        ))
        .unwrap();
        let s3 = 3.0_f64.sqrt() / 2.0;
        let expected = Matrix3::new(
            1.0,
            0.5,
            s3,
            0.0,
            s3,
            -0.5,
            0.0,
            0.5 * 2.0_f64.sqrt(),
            6.0_f64.sqrt() / 2.0,
        );
        assert_relative_eq!(t, expected, epsilon = 1e-12);
    }

    #[test]
    fn dh_rows_from_table() {
        // Wrist row: d = 0.29, a = 0, α = 0 at q = 0.
        let t = dh_transform(&DhRow::new(0.29, 0.0, 0.0), 0.0);
        assert_relative_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(t.translation, Vector3::new(0.0, 0.0, 0.29), epsilon = 1e-15);
        // Shoulder row: d = 0, a = 0.1, α = −π/2 maps ŷ to −ẑ.
        let t = dh_transform(
            &DhRow::new(0.0, 0.1, -std::f64::consts::FRAC_PI_2),
            0.0,
        );
        assert_relative_eq!(t.translation, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(
            t.rotation * Vector3::y(),
            -Vector3::z(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn forward_transform_home_pose() {
        // Independent oracle: hand-composed product of the fixed-angle 4×4
        // matrices of the Girona chain at η = 0, q = 0.
        let model = build_girona_arm5e();
        let pose = DVector::zeros(10);
        let t = model.forward_transform(&pose).unwrap();
        assert_relative_eq!(t.translation, Vector3::new(0.98, 0.0, 0.65), epsilon = 1e-12);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&Vector3::new(0.53, 0.0, 0.36));
        for (row, q) in model.dh_rows().iter().zip([0.0; 4]) {
            m *= dh_transform(row, q).to_matrix();
        }
        m *= model.tool_transform().to_matrix();
        assert_relative_eq!(t.to_matrix(), m, epsilon = 1e-12);
        // Home pose has the tool pitched to −π/2 exactly: extraction must
        // refuse rather than pick a branch.
        assert!(matches!(
            model.forward_kinematics(&pose),
            Err(Error::GimbalLock(_))
        ));
    }

    #[test]
    fn forward_kinematics_identity_model() {
        let model = UvmsModel::new(
            vec![],
            HomogeneousTransform::identity(),
            HomogeneousTransform::identity(),
            vec![],
        )
        .unwrap();
        let pose = DVector::from_row_slice(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let ts = model.forward_kinematics(&pose).unwrap();
        assert_relative_eq!(ts.p, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
        assert_relative_eq!(ts.o, Vector3::zeros(), epsilon = 1e-15);
        // Pure yaw.
        let pose = DVector::from_row_slice(&[1.0, 2.0, 3.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let ts = model.forward_kinematics(&pose).unwrap();
        assert_relative_eq!(ts.p, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
        assert_relative_eq!(
            ts.o,
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jacobian_identity_block_for_bare_vehicle() {
        let model = UvmsModel::new(
            vec![],
            HomogeneousTransform::identity(),
            HomogeneousTransform::identity(),
            vec![],
        )
        .unwrap();
        let j = model.task_jacobian(&DVector::zeros(6)).unwrap();
        let block = j.view((0, 0), (3, 3)).into_owned();
        assert_relative_eq!(
            block,
            nalgebra::DMatrix::<f64>::identity(3, 3),
            epsilon = 1e-15
        );
    }

    #[test]
    fn jacobian_lever_arm_sign() {
        // Bare vehicle with the tool offset 1 m along x: yawing at +1 rad/s
        // sweeps the tool toward +y, and the Jacobian block is −S(p_ee).
        let model = UvmsModel::new(
            vec![],
            HomogeneousTransform::from_rpy_xyz(&EulerAngles::zero(), Vector3::new(1.0, 0.0, 0.0)),
            HomogeneousTransform::identity(),
            vec![],
        )
        .unwrap();
        let j = model.task_jacobian(&DVector::zeros(6)).unwrap();
        let zeta = DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let v = &j * &zeta;
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-15);
    }

    fn sample_regular_pose(rng: &mut ChaCha8Rng, model: &UvmsModel) -> DVector<f64> {
        loop {
            let mut pose = DVector::zeros(model.pose_dim());
            for i in 0..3 {
                pose[i] = rng.gen_range(-2.0..2.0);
            }
            pose[3] = rng.gen_range(-3.0..3.0);
            pose[4] = rng.gen_range(-1.2..1.2);
            pose[5] = rng.gen_range(-3.0..3.0);
            for (i, (lo, hi)) in model.joint_limits().iter().enumerate() {
                pose[6 + i] = rng.gen_range(*lo..*hi);
            }
            if model.task_jacobian(&pose).is_ok() {
                return pose;
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference_of_forward_kinematics() {
        let model = build_girona_arm5e();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let pose = sample_regular_pose(&mut rng, &model);
            let zeta = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let j = model.task_jacobian(&pose).unwrap();
            let rate = model.pose_rate(&pose, &zeta).unwrap();
            let h = 1e-6;
            let fp = model
                .forward_kinematics(&(&pose + &rate * h))
                .unwrap()
                .to_dvector();
            let fm = model
                .forward_kinematics(&(&pose - &rate * h))
                .unwrap()
                .to_dvector();
            let fd = (fp - fm) / (2.0 * h);
            let analytic = &j * &zeta;
            let err = (&analytic - &fd).norm();
            assert!(
                err <= 1e-5 * (1.0 + zeta.norm()),
                "‖Jζ − FD‖ = {err:.3e} at pose {pose:?}"
            );
        }
    }

    #[test]
    fn jacobian_derivative_zero_cases() {
        let model = build_girona_arm5e();
        let mut pose = DVector::zeros(10);
        pose[6] = 0.4;
        pose[7] = 0.6;
        let zero = DVector::zeros(10);
        let jd = model.jacobian_time_derivative(&pose, &zero).unwrap();
        assert!(jd.norm() < 1e-12);
        // Pure translation leaves J untouched (no η₁ dependence).
        let mut zeta = DVector::zeros(10);
        zeta[0] = 1.0;
        zeta[2] = -0.5;
        let jd = model.jacobian_time_derivative(&pose, &zeta).unwrap();
        assert!(jd.norm() < 1e-8, "‖J̇‖ = {}", jd.norm());
    }

    #[test]
    fn jacobian_derivative_matches_integrated_flow() {
        let model = build_girona_arm5e();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pose = sample_regular_pose(&mut rng, &model);
        let zeta = DVector::from_fn(10, |_, _| rng.gen_range(-0.5..0.5));
        let jd = model.jacobian_time_derivative(&pose, &zeta).unwrap();
        // Independent route: Euler-integrate the pose flow with a larger
        // step and difference J along it.
        let h = 1e-4;
        let rate = model.pose_rate(&pose, &zeta).unwrap();
        let jp = model.task_jacobian(&(&pose + &rate * h)).unwrap();
        let jm = model.task_jacobian(&(&pose - &rate * h)).unwrap();
        let fd = (jp - jm) / (2.0 * h);
        assert!((jd - fd).norm() < 1e-5);
    }

    proptest! {
        #[test]
        fn euler_rotation_is_orthonormal(
            phi in -3.2f64..3.2,
            theta in -1.6f64..1.6,
            psi in -3.2f64..3.2,
        ) {
            let r = euler_rotation(&EulerAngles::new(phi, theta, psi));
            let defect = (r.transpose() * r - Matrix3::identity()).norm();
            prop_assert!(defect <= 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn dh_transform_is_valid_rigid_transform(
            q in -3.14f64..3.14,
            d in -1.0f64..1.0,
            a in -1.0f64..1.0,
            alpha in -3.14f64..3.14,
        ) {
            let t = dh_transform(&DhRow::new(d, a, alpha), q);
            prop_assert!(HomogeneousTransform::new(t.rotation, t.translation).is_ok());
        }

        #[test]
        fn chain_composition_is_associative(
            q1 in -1.0f64..1.0,
            q2 in -1.0f64..1.0,
            q3 in -1.0f64..1.0,
        ) {
            let rows = [
                DhRow::new(0.0, 0.1, -std::f64::consts::FRAC_PI_2),
                DhRow::new(0.0, 0.26, 0.0),
                DhRow::new(0.0, 0.09, std::f64::consts::FRAC_PI_2),
            ];
            let t1 = dh_transform(&rows[0], q1);
            let t2 = dh_transform(&rows[1], q2);
            let t3 = dh_transform(&rows[2], q3);
            let left = t1.compose(&t2).compose(&t3);
            let right = t1.compose(&t2.compose(&t3));
            prop_assert!((left.to_matrix() - right.to_matrix()).norm() <= 1e-12);
        }
    }

    #[test]
    fn orientation_rows_have_zero_linear_block() {
        let model = build_girona_arm5e();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pose = sample_regular_pose(&mut rng, &model);
            let j = model.task_jacobian(&pose).unwrap();
            assert_eq!(j.view((3, 0), (3, 3)).iter().map(|x| x.abs()).fold(0.0, f64::max), 0.0);
        }
    }
}
