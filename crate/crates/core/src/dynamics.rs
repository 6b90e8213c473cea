//! Continuous-time plant dynamics: compliant contact forces, the
//! acceleration-level model `ζ̇ = f(χ, ζ) + 𝔲 + d`, the kinematic task map
//! `χ̇ = J(𝔮)ζ + w`, and bounded disturbance generators.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{TaskState, UvmsModel};

/// Elastic environment: exerted wrench is stiffness times deflection from
/// the undeformed equilibrium, `𝔉(χ) = K(χ − χ_eq)`.
#[derive(Debug, Clone)]
pub struct ContactModel {
    stiffness: Matrix6<f64>,
    pub chi_eq: Vector6<f64>,
}

impl ContactModel {
    pub fn new(stiffness: Matrix6<f64>, chi_eq: Vector6<f64>) -> Result<Self> {
        let sym = (stiffness + stiffness.transpose()) * 0.5;
        if (stiffness - sym).norm() > 1e-12 {
            return Err(Error::InvalidParameter(
                "stiffness matrix must be symmetric".into(),
            ));
        }
        let eigs = sym.symmetric_eigenvalues();
        if eigs.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stiffness matrix not positive definite (λ_min = {:.3e})",
                eigs.min()
            )));
        }
        Ok(Self { stiffness, chi_eq })
    }

    pub fn identity() -> Self {
        Self {
            stiffness: Matrix6::identity(),
            chi_eq: Vector6::zeros(),
        }
    }

    pub fn stiffness(&self) -> &Matrix6<f64> {
        &self.stiffness
    }
}

/// Wrench exerted by the end-effector on the environment.
pub fn contact_wrench(contact: &ContactModel, chi: &Vector6<f64>) -> Vector6<f64> {
    contact.stiffness * (chi - contact.chi_eq)
}

/// Providers for the rigid-body matrices of the acceleration-level model.
/// Every implementation must keep `M` symmetric positive definite.
pub trait DynamicsProvider: Send + Sync {
    fn mass(&self, pose: &DVector<f64>) -> DMatrix<f64>;
    fn coriolis(&self, zeta: &DVector<f64>, pose: &DVector<f64>) -> DMatrix<f64>;
    fn damping(&self, zeta: &DVector<f64>, pose: &DVector<f64>) -> DMatrix<f64>;
    fn gravity(&self, pose: &DVector<f64>) -> DVector<f64>;
}

/// Synthetic default parameters: constant diagonal inertia, an
/// energy-neutral Coriolis built from a fixed skew pattern scaled by ‖ζ‖,
/// diagonal linear-plus-quadratic drag and a constant gravity/buoyancy
/// residual. All entries are user-overridable through the parameter file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDynamics {
    pub m_diag: Vec<f64>,
    pub d_lin_diag: Vec<f64>,
    pub d_quad_diag: Vec<f64>,
    pub g_vec: Vec<f64>,
    #[serde(default = "default_coriolis_scale")]
    pub coriolis_scale: f64,
}

fn default_coriolis_scale() -> f64 {
    0.1
}

impl SyntheticDynamics {
    /// Default for a system with `n` joints: unit inertias, mild drag, a
    /// small constant buoyancy residual on heave.
    pub fn default_for(n: usize) -> Self {
        let dim = 6 + n;
        let mut g_vec = vec![0.0; dim];
        g_vec[2] = 0.05;
        Self {
            m_diag: vec![1.0; dim],
            d_lin_diag: vec![0.4; dim],
            d_quad_diag: vec![0.05; dim],
            g_vec,
            coriolis_scale: default_coriolis_scale(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m_diag.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.d_lin_diag.len() != dim || self.d_quad_diag.len() != dim || self.g_vec.len() != dim
        {
            return Err(Error::InvalidParameter(
                "dynamics parameter vectors disagree on dimension".into(),
            ));
        }
        if self.m_diag.iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidParameter(
                "inertia diagonal must be positive".into(),
            ));
        }
        if self
            .d_lin_diag
            .iter()
            .chain(self.d_quad_diag.iter())
            .any(|&d| d < 0.0)
        {
            return Err(Error::InvalidParameter(
                "drag coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

impl DynamicsProvider for SyntheticDynamics {
    fn mass(&self, _pose: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.m_diag))
    }

    fn coriolis(&self, zeta: &DVector<f64>, _pose: &DVector<f64>) -> DMatrix<f64> {
        // Fixed skew pattern W (super/sub-diagonal ±1) scaled by ‖ζ‖ keeps
        // ζᵀCζ = 0 exactly.
        let dim = self.dim();
        let s = self.coriolis_scale * zeta.norm();
        let mut c = DMatrix::zeros(dim, dim);
        for i in 0..dim - 1 {
            c[(i, i + 1)] = s;
            c[(i + 1, i)] = -s;
        }
        c
    }

    fn damping(&self, zeta: &DVector<f64>, _pose: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                self.d_lin_diag[i] + self.d_quad_diag[i] * zeta[i].abs()
            } else {
                0.0
            }
        })
    }

    fn gravity(&self, _pose: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&self.g_vec)
    }
}

/// Plant state carried through integration: task state, body velocity and
/// the pose needed to evaluate the Jacobian.
#[derive(Debug, Clone)]
pub struct PlantState {
    pub chi: TaskState,
    pub zeta: DVector<f64>,
    pub pose: DVector<f64>,
    pub t: f64,
}

/// Drift term of the acceleration-level model,
/// `f(χ, ζ) = −M⁻¹(Cζ + Dζ + g + Jᵀ𝔉(χ))`.
pub fn dynamics_drift(
    model: &UvmsModel,
    params: &dyn DynamicsProvider,
    contact: &ContactModel,
    pose: &DVector<f64>,
    chi: &Vector6<f64>,
    zeta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = params.mass(pose);
    let j = model.task_jacobian(pose)?;
    let wrench = contact_wrench(contact, chi);
    let rhs = params.coriolis(zeta, pose) * zeta
        + params.damping(zeta, pose) * zeta
        + params.gravity(pose)
        + j.transpose() * DVector::from_row_slice(wrench.as_slice());
    let chol = m.clone().cholesky().ok_or_else(|| {
        Error::NumericalFailure("mass matrix is not positive definite".into())
    })?;
    // Condition estimate from the Cholesky diagonal; refuses meaningless
    // solves rather than returning noise.
    let l = chol.l();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        dmin = dmin.min(l[(i, i)]);
        dmax = dmax.max(l[(i, i)]);
    }
    if (dmax / dmin).powi(2) > 1e12 {
        return Err(Error::NumericalFailure(format!(
            "mass matrix condition estimate {:.3e} exceeds 1e12",
            (dmax / dmin).powi(2)
        )));
    }
    Ok(-chol.solve(&rhs))
}

/// Acceleration-level right-hand side `ζ̇ = f(χ, ζ) + 𝔲 + d`.
pub fn dynamics_rhs(
    model: &UvmsModel,
    params: &dyn DynamicsProvider,
    contact: &ContactModel,
    state: &PlantState,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chi = state.chi.as_vector();
    Ok(dynamics_drift(model, params, contact, &state.pose, &chi, &state.zeta)? + u + d)
}

/// Kinematic task rate `χ̇ = J(𝔮)ζ + w`.
pub fn kinematics_rhs(
    model: &UvmsModel,
    pose: &DVector<f64>,
    zeta: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if w.len() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            got: w.len(),
        });
    }
    let j = model.task_jacobian(pose)?;
    Ok(j * zeta + w)
}

/// Bounded disturbance families. Every generator keeps `‖d(t)‖₂` at or
/// below its amplitude for all `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceSignal {
    Zero {
        dim: usize,
    },
    /// `d(t) = a·sin(ωt + φ)·û` for a unit direction `û`.
    Sinusoidal {
        amplitude: f64,
        dim: usize,
        #[serde(default = "default_frequency")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Uniform draw from the amplitude ball, held constant over `hold_dt`
    /// windows so the signal stays integrable by a fixed-step method.
    UniformRandom {
        amplitude: f64,
        dim: usize,
        #[serde(default = "default_hold")]
        hold_dt: f64,
        seed: u64,
    },
    /// Worst-direction probe: full amplitude aligned with the current
    /// deviation. Used to stress the tube bound at its Lyapunov worst case.
    Adversarial {
        amplitude: f64,
        dim: usize,
    },
}

fn default_frequency() -> f64 {
    1.0
}

fn default_hold() -> f64 {
    0.01
}

impl DisturbanceSignal {
    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSignal::Zero { dim }
            | DisturbanceSignal::Sinusoidal { dim, .. }
            | DisturbanceSignal::UniformRandom { dim, .. }
            | DisturbanceSignal::Adversarial { dim, .. } => *dim,
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            DisturbanceSignal::Zero { .. } => 0.0,
            DisturbanceSignal::Sinusoidal { amplitude, .. }
            | DisturbanceSignal::UniformRandom { amplitude, .. }
            | DisturbanceSignal::Adversarial { amplitude, .. } => *amplitude,
        }
    }

    /// Evaluate at time `t`. `deviation` feeds the adversarial probe; the
    /// open-loop kinds ignore it.
    pub fn eval(&self, t: f64, deviation: &DVector<f64>) -> DVector<f64> {
        match self {
            DisturbanceSignal::Zero { dim } => DVector::zeros(*dim),
            DisturbanceSignal::Sinusoidal {
                amplitude,
                dim,
                frequency,
                phase,
                direction,
            } => {
                let dir = match direction {
                    Some(d) => {
                        let v = DVector::from_row_slice(d);
                        let n = v.norm();
                        if n > 0.0 {
                            v / n
                        } else {
                            uniform_direction(*dim)
                        }
                    }
                    None => uniform_direction(*dim),
                };
                dir * (*amplitude * (frequency * t + phase).sin())
            }
            DisturbanceSignal::UniformRandom {
                amplitude,
                dim,
                hold_dt,
                seed,
            } => {
                // Deterministic random access per hold window.
                let k = (t / hold_dt).floor() as u64;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                let mut v = DVector::from_fn(*dim, |_, _| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let n = v.norm();
                if n > 0.0 {
                    v /= n;
                }
                v * (*amplitude * rng.gen::<f64>().powf(1.0 / *dim as f64))
            }
            DisturbanceSignal::Adversarial { amplitude, dim } => {
                let n = deviation.norm();
                if n > 1e-12 && deviation.len() == *dim {
                    deviation * (*amplitude / n)
                } else {
                    let mut v = DVector::zeros(*dim);
                    v[0] = *amplitude;
                    v
                }
            }
        }
    }
}

fn uniform_direction(dim: usize) -> DVector<f64> {
    DVector::from_element(dim, 1.0 / (dim as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::girona::build_girona_arm5e;
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn contact_wrench_matches_deflection() {
        let c = ContactModel::identity();
        let chi_eq = Vector6::zeros();
        assert_eq!(contact_wrench(&c, &chi_eq), Vector6::zeros());
        // Unit stiffness with zero equilibrium reproduces the deflection:
        // the desired wrench equals the desired task state.
        let chi = Vector6::new(0.0, 0.0, 0.0, PI / 3.0, PI / 10.0, 0.0);
        assert_relative_eq!(contact_wrench(&c, &chi), chi, epsilon = 1e-15);
        let c2 = ContactModel::new(Matrix6::identity() * 2.0, Vector6::zeros()).unwrap();
        assert_relative_eq!(contact_wrench(&c2, &chi), chi * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn stiffness_must_be_spd() {
        let mut k = Matrix6::identity();
        k[(0, 0)] = -1.0;
        assert!(ContactModel::new(k, Vector6::zeros()).is_err());
    }

    #[test]
    fn drift_vanishes_without_forces() {
        let model = build_girona_arm5e();
        let mut params = SyntheticDynamics::default_for(4);
        params.g_vec = vec![0.0; 10];
        let contact = ContactModel::identity();
        let mut pose = DVector::zeros(10);
        pose[7] = 0.5;
        let chi = Vector6::zeros(); // χ = χ_eq
        let zeta = DVector::zeros(10);
        let f = dynamics_drift(&model, &params, &contact, &pose, &chi, &zeta).unwrap();
        assert!(f.norm() < 1e-14);
    }

    #[test]
    fn rhs_cancellation_and_oracle() {
        let model = build_girona_arm5e();
        let params = SyntheticDynamics::default_for(4);
        let contact = ContactModel::identity();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut pose = DVector::from_fn(10, |_, _| rng.gen_range(-0.5..0.5));
            for (i, (lo, hi)) in model.joint_limits().iter().enumerate() {
                pose[6 + i] = rng.gen_range(*lo..*hi);
            }
            let zeta = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let chi = Vector6::from_fn(|i, _| rng.gen_range(-0.5..0.5) + if i == 4 { 0.0 } else { 0.0 });
            let state = PlantState {
                chi: TaskState::from_slice(chi.as_slice()),
                zeta: zeta.clone(),
                pose: pose.clone(),
                t: 0.0,
            };
            let drift = dynamics_drift(&model, &params, &contact, &pose, &chi, &zeta).unwrap();
            // u = −f cancels the drift exactly.
            let r = dynamics_rhs(&model, &params, &contact, &state, &(-&drift), &DVector::zeros(10))
                .unwrap();
            assert!(r.norm() < 1e-12);
            // Independent dense-solve oracle with an explicit inverse.
            let m = params.mass(&pose);
            let j = model.task_jacobian(&pose).unwrap();
            let wrench = contact_wrench(&contact, &chi);
            let total = params.coriolis(&zeta, &pose) * &zeta
                + params.damping(&zeta, &pose) * &zeta
                + params.gravity(&pose)
                + j.transpose() * DVector::from_row_slice(wrench.as_slice());
            let oracle = -(m.try_inverse().unwrap() * total);
            assert!((oracle - drift).norm() < 1e-10);
        }
    }

    #[test]
    fn kinematic_rhs_literal_disturbance() {
        let model = build_girona_arm5e();
        let mut pose = DVector::zeros(10);
        pose[7] = 0.6; // keep clear of the tool gimbal at home
        let zeta = DVector::zeros(10);
        let t = FRAC_PI_2;
        let w = DVector::from_element(6, 0.2 * t.sin());
        let out = kinematics_rhs(&model, &pose, &zeta, &w).unwrap();
        assert_relative_eq!(out.norm(), 0.2 * 6.0_f64.sqrt(), epsilon = 1e-12);
        for i in 0..6 {
            assert_relative_eq!(out[i], 0.2, epsilon = 1e-12);
        }
        let zero = kinematics_rhs(&model, &pose, &zeta, &DVector::zeros(6)).unwrap();
        assert!(zero.norm() < 1e-15);
    }

    #[test]
    fn kinematic_rhs_matches_jacobian_product() {
        let model = build_girona_arm5e();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut pose = DVector::from_fn(10, |_, _| rng.gen_range(-0.4..0.4));
        for (i, (lo, hi)) in model.joint_limits().iter().enumerate() {
            pose[6 + i] = rng.gen_range(*lo..*hi);
        }
        let zeta = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let w = DVector::from_fn(6, |_, _| rng.gen_range(-0.1..0.1));
        let out = kinematics_rhs(&model, &pose, &zeta, &w).unwrap();
        let oracle = model.task_jacobian(&pose).unwrap() * &zeta + &w;
        assert!((out - oracle).norm() < 1e-14);
    }

    #[test]
    fn disturbance_generators_respect_bound() {
        let signals = [
            DisturbanceSignal::Zero { dim: 6 },
            DisturbanceSignal::Sinusoidal {
                amplitude: 0.2,
                dim: 6,
                frequency: 1.0,
                phase: 0.3,
                direction: None,
            },
            DisturbanceSignal::Sinusoidal {
                amplitude: 0.2,
                dim: 6,
                frequency: 2.5,
                phase: 0.0,
                direction: Some(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            },
            DisturbanceSignal::UniformRandom {
                amplitude: 0.2,
                dim: 6,
                hold_dt: 0.01,
                seed: 11,
            },
            DisturbanceSignal::Adversarial {
                amplitude: 0.2,
                dim: 6,
            },
        ];
        let dev = DVector::from_row_slice(&[0.1, -0.2, 0.05, 0.0, 0.0, 0.1]);
        for s in &signals {
            for k in 0..2000 {
                let t = k as f64 * 0.005;
                let d = s.eval(t, &dev);
                assert!(
                    d.norm() <= s.bound() + 1e-12,
                    "‖d({t})‖ = {} exceeds {}",
                    d.norm(),
                    s.bound()
                );
            }
        }
    }

    #[test]
    fn uniform_random_is_deterministic_and_held() {
        let s = DisturbanceSignal::UniformRandom {
            amplitude: 0.2,
            dim: 6,
            hold_dt: 0.01,
            seed: 5,
        };
        let z = DVector::zeros(6);
        assert_eq!(s.eval(0.002, &z), s.eval(0.009, &z));
        assert_eq!(s.eval(0.013, &z), s.eval(0.013, &z));
        assert_ne!(s.eval(0.002, &z), s.eval(0.013, &z));
    }

    #[test]
    fn default_damping_dissipates() {
        let params = SyntheticDynamics::default_for(4);
        let pose = DVector::zeros(10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = DVector::from_fn(10, |_, _| rng.gen_range(-3.0..3.0));
            let d = params.damping(&z, &pose);
            assert!(z.dot(&(&d * &z)) >= 0.0);
        }
    }

    #[test]
    fn coriolis_is_energy_neutral() {
        let params = SyntheticDynamics::default_for(4);
        let pose = DVector::zeros(10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z = DVector::from_fn(10, |_, _| rng.gen_range(-3.0..3.0));
            let c = params.coriolis(&z, &pose);
            assert!(z.dot(&(&c * &z)).abs() < 1e-12);
        }
    }
}
