//! The end-to-end closed-loop experiment: configuration ingestion, the
//! synthesis pipeline (bounds → gains → tightening → terminal
//! ingredients), the receding-horizon loop against the disturbed plant,
//! and Monte-Carlo tube verification.

pub mod girona;
mod log;
mod mc;
pub mod synthetic;

pub use self::log::{LogRow, StepDiagnostics, TrajectoryLog};
pub use mc::{monte_carlo_tube_check, TubeCheckReport};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crate::bounds::JacobianBounds;
use crate::dynamics::DisturbanceSignal;
use crate::error::{Error, Result};
use crate::gains::kinematic_tube_radius;
use crate::integrate::rk4_step;
use crate::kinematics::{DhRow, EulerAngles, HomogeneousTransform, TaskState, UvmsModel};
use crate::nmpc::{
    jacobian_linearize, shifted_warm_start, solve_fhocp, terminal_ingredients, FhocpConfig,
    FhocpSolution, FhocpStatus, NominalPlant, TerminalIngredients,
};
use crate::sets::{error_constraint_set, pontryagin_diff, spectral_norm, ConstraintSet};
use crate::tube::kinematic_ancillary_feedback;

/// Rigid-frame pose for model files: roll/pitch/yaw plus translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePose {
    pub rpy: [f64; 3],
    pub xyz: [f64; 3],
}

impl FramePose {
    fn to_transform(&self) -> HomogeneousTransform {
        HomogeneousTransform::from_rpy_xyz(
            &EulerAngles::new(self.rpy[0], self.rpy[1], self.rpy[2]),
            Vector3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
        )
    }
}

/// On-disk kinematic model description. Angles in radians, lengths in
/// meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub dh: Vec<DhRow>,
    #[serde(rename = "T_0B")]
    pub t_0b: FramePose,
    #[serde(rename = "T_En")]
    pub t_en: FramePose,
    pub joint_limits: Vec<[f64; 2]>,
}

impl ModelFile {
    pub fn build(&self) -> Result<UvmsModel> {
        if self.dh.len() != self.n {
            return Err(Error::Config(format!(
                "model file declares n = {} but has {} DH rows",
                self.n,
                self.dh.len()
            )));
        }
        UvmsModel::new(
            self.dh.clone(),
            self.t_0b.to_transform(),
            self.t_en.to_transform(),
            self.joint_limits.iter().map(|p| (p[0], p[1])).collect(),
        )
    }

    pub fn from_model(model: &UvmsModel) -> Self {
        let rot_to_rpy = |t: &HomogeneousTransform| {
            let e = crate::kinematics::euler_from_rotation(&t.rotation)
                .unwrap_or(EulerAngles::new(0.0, -FRAC_PI_2, 0.0));
            [e.phi, e.theta, e.psi]
        };
        ModelFile {
            n: model.joint_count(),
            dh: model.dh_rows().to_vec(),
            t_0b: FramePose {
                rpy: rot_to_rpy(model.base_transform()),
                xyz: [
                    model.base_transform().translation[0],
                    model.base_transform().translation[1],
                    model.base_transform().translation[2],
                ],
            },
            t_en: FramePose {
                rpy: rot_to_rpy(model.tool_transform()),
                xyz: [
                    model.tool_transform().translation[0],
                    model.tool_transform().translation[1],
                    model.tool_transform().translation[2],
                ],
            },
            joint_limits: model.joint_limits().iter().map(|&(l, h)| [l, h]).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub chi0: Vec<f64>,
    pub chi_des: Vec<f64>,
    /// Arm configuration used to place the vehicle at `chi0` and at the
    /// linearization equilibrium.
    pub arm_home: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactConfig {
    pub stiffness_diag: Vec<f64>,
    pub chi_eq: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintsConfig {
    /// Half-width of the task-position box around the origin.
    pub task_position_halfwidth: f64,
    /// Euclidean radius of each body-velocity block (ν₁, ν₂, q̇).
    pub velocity_ball: f64,
    /// Margin subtracted from the velocity balls for the nominal problem,
    /// reserving authority for the ancillary feedback.
    pub input_margin: f64,
    /// Certified operating bound on ‖J(𝔮̄)‖, monitored at every step.
    pub j_bar_cap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeConfig {
    pub sigma_under: f64,
    /// Cached region constants; estimated from scratch when absent.
    pub j_under: Option<f64>,
    pub l_c: Option<f64>,
    #[serde(default = "default_estimate_samples")]
    pub estimate_samples: usize,
}

fn default_estimate_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FhocpSettings {
    pub horizon: f64,
    pub dt: f64,
    pub substeps: usize,
    pub q_weight: f64,
    pub r_weight: f64,
    /// Recorded stage weight for the terminal cost as published; the
    /// synthesized Lyapunov weight is what the terminal set and cost
    /// actually use.
    pub p_weight: f64,
    #[serde(default = "default_boundary_samples")]
    pub terminal_boundary_samples: usize,
    /// Re-anchor the nominal state at the measured state every sampling
    /// instant instead of propagating it open loop.
    #[serde(default)]
    pub renominalize: bool,
}

fn default_boundary_samples() -> usize {
    1000
}

/// Full scenario description; serializable to/from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: f64,
    #[serde(default)]
    pub model_path: Option<String>,
    #[serde(default)]
    pub model: Option<ModelFile>,
    pub task: TaskConfig,
    pub contact: ContactConfig,
    pub disturbance: DisturbanceSignal,
    pub constraints: ConstraintsConfig,
    pub tube: TubeConfig,
    pub fhocp: FhocpSettings,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Model paths are relative to the config file.
        if let (Some(rel), None) = (&cfg.model_path, &cfg.model) {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let mtext = std::fs::read_to_string(base.join(rel))?;
            cfg.model = Some(toml::from_str(&mtext).map_err(|e| Error::Config(e.to_string()))?);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_model(&self) -> Result<UvmsModel> {
        match (&self.model, &self.model_path) {
            (Some(m), _) => m.build(),
            (None, Some(p)) => Err(Error::Config(format!(
                "model path `{p}` was not resolved; load the config through ScenarioConfig::load"
            ))),
            (None, None) => Ok(girona::build_girona_arm5e()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.chi0.len() != 6 || self.task.chi_des.len() != 6 {
            return Err(Error::Config("chi0 and chi_des must have 6 entries".into()));
        }
        if self.duration <= self.fhocp.horizon {
            return Err(Error::Config("duration must exceed the horizon".into()));
        }
        if self.constraints.input_margin >= self.constraints.velocity_ball {
            return Err(Error::Config(
                "input margin leaves no nominal authority".into(),
            ));
        }
        Ok(())
    }
}

/// The published grasp scenario: Girona500 + ARM 5E Micro in compliant
/// contact, 6 s run, 0.7 s horizon at 0.1 s sampling, unit stiffness,
/// 0.2-bounded sinusoidal task disturbance and velocity balls of radius 2.
pub fn section_v_config() -> ScenarioConfig {
    ScenarioConfig {
        seed: 0,
        duration: 6.0,
        model_path: None,
        model: Some(ModelFile::from_model(&girona::build_girona_arm5e())),
        task: TaskConfig {
            chi0: vec![-1.0, 1.3, -1.0, 0.0, -PI / 8.0, PI / 12.0],
            chi_des: vec![0.0, 0.0, 0.0, PI / 3.0, PI / 10.0, 0.0],
            arm_home: vec![0.47, 0.58215, -0.2835, 0.0],
        },
        contact: ContactConfig {
            stiffness_diag: vec![1.0; 6],
            chi_eq: vec![0.0; 6],
        },
        disturbance: DisturbanceSignal::Sinusoidal {
            amplitude: 0.2,
            dim: 6,
            frequency: 1.0,
            phase: 0.0,
            direction: None,
        },
        constraints: ConstraintsConfig {
            task_position_halfwidth: 4.0,
            velocity_ball: 2.0,
            input_margin: 0.5,
            j_bar_cap: 3.0,
        },
        tube: TubeConfig {
            sigma_under: 1.0,
            // Region constants of the published scenario; `bounds`
            // re-estimates them from scratch on request.
            j_under: Some(0.5095),
            l_c: Some(2.0 * 2.0_f64.sqrt()),
            estimate_samples: 10_000,
        },
        fhocp: FhocpSettings {
            horizon: 0.7,
            dt: 0.1,
            substeps: 10,
            q_weight: 0.5,
            r_weight: 0.5,
            p_weight: 0.5,
            terminal_boundary_samples: 1000,
            renominalize: false,
        },
    }
}

/// Nominal kinematic plant for the shooting solver: state `[ē; 𝔮̄]`,
/// input the body velocity.
struct KinematicPlant<'a> {
    model: &'a UvmsModel,
}

impl NominalPlant for KinematicPlant<'_> {
    fn state_dim(&self) -> usize {
        6 + self.model.pose_dim()
    }

    fn input_dim(&self) -> usize {
        self.model.pose_dim()
    }

    fn rhs(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> crate::error::Result<DVector<f64>> {
        let np = self.model.pose_dim();
        let pose = x.rows(6, np).into_owned();
        let j = self.model.task_jacobian(&pose)?;
        let e_dot = &j * u;
        let pose_dot = self.model.pose_rate(&pose, u)?;
        let mut out = DVector::zeros(6 + np);
        out.rows_mut(0, 6).copy_from(&e_dot);
        out.rows_mut(6, np).copy_from(&pose_dot);
        Ok(out)
    }
}

/// Everything the closed loop needs, synthesized once per configuration:
/// resolved bounds, tube radii, tightened constraint sets, terminal
/// ingredients and the initial poses.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub model: UvmsModel,
    pub chi_des: DVector<f64>,
    pub sigma: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub j_under: f64,
    pub l_c: f64,
    pub fhocp: FhocpConfig,
    pub ingredients: TerminalIngredients,
    pub pose0: DVector<f64>,
    /// λ_min(P) of the terminal weight.
    pub p_min_eig: f64,
}

impl Prepared {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let model = config.resolve_model()?;
        let np = model.pose_dim();
        let chi_des = DVector::from_row_slice(&config.task.chi_des);
        let chi0 = DVector::from_row_slice(&config.task.chi0);
        let q_home = DVector::from_row_slice(&config.task.arm_home);

        // Region constants: cached or estimated.
        let (j_under, l_c) = match (config.tube.j_under, config.tube.l_c) {
            (Some(j), Some(l)) => (j, l),
            _ => {
                let pose_set = girona::section_v_pose_set(&model);
                let vel_set = ConstraintSet::ball0(np, config.constraints.velocity_ball)?;
                let b = crate::bounds::estimate_jacobian_bounds(
                    &model,
                    &pose_set,
                    &vel_set,
                    config.tube.estimate_samples,
                    config.seed,
                )?;
                let lc = girona::rotation_block_lipschitz(
                    config.constraints.velocity_ball,
                    config.tube.estimate_samples,
                    config.seed,
                );
                (b.j_under, lc)
            }
        };

        let sigma_under = config.tube.sigma_under;
        let sigma = (l_c + sigma_under) / j_under;
        let w_tilde = config.disturbance.bound();
        let omega1 = kinematic_tube_radius(w_tilde, sigma_under)?;
        let omega2 = sigma * config.constraints.j_bar_cap * omega1;

        // Task box 𝒳 → error set ℰ → tightened Ē.
        let mut lo = DVector::zeros(6);
        let mut hi = DVector::zeros(6);
        for i in 0..3 {
            lo[i] = -config.constraints.task_position_halfwidth;
            hi[i] = config.constraints.task_position_halfwidth;
        }
        lo[3] = -PI;
        hi[3] = PI;
        lo[4] = -(FRAC_PI_2 - girona::PITCH_MARGIN);
        hi[4] = FRAC_PI_2 - girona::PITCH_MARGIN;
        lo[5] = -PI;
        hi[5] = PI;
        let task_set = ConstraintSet::boxed(lo, hi)?;
        let error_set = error_constraint_set(&task_set, &chi_des)?;
        let omega1_ball = ConstraintSet::ball0(6, omega1)?;
        let e_tight = pontryagin_diff(&error_set, &omega1_ball).map_err(|e| Error::RunAborted {
            t: 0.0,
            stage: "constraint tightening",
            source: Box::new(e),
        })?;

        // Virtual-input blocks tightened by the ancillary margin.
        let r_in = config.constraints.velocity_ball;
        let margin_ball3 = ConstraintSet::ball0(3, config.constraints.input_margin)?;
        let block3 = pontryagin_diff(&ConstraintSet::ball0(3, r_in)?, &margin_ball3)?;
        let nq = np - 6;
        let blockq = pontryagin_diff(
            &ConstraintSet::ball0(nq, r_in)?,
            &ConstraintSet::ball0(nq, config.constraints.input_margin)?,
        )?;
        let input_constraints = vec![(0, block3.clone()), (3, block3), (6, blockq)];

        // Pose boxes for the nominal prediction: vehicle attitude and
        // joint limits (offsets into the [ē; 𝔮̄] state).
        let mut att_lo = DVector::zeros(3);
        let mut att_hi = DVector::zeros(3);
        att_lo[0] = -PI;
        att_hi[0] = PI;
        att_lo[1] = -(FRAC_PI_2 - girona::PITCH_MARGIN);
        att_hi[1] = FRAC_PI_2 - girona::PITCH_MARGIN;
        att_lo[2] = -PI;
        att_hi[2] = PI;
        let attitude_box = ConstraintSet::boxed(att_lo, att_hi)?;
        let joint_box = ConstraintSet::boxed(
            DVector::from_iterator(nq, model.joint_limits().iter().map(|l| l.0)),
            DVector::from_iterator(nq, model.joint_limits().iter().map(|l| l.1)),
        )?;
        let state_constraints = vec![
            (0, e_tight),
            (9, attitude_box),
            (12, joint_box),
        ];

        // Terminal ingredients at the task equilibrium.
        let pose_eq = girona::pose_for_task(&model, &chi_des, &q_home)?;
        let q_mat = DMatrix::identity(6, 6) * config.fhocp.q_weight;
        let r_mat = DMatrix::identity(np, np) * config.fhocp.r_weight;
        let j_eq = model.task_jacobian(&pose_eq)?;
        let (a_lin, b_lin) = jacobian_linearize(
            |_e: &DVector<f64>, z: &DVector<f64>| Ok(&j_eq * z),
            &DVector::zeros(6),
            &DVector::zeros(np),
        )?;
        let ingredients = terminal_ingredients(
            a_lin,
            b_lin,
            &q_mat,
            &r_mat,
            &input_constraints,
            config.fhocp.terminal_boundary_samples,
            config.seed,
        )?;
        let p_min_eig = ingredients.p_min_eigenvalue();

        let fhocp = FhocpConfig {
            horizon: config.fhocp.horizon,
            dt: config.fhocp.dt,
            substeps: config.fhocp.substeps,
            cost_dim: 6,
            q: q_mat,
            r: r_mat,
            state_constraints,
            input_constraints,
            kkt_tol: 1e-6,
            feasibility_tol: 1e-6,
            max_iterations: 500,
        };

        let pose0 = girona::pose_for_task(&model, &chi0, &q_home)?;

        Ok(Self {
            config: config.clone(),
            model,
            chi_des,
            sigma,
            omega1,
            omega2,
            j_under,
            l_c,
            fhocp,
            ingredients,
            pose0,
            p_min_eig,
        })
    }

    /// Execute the closed loop against a disturbance realization.
    pub fn run(&self, disturbance: &DisturbanceSignal) -> Result<TrajectoryLog> {
        let model = &self.model;
        let np = model.pose_dim();
        let cfg = &self.config;
        let h = cfg.fhocp.dt;
        let substeps = cfg.fhocp.substeps;
        let h_int = h / substeps as f64;
        let steps = (cfg.duration / h).round() as usize;
        let chi_des = &self.chi_des;
        let plant = KinematicPlant { model };
        let velocity_full = ConstraintSet::ball0(3, cfg.constraints.velocity_ball)?;
        let velocity_full_q =
            ConstraintSet::ball0(np - 6, cfg.constraints.velocity_ball)?;

        let chi0 = DVector::from_row_slice(&cfg.task.chi0);
        let mut log = TrajectoryLog::new(np, self.summary_header());

        // Combined state: [χ; 𝔮; χ̄; 𝔮̄].
        let dim = 2 * (6 + np);
        let mut y = DVector::zeros(dim);
        y.rows_mut(0, 6).copy_from(&chi0);
        y.rows_mut(6, np).copy_from(&self.pose0);
        y.rows_mut(6 + np, 6).copy_from(&chi0);
        y.rows_mut(12 + np, np).copy_from(&self.pose0);

        let mut prev: Option<FhocpSolution> = None;
        let mut t = 0.0;

        for step in 0..steps {
            if cfg.fhocp.renominalize {
                let chi = y.rows(0, 6).into_owned();
                let pose = y.rows(6, np).into_owned();
                y.rows_mut(6 + np, 6).copy_from(&chi);
                y.rows_mut(12 + np, np).copy_from(&pose);
            }
            // Nominal optimal control from the propagated nominal state.
            let e_bar = y.rows(6 + np, 6).into_owned() - chi_des;
            let pose_bar = y.rows(12 + np, np).into_owned();
            let mut x_bar = DVector::zeros(6 + np);
            x_bar.rows_mut(0, 6).copy_from(&e_bar);
            x_bar.rows_mut(6, np).copy_from(&pose_bar);
            let warm = prev
                .as_ref()
                .map(|p| shifted_warm_start(p, &self.ingredients, 6));
            let sol = solve_fhocp(
                &plant,
                &x_bar,
                t,
                &self.fhocp,
                &self.ingredients,
                warm.as_deref(),
            )
            .map_err(|e| Error::RunAborted {
                t,
                stage: "optimal control",
                source: Box::new(e),
            })?;
            if sol.status == FhocpStatus::Infeasible {
                return Err(Error::RunAborted {
                    t,
                    stage: "optimal control",
                    source: Box::new(Error::Infeasible {
                        max_violation: sol.max_violation,
                        stage: "receding horizon".into(),
                    }),
                });
            }
            let u_bar = sol.u_seq[0].clone();
            log.diagnostics.push(StepDiagnostics {
                step,
                t,
                cost: sol.cost,
                kkt_residual: sol.kkt_residual,
                iterations: sol.iterations,
                max_violation: sol.max_violation,
                terminal_margin: sol.terminal_margin,
                status: sol.status,
            });

            // Continuous-time coupled rollout of real and nominal plants.
            let rhs = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
                let chi = yy.rows(0, 6).into_owned();
                let pose = yy.rows(6, np).into_owned();
                let chi_bar = yy.rows(6 + np, 6).into_owned();
                let pose_bar = yy.rows(12 + np, np).into_owned();
                let j_bar = model.task_jacobian(&pose_bar)?;
                let kappa =
                    kinematic_ancillary_feedback(&chi, &chi_bar, &j_bar, self.sigma)?;
                let zeta = &u_bar + &kappa;
                let dev = &chi - &chi_bar;
                let w = disturbance.eval(tt, &dev);
                let j = model.task_jacobian(&pose)?;
                let mut dy = DVector::zeros(dim);
                dy.rows_mut(0, 6).copy_from(&(&j * &zeta + w));
                dy.rows_mut(6, np)
                    .copy_from(&model.pose_rate(&pose, &zeta)?);
                dy.rows_mut(6 + np, 6).copy_from(&(&j_bar * &u_bar));
                dy.rows_mut(12 + np, np)
                    .copy_from(&model.pose_rate(&pose_bar, &u_bar)?);
                Ok(dy)
            };

            // Sample, monitor and log; the row at the interval start is
            // only written by the first step (later steps inherit it as
            // their predecessor's endpoint).
            let start_j = if step == 0 { 0 } else { 1 };
            for j in start_j..=substeps {
                if j > 0 {
                    let tj = t + (j - 1) as f64 * h_int;
                    let mut f = |tt: f64, yy: &DVector<f64>| rhs(tt, yy);
                    y = rk4_step(&mut f, tj, &y, h_int).map_err(|e| Error::RunAborted {
                        t: tj,
                        stage: "plant integration",
                        source: Box::new(e),
                    })?;
                }
                let tj = t + j as f64 * h_int;
                let chi = y.rows(0, 6).into_owned();
                let pose = y.rows(6, np).into_owned();
                let chi_bar = y.rows(6 + np, 6).into_owned();
                let pose_bar = y.rows(12 + np, np).into_owned();
                let j_bar_mat = model.task_jacobian(&pose_bar).map_err(|e| Error::RunAborted {
                    t: tj,
                    stage: "tube monitoring",
                    source: Box::new(e),
                })?;
                let kappa =
                    kinematic_ancillary_feedback(&chi, &chi_bar, &j_bar_mat, self.sigma)?;
                let zeta = &u_bar + &kappa;
                let e_dev = (&chi - &chi_bar).norm();
                let z_dev = kappa.norm();

                self.monitor(tj, &pose, &zeta, e_dev, z_dev, &j_bar_mat,
                             &velocity_full, &velocity_full_q)?;

                log.rows.push(LogRow {
                    t: tj,
                    chi,
                    chi_bar,
                    zeta: zeta.clone(),
                    u: zeta,
                    u_bar: u_bar.clone(),
                    kappa,
                    e_dev_norm: e_dev,
                    z_dev_norm: z_dev,
                    fhocp_cost: sol.cost,
                    fhocp_status: sol.status,
                });
            }
            prev = Some(sol);
            t += h;
        }
        Ok(log)
    }

    #[allow(clippy::too_many_arguments)]
    fn monitor(
        &self,
        t: f64,
        pose: &DVector<f64>,
        zeta: &DVector<f64>,
        e_dev: f64,
        z_dev: f64,
        j_bar_mat: &DMatrix<f64>,
        ball3: &ConstraintSet,
        ballq: &ConstraintSet,
    ) -> Result<()> {
        let abort = |stage: &'static str, source: Error| Error::RunAborted {
            t,
            stage,
            source: Box::new(source),
        };
        const TOL: f64 = 1e-9;
        if e_dev > self.omega1 + TOL {
            return Err(abort(
                "tube monitoring",
                Error::TubeViolation(format!(
                    "task deviation {e_dev:.6} left the tube radius {:.6}",
                    self.omega1
                )),
            ));
        }
        if z_dev > self.omega2 + TOL {
            return Err(abort(
                "tube monitoring",
                Error::TubeViolation(format!(
                    "velocity deviation {z_dev:.6} left the tube radius {:.6}",
                    self.omega2
                )),
            ));
        }
        let jn = spectral_norm(j_bar_mat);
        if jn > self.config.constraints.j_bar_cap + TOL {
            return Err(abort(
                "tube monitoring",
                Error::NumericalFailure(format!(
                    "‖J‖ = {jn:.4} exceeded the certified operating bound {}",
                    self.config.constraints.j_bar_cap
                )),
            ));
        }
        // Input constraints on the applied body velocity, blockwise.
        let nu1 = zeta.rows(0, 3).into_owned();
        let nu2 = zeta.rows(3, 3).into_owned();
        let qd = zeta.rows(6, zeta.len() - 6).into_owned();
        for (name, seg, set) in [
            ("nu1", &nu1, ball3),
            ("nu2", &nu2, ball3),
            ("qdot", &qd, ballq),
        ] {
            let v = set.violation(seg);
            if v > TOL {
                return Err(abort(
                    "input monitoring",
                    Error::InputConstraintViolation(format!(
                        "{name} block exceeds its ball by {v:.3e}"
                    )),
                ));
            }
        }
        // Pose constraints on the real system.
        if pose[4].abs() > FRAC_PI_2 - girona::PITCH_MARGIN + TOL {
            return Err(abort(
                "pose monitoring",
                Error::InvalidParameter(format!("vehicle pitch {} out of range", pose[4])),
            ));
        }
        for (i, (l, h)) in self.model.joint_limits().iter().enumerate() {
            let qi = pose[6 + i];
            if qi < l - TOL || qi > h + TOL {
                return Err(abort(
                    "pose monitoring",
                    Error::InvalidParameter(format!("joint {i} value {qi} outside [{l}, {h}]")),
                ));
            }
        }
        Ok(())
    }

    fn summary_header(&self) -> log::RunSummary {
        log::RunSummary {
            sigma: self.sigma,
            omega1: self.omega1,
            omega2: self.omega2,
            j_under: self.j_under,
            l_c: self.l_c,
            j_bar_cap: self.config.constraints.j_bar_cap,
            epsilon: self.ingredients.epsilon,
            p_min_eig: self.p_min_eig,
            dt: self.config.fhocp.dt,
            substeps: self.config.fhocp.substeps,
            chi_des: self.chi_des.iter().copied().collect(),
        }
    }

    /// Euclidean band radius of the terminal set, `ε/√λ_min(P)`.
    pub fn terminal_band(&self) -> f64 {
        self.ingredients.epsilon / self.p_min_eig.sqrt()
    }

    /// `‖ē(t)‖_P` for a logged row, used to detect terminal-set entry.
    pub fn nominal_terminal_norm(&self, row: &LogRow) -> f64 {
        let e_bar = &row.chi_bar - &self.chi_des;
        (e_bar.transpose() * &self.ingredients.p * &e_bar)[(0, 0)]
            .max(0.0)
            .sqrt()
    }
}

/// Run the full pipeline and closed loop for a configuration.
pub fn run_closed_loop(config: &ScenarioConfig) -> Result<TrajectoryLog> {
    let prepared = Prepared::new(config)?;
    prepared.run(&config.disturbance)
}

/// Report produced by the `bounds` pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub j_under: f64,
    pub j_bar: f64,
    pub j_tilde: f64,
    pub l_c: f64,
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Estimate the scenario's region constants: Jacobian statistics over the
/// operating pose box and the rotation-block Lipschitz constant. The
/// drift constants are zero at the velocity level (the plant is
/// control-affine with no drift).
pub fn estimate_scenario_bounds(
    config: &ScenarioConfig,
    samples: usize,
    seed: u64,
) -> Result<BoundsReport> {
    let model = config.resolve_model()?;
    let pose_set = girona::section_v_pose_set(&model);
    let vel_set = ConstraintSet::ball0(model.pose_dim(), config.constraints.velocity_ball)?;
    let jb: JacobianBounds =
        crate::bounds::estimate_jacobian_bounds(&model, &pose_set, &vel_set, samples, seed)?;
    let l_c = girona::rotation_block_lipschitz(config.constraints.velocity_ball, samples, seed);
    Ok(BoundsReport {
        j_under: jb.j_under,
        j_bar: jb.j_bar,
        j_tilde: jb.j_tilde,
        l_c,
        l1: 0.0,
        l2: 0.0,
        l: 0.0,
        samples,
        seed,
    })
}

/// Current task state of a pose, as a stacked 6-vector.
pub fn task_vector(model: &UvmsModel, pose: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(model.forward_kinematics(pose)?.to_dvector())
}

/// Convenience: the task state type re-exported for downstream users.
pub type Task = TaskState;
