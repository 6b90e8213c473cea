//! Acceleration-level testbed on a bare vehicle with synthetic rigid-body
//! parameters.
//!
//! With an identity base and tool frame the task state coincides with the
//! vehicle pose, so the drift `f(χ, ζ)` and the task map `J(𝔮)ζ` are
//! genuine functions of the task state and every deviation quantity of
//! the two-layer tube analysis is directly computable. This is where the
//! full synthesis chain — region bounds, Lipschitz constants, gain
//! synthesis, rigorous constraint tightening (including the input
//! erosion) and terminal ingredients — runs end to end without any of the
//! compromises the redundant-arm scenario needs.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::bounds::{estimate_jacobian_bounds, lipschitz_constant, JacobianBounds, LipschitzBounds};
use crate::dynamics::{dynamics_drift, ContactModel, DisturbanceSignal, SyntheticDynamics};
use crate::error::{Error, Result};
use crate::gains::{tighten_constraints, tube_gains, TubeParameters};
use crate::integrate::rk4_step;
use crate::kinematics::{HomogeneousTransform, UvmsModel};
use crate::nmpc::{
    jacobian_linearize, shifted_warm_start, solve_fhocp, terminal_ingredients, FhocpConfig,
    FhocpSolution, FhocpStatus, NominalPlant, TerminalIngredients,
};
use crate::sets::{error_constraint_set, ConstraintSet};
use crate::tube::{ancillary_feedback, composite_input};

/// Bare 6-DoF vehicle: no arm, identity base and tool frames.
pub fn build_vehicle_model() -> UvmsModel {
    UvmsModel::new(
        vec![],
        HomogeneousTransform::identity(),
        HomogeneousTransform::identity(),
        vec![],
    )
    .expect("identity model is valid")
}

/// Region and task description of the testbed.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub chi_des: DVector<f64>,
    pub task_halfwidth: DVector<f64>,
    pub velocity_radius: f64,
    pub input_radius: f64,
    pub d_tilde: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            chi_des: DVector::from_row_slice(&[0.1, 0.0, 0.05, 0.0, 0.05, 0.0]),
            task_halfwidth: DVector::from_row_slice(&[0.6, 0.6, 0.6, 0.45, 0.4, 0.45]),
            velocity_radius: 0.8,
            input_radius: 25.0,
            d_tilde: 0.005,
        }
    }
}

/// Synthesized pipeline artifacts for the testbed.
pub struct SyntheticPipeline {
    pub scenario: SyntheticScenario,
    pub model: UvmsModel,
    pub params: SyntheticDynamics,
    pub contact: ContactModel,
    /// Equilibrium input compensating the steady contact wrench.
    pub u_eq: DVector<f64>,
    pub bounds: JacobianBounds,
    pub lips: LipschitzBounds,
    pub tube: TubeParameters,
    pub e_tight: ConstraintSet,
    pub z_tight: ConstraintSet,
    /// Physical tightened input set.
    pub u_tight: ConstraintSet,
    pub u_full: ConstraintSet,
    pub ingredients: TerminalIngredients,
    pub fhocp: FhocpConfig,
}

struct VehiclePlant<'a> {
    pipeline: &'a SyntheticPipeline,
}

impl VehiclePlant<'_> {
    fn drift(&self, chi: &DVector<f64>, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        let chi6 = Vector6::from_row_slice(chi.as_slice());
        dynamics_drift(
            &self.pipeline.model,
            &self.pipeline.params,
            &self.pipeline.contact,
            chi,
            &chi6,
            zeta,
        )
    }
}

impl NominalPlant for VehiclePlant<'_> {
    fn state_dim(&self) -> usize {
        12
    }

    fn input_dim(&self) -> usize {
        6
    }

    /// State `[ē; ζ̄]` with the deviation input `ũ = ū − u_eq`.
    fn rhs(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let chi_bar = x.rows(0, 6).into_owned() + &self.pipeline.scenario.chi_des;
        let zeta_bar = x.rows(6, 6).into_owned();
        let j = self.pipeline.model.task_jacobian(&chi_bar)?;
        let f = self.drift(&chi_bar, &zeta_bar)?;
        let mut out = DVector::zeros(12);
        out.rows_mut(0, 6).copy_from(&(&j * &zeta_bar));
        out.rows_mut(6, 6)
            .copy_from(&(f + &self.pipeline.u_eq + u));
        Ok(out)
    }
}

impl SyntheticPipeline {
    /// Run the whole synthesis chain for the default testbed.
    pub fn synthesize(scenario: SyntheticScenario, seed: u64) -> Result<Self> {
        let model = build_vehicle_model();
        let mut params = SyntheticDynamics::default_for(0);
        params.g_vec = vec![0.0; 6];
        let contact = ContactModel::identity();

        let pose_set = ConstraintSet::boxed(
            &scenario.chi_des - &scenario.task_halfwidth,
            &scenario.chi_des + &scenario.task_halfwidth,
        )?;
        let vel_set = ConstraintSet::ball0(6, scenario.velocity_radius)?;

        let bounds = estimate_jacobian_bounds(&model, &pose_set, &vel_set, 4000, seed)?;

        // Lipschitz constants of the task map (in χ) and the drift (in
        // each argument), by difference quotients over the region.
        let m2 = model.clone();
        let p2 = params.clone();
        let c2 = contact.clone();
        let drift = move |chi: &DVector<f64>, zeta: &DVector<f64>| -> Option<DVector<f64>> {
            let chi6 = Vector6::from_row_slice(chi.as_slice());
            dynamics_drift(&m2, &p2, &c2, chi, &chi6, zeta).ok()
        };
        let m3 = model.clone();
        let task_map = move |chi: &DVector<f64>, zeta: &DVector<f64>| -> Option<DVector<f64>> {
            m3.task_jacobian(chi).ok().map(|j| j * zeta)
        };
        let ps = pose_set.clone();
        let vs = vel_set.clone();
        let l_c = lipschitz_constant(
            task_map,
            {
                let ps = ps.clone();
                move |rng| ps.sample(rng)
            },
            {
                let vs = vs.clone();
                move |rng| vs.sample(rng)
            },
            &pose_set,
            3000,
            seed ^ 1,
        );
        let l1 = lipschitz_constant(
            drift.clone(),
            {
                let ps = ps.clone();
                move |rng| ps.sample(rng)
            },
            {
                let vs = vs.clone();
                move |rng| vs.sample(rng)
            },
            &pose_set,
            3000,
            seed ^ 2,
        );
        let drift_swapped = move |zeta: &DVector<f64>, chi: &DVector<f64>| drift(chi, zeta);
        let l2 = lipschitz_constant(
            drift_swapped,
            {
                let vs = vs.clone();
                move |rng| vs.sample(rng)
            },
            move |rng| ps.sample(rng),
            &vel_set,
            3000,
            seed ^ 3,
        );
        let lips = LipschitzBounds::new(l_c, l1, l2);

        let tube = tube_gains(&bounds, &lips, scenario.d_tilde, 1.0, 1.5, 1.5)?;

        let task_set = ConstraintSet::boxed(
            &scenario.chi_des - &scenario.task_halfwidth,
            &scenario.chi_des + &scenario.task_halfwidth,
        )?;
        let error_set = error_constraint_set(&task_set, &scenario.chi_des)?;
        let u_full = ConstraintSet::ball0(6, scenario.input_radius)?;
        let (e_tight, z_tight, u_tight) =
            tighten_constraints(&error_set, &vel_set, &u_full, &tube)?;

        // Equilibrium input pins the nominal system at ē = 0, ζ̄ = 0.
        let chi_des6 = Vector6::from_row_slice(scenario.chi_des.as_slice());
        let f_eq = dynamics_drift(
            &model,
            &params,
            &contact,
            &scenario.chi_des,
            &chi_des6,
            &DVector::zeros(6),
        )?;
        let u_eq = -f_eq;
        if u_full.violation(&u_eq) > 0.0 {
            return Err(Error::InvalidParameter(
                "equilibrium input exceeds the input set".into(),
            ));
        }

        let mut pipeline = SyntheticPipeline {
            scenario,
            model,
            params,
            contact,
            u_eq,
            bounds,
            lips,
            tube,
            e_tight,
            z_tight,
            u_tight: u_tight.clone(),
            u_full,
            ingredients: TerminalIngredients {
                a: DMatrix::zeros(12, 12),
                b: DMatrix::zeros(12, 6),
                k_loc: DMatrix::zeros(6, 12),
                p: DMatrix::identity(12, 12),
                q_tilde: DMatrix::identity(12, 12),
                epsilon: 1.0,
                epsilon_grid_limited: false,
            },
            fhocp: FhocpConfig {
                horizon: 0.5,
                dt: 0.1,
                substeps: 10,
                cost_dim: 12,
                q: DMatrix::identity(12, 12) * 0.5,
                r: DMatrix::identity(6, 6) * 0.1,
                state_constraints: vec![],
                input_constraints: vec![],
                kkt_tol: 1e-6,
                feasibility_tol: 1e-6,
                max_iterations: 500,
            },
        };

        // Linearize the nominal dynamics at the equilibrium and build the
        // terminal ingredients against the shifted tightened input set.
        let (a_lin, b_lin) = {
            let plant = VehiclePlant {
                pipeline: &pipeline,
            };
            jacobian_linearize(
                |x: &DVector<f64>, u: &DVector<f64>| plant.rhs(0.0, x, u),
                &DVector::zeros(12),
                &DVector::zeros(6),
            )?
        };
        let u_solver_set = u_tight.translate(&(-&pipeline.u_eq))?;
        let ingredients = terminal_ingredients(
            a_lin,
            b_lin,
            &pipeline.fhocp.q,
            &pipeline.fhocp.r,
            &[(0, u_solver_set.clone())],
            500,
            seed ^ 4,
        )?;
        pipeline.ingredients = ingredients;
        pipeline.fhocp.state_constraints =
            vec![(0, pipeline.e_tight.clone()), (6, pipeline.z_tight.clone())];
        pipeline.fhocp.input_constraints = vec![(0, u_solver_set)];
        Ok(pipeline)
    }

    /// Closed-loop sample of the acceleration-level run.
    #[allow(clippy::type_complexity)]
    pub fn run(
        &self,
        disturbance: &DisturbanceSignal,
        duration: f64,
        from_error: &DVector<f64>,
    ) -> Result<SyntheticRun> {
        let h = self.fhocp.dt;
        let substeps = self.fhocp.substeps;
        let h_int = h / substeps as f64;
        let steps = (duration / h).round() as usize;
        let chi_des = &self.scenario.chi_des;
        let plant = VehiclePlant { pipeline: self };

        // [χ; ζ; χ̄; ζ̄]
        let mut y = DVector::zeros(24);
        y.rows_mut(0, 6).copy_from(&(chi_des + from_error));
        y.rows_mut(12, 6).copy_from(&(chi_des + from_error));

        let mut run = SyntheticRun::default();
        let mut prev: Option<FhocpSolution> = None;
        let mut t = 0.0;
        for _step in 0..steps {
            let mut x_bar = DVector::zeros(12);
            let e_bar = y.rows(12, 6).into_owned() - chi_des;
            x_bar.rows_mut(0, 6).copy_from(&e_bar);
            x_bar.rows_mut(6, 6).copy_from(&y.rows(18, 6).into_owned());
            let warm = prev
                .as_ref()
                .map(|p| shifted_warm_start(p, &self.ingredients, 12));
            let sol = solve_fhocp(&plant, &x_bar, t, &self.fhocp, &self.ingredients, warm.as_deref())?;
            if sol.status == FhocpStatus::Infeasible {
                return Err(Error::Infeasible {
                    max_violation: sol.max_violation,
                    stage: "synthetic receding horizon".into(),
                });
            }
            run.statuses.push(sol.status);
            run.costs.push(sol.cost);
            let u_tilde = sol.u_seq[0].clone();
            let u_bar = &self.u_eq + &u_tilde;

            let rhs = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
                let chi = yy.rows(0, 6).into_owned();
                let zeta = yy.rows(6, 6).into_owned();
                let chi_bar = yy.rows(12, 6).into_owned();
                let zeta_bar = yy.rows(18, 6).into_owned();
                let e = &chi - chi_des;
                let e_bar = &chi_bar - chi_des;
                let j_bar = self.model.task_jacobian(&chi_bar)?;
                let kappa = ancillary_feedback(&e, &e_bar, &zeta, &zeta_bar, &j_bar, &self.tube)?;
                let dev = &chi - &chi_bar;
                let d = disturbance.eval(tt, &dev);
                let u = &u_bar + &kappa;
                let j = self.model.task_jacobian(&chi)?;
                let f = plant.drift(&chi, &zeta)?;
                let f_bar = plant.drift(&chi_bar, &zeta_bar)?;
                let mut dy = DVector::zeros(24);
                dy.rows_mut(0, 6).copy_from(&(&j * &zeta));
                dy.rows_mut(6, 6).copy_from(&(f + &u + &d));
                dy.rows_mut(12, 6).copy_from(&(&j_bar * &zeta_bar));
                dy.rows_mut(18, 6).copy_from(&(f_bar + &u_bar));
                Ok(dy)
            };

            for j in 0..substeps {
                let tj = t + j as f64 * h_int;
                let mut f = |tt: f64, yy: &DVector<f64>| rhs(tt, yy);
                y = rk4_step(&mut f, tj, &y, h_int)?;
                let chi = y.rows(0, 6).into_owned();
                let zeta = y.rows(6, 6).into_owned();
                let chi_bar = y.rows(12, 6).into_owned();
                let zeta_bar = y.rows(18, 6).into_owned();
                let j_bar = self.model.task_jacobian(&chi_bar)?;
                let kappa = ancillary_feedback(
                    &(&chi - chi_des),
                    &(&chi_bar - chi_des),
                    &zeta,
                    &zeta_bar,
                    &j_bar,
                    &self.tube,
                )?;
                // Applied input must stay inside the full set whenever the
                // deviations are inside the tube.
                let (u_applied, margin) = composite_input(&u_bar, &kappa, &self.u_full)?;
                run.min_input_margin = run.min_input_margin.min(margin);
                let _ = u_applied;
                run.samples.push(SyntheticSample {
                    t: tj + h_int,
                    e_dev: (&chi - &chi_bar).norm(),
                    z_dev: (&zeta - &zeta_bar).norm(),
                    e_bar_norm: (&chi_bar - chi_des).norm(),
                    zeta_bar_norm: zeta_bar.norm(),
                    chi_err_norm: (&chi - chi_des).norm(),
                    zeta_norm: zeta.norm(),
                });
            }
            prev = Some(sol);
            t += h;
        }
        Ok(run)
    }

    /// Numerically evaluate `d/dt(½‖𝔶‖²)` for the deviation states at a
    /// sampled scene, with the worst admissible disturbance aligned with
    /// the auxiliary state.
    pub fn deviation_rate(
        &self,
        chi_bar: &DVector<f64>,
        zeta_bar: &DVector<f64>,
        e_dev: &DVector<f64>,
        z_dev: &DVector<f64>,
    ) -> Result<f64> {
        let chi = chi_bar + e_dev;
        let zeta = zeta_bar + z_dev;
        let plant = VehiclePlant { pipeline: self };
        let j_bar = self.model.task_jacobian(chi_bar)?;
        let j_real = self.model.task_jacobian(&chi)?;
        let sigma = self.tube.sigma;
        let aux = z_dev + j_bar.transpose() * e_dev * sigma;

        // 𝔟 and 𝔩 from the true maps.
        let b_fun = &j_real * &zeta - &j_bar * &zeta;
        let l_fun = plant.drift(&chi, &zeta)? - plant.drift(chi_bar, zeta_bar)?;
        let kappa = aux.clone() * (-self.tube.k);
        let d_worst = if aux.norm() > 1e-12 {
            aux.clone() * (self.tube.d_tilde / aux.norm())
        } else {
            DVector::zeros(6)
        };
        let e_dot = &b_fun + &j_bar * z_dev;
        let z_dot = &l_fun + &kappa + &d_worst;
        let j_dot_bar = self.model.jacobian_time_derivative(chi_bar, zeta_bar)?;
        let aux_dot = &z_dot + j_dot_bar.transpose() * e_dev * sigma + j_bar.transpose() * &e_dot * sigma;
        Ok(e_dev.dot(&e_dot) + aux.dot(&aux_dot))
    }

    /// Helper-function bounds of the deviation analysis at a sampled
    /// scene: returns (‖𝔟‖, L_c‖𝔢‖, ‖𝔩‖, L(‖𝔢‖+‖𝔷‖)).
    pub fn helper_bounds(
        &self,
        chi_bar: &DVector<f64>,
        zeta_bar: &DVector<f64>,
        e_dev: &DVector<f64>,
        z_dev: &DVector<f64>,
    ) -> Result<(f64, f64, f64, f64)> {
        let chi = chi_bar + e_dev;
        let zeta = zeta_bar + z_dev;
        let plant = VehiclePlant { pipeline: self };
        let j_real = self.model.task_jacobian(&chi)?;
        let j_nom_at_real_vel = self.model.task_jacobian(chi_bar)?;
        let b_fun = &j_real * &zeta - &j_nom_at_real_vel * &zeta;
        let l_fun = plant.drift(&chi, &zeta)? - plant.drift(chi_bar, zeta_bar)?;
        Ok((
            b_fun.norm(),
            self.lips.l_c * e_dev.norm(),
            l_fun.norm(),
            self.lips.l * (e_dev.norm() + z_dev.norm()),
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSample {
    pub t: f64,
    pub e_dev: f64,
    pub z_dev: f64,
    pub e_bar_norm: f64,
    pub zeta_bar_norm: f64,
    pub chi_err_norm: f64,
    pub zeta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub samples: Vec<SyntheticSample>,
    pub statuses: Vec<FhocpStatus>,
    pub costs: Vec<f64>,
    pub min_input_margin: f64,
}

impl Default for SyntheticRun {
    fn default() -> Self {
        Self {
            samples: Vec::new(),
            statuses: Vec::new(),
            costs: Vec::new(),
            min_input_margin: f64::INFINITY,
        }
    }
}
