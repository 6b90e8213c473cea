//! Direct single-shooting transcription and solution of the nominal
//! finite-horizon optimal control problem.
//!
//! Decision variables are `N` piecewise-constant inputs held over each
//! sampling interval. The nominal dynamics are integrated by fixed-step
//! RK4 on a substep grid, the quadratic cost by blockwise Simpson
//! quadrature on the same grid, and every state constraint is imposed at
//! every substep sample. The nonlinear program is solved by an augmented
//! Lagrangian (multiplier updates on all inequality constraints) over an
//! L-BFGS inner loop; gradients come from a discrete adjoint sweep over
//! finite-difference Jacobians of the substep map, which are refreshed
//! lazily as the iterate moves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::sets::ConstraintSet;

use super::terminal::TerminalIngredients;

/// Continuous-time nominal dynamics `ẋ = f(t, x, u)`.
pub trait NominalPlant: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Transcription parameters and constraint sets of the FHOCP.
#[derive(Debug, Clone)]
pub struct FhocpConfig {
    /// Prediction horizon `T`.
    pub horizon: f64,
    /// Sampling period `h` (each holds one input block).
    pub dt: f64,
    /// Integration substeps per sampling period; must be even for the
    /// Simpson weights.
    pub substeps: usize,
    /// The weighted cost acts on the leading `cost_dim` state components.
    pub cost_dim: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Tightened state sets, each anchored at a state-vector offset.
    pub state_constraints: Vec<(usize, ConstraintSet)>,
    /// Tightened input sets, each anchored at an input-vector offset.
    pub input_constraints: Vec<(usize, ConstraintSet)>,
    pub kkt_tol: f64,
    pub feasibility_tol: f64,
    /// Cap on total inner iterations.
    pub max_iterations: usize,
}

impl FhocpConfig {
    /// Number of input blocks `N = T/h` (rounded; the rounding is recorded
    /// by the return value).
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt < self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < h < T, got h = {}, T = {}",
                self.dt, self.horizon
            )));
        }
        if self.steps() == 0 {
            return Err(Error::InvalidParameter("horizon shorter than one step".into()));
        }
        if self.substeps == 0 || self.substeps % 2 != 0 {
            return Err(Error::InvalidParameter(
                "substeps must be a positive even count".into(),
            ));
        }
        if self.q.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("Q is not positive definite".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("R is not positive definite".into()));
        }
        Ok(())
    }
}

/// Solver outcome for one FHOCP instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhocpStatus {
    Solved,
    Infeasible,
    MaxIter,
}

impl FhocpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FhocpStatus::Solved => "solved",
            FhocpStatus::Infeasible => "infeasible",
            FhocpStatus::MaxIter => "max-iter",
        }
    }
}

/// Optimal nominal input sequence and predicted trajectory.
#[derive(Debug, Clone)]
pub struct FhocpSolution {
    pub u_seq: Vec<DVector<f64>>,
    /// Predicted states on the substep grid (length `N·substeps + 1`).
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: FhocpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub max_violation: f64,
    /// `ε − ‖ξ̄(T)‖_P`.
    pub terminal_margin: f64,
}

#[derive(Debug, Clone)]
enum Constraint {
    /// `‖x_seg − c‖² ≤ r²` at a substep sample.
    StateBall {
        sample: usize,
        offset: usize,
        center: DVector<f64>,
        radius: f64,
    },
    /// `lo ≤ x_i` / `x_i ≤ hi` at a substep sample.
    StateLo { sample: usize, index: usize, bound: f64 },
    StateHi { sample: usize, index: usize, bound: f64 },
    /// `‖ξ̄(T)‖²_P ≤ ε²`.
    Terminal,
    /// Input-block versions.
    InputBall {
        block: usize,
        offset: usize,
        center: DVector<f64>,
        radius: f64,
    },
    InputLo { block: usize, index: usize, bound: f64 },
    InputHi { block: usize, index: usize, bound: f64 },
}

struct Transcription<'a> {
    plant: &'a dyn NominalPlant,
    cfg: &'a FhocpConfig,
    x0: DVector<f64>,
    t0: f64,
    n_blocks: usize,
    total_substeps: usize,
    h_int: f64,
    /// Simpson weights per substep sample.
    weights: Vec<f64>,
    constraints: Vec<Constraint>,
    p_terminal: DMatrix<f64>,
    epsilon: f64,
}

impl<'a> Transcription<'a> {
    fn block_of(&self, substep: usize) -> usize {
        (substep / self.cfg.substeps).min(self.n_blocks - 1)
    }

    fn rollout(&self, u: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut states = Vec::with_capacity(self.total_substeps + 1);
        states.push(self.x0.clone());
        for s in 0..self.total_substeps {
            let uk = &u[self.block_of(s)];
            let t = self.t0 + s as f64 * self.h_int;
            let mut f = |tt: f64, x: &DVector<f64>| self.plant.rhs(tt, x, uk);
            let next = rk4_step(&mut f, t, states.last().unwrap(), self.h_int)?;
            states.push(next);
        }
        Ok(states)
    }

    fn cost_state<'b>(&self, x: &'b DVector<f64>) -> DVector<f64> {
        x.rows(0, self.cfg.cost_dim).into_owned()
    }

    fn cost(&self, u: &[DVector<f64>], states: &[DVector<f64>]) -> f64 {
        let mut c = 0.0;
        for (s, x) in states.iter().enumerate() {
            let xi = self.cost_state(x);
            c += self.weights[s] * (xi.transpose() * &self.cfg.q * &xi)[0];
        }
        for uk in u {
            c += self.cfg.dt * (uk.transpose() * &self.cfg.r * uk)[0];
        }
        let xi_t = self.cost_state(states.last().unwrap());
        c += (xi_t.transpose() * &self.p_terminal * &xi_t)[0];
        c
    }

    fn constraint_value(
        &self,
        con: &Constraint,
        u: &[DVector<f64>],
        states: &[DVector<f64>],
    ) -> f64 {
        match con {
            Constraint::StateBall {
                sample,
                offset,
                center,
                radius,
            } => {
                let seg = states[*sample].rows(*offset, center.len());
                (seg - center).norm_squared() - radius * radius
            }
            Constraint::StateLo { sample, index, bound } => bound - states[*sample][*index],
            Constraint::StateHi { sample, index, bound } => states[*sample][*index] - bound,
            Constraint::Terminal => {
                let xi = self.cost_state(states.last().unwrap());
                (xi.transpose() * &self.p_terminal * &xi)[0] - self.epsilon * self.epsilon
            }
            Constraint::InputBall {
                block,
                offset,
                center,
                radius,
            } => {
                let seg = u[*block].rows(*offset, center.len());
                (seg - center).norm_squared() - radius * radius
            }
            Constraint::InputLo { block, index, bound } => bound - u[*block][*index],
            Constraint::InputHi { block, index, bound } => u[*block][*index] - bound,
        }
    }

    /// Normalized violation (distance-like, not squared) for reporting.
    fn violation_of(&self, con: &Constraint, u: &[DVector<f64>], states: &[DVector<f64>]) -> f64 {
        let c = self.constraint_value(con, u, states);
        match con {
            Constraint::StateBall { radius, .. } | Constraint::InputBall { radius, .. } => {
                if c <= 0.0 {
                    0.0
                } else {
                    (c + radius * radius).sqrt() - radius
                }
            }
            Constraint::Terminal => {
                if c <= 0.0 {
                    0.0
                } else {
                    (c + self.epsilon * self.epsilon).sqrt() - self.epsilon
                }
            }
            _ => c.max(0.0),
        }
    }

    fn max_violation(&self, u: &[DVector<f64>], states: &[DVector<f64>]) -> f64 {
        self.constraints
            .iter()
            .map(|c| self.violation_of(c, u, states))
            .fold(0.0, f64::max)
    }
}

/// Finite-difference Jacobians of each substep map, cached between
/// gradient evaluations.
struct Linearization {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    u_ref: Vec<DVector<f64>>,
}

impl Transcription<'_> {
    fn linearize(&self, u: &[DVector<f64>], states: &[DVector<f64>]) -> Result<Linearization> {
        let nx = self.plant.state_dim();
        let nu = self.plant.input_dim();
        let mut a = Vec::with_capacity(self.total_substeps);
        let mut b = Vec::with_capacity(self.total_substeps);
        for s in 0..self.total_substeps {
            let uk = &u[self.block_of(s)];
            let t = self.t0 + s as f64 * self.h_int;
            let x = &states[s];
            let step = |xx: &DVector<f64>, uu: &DVector<f64>| -> Result<DVector<f64>> {
                let mut f = |tt: f64, y: &DVector<f64>| self.plant.rhs(tt, y, uu);
                rk4_step(&mut f, t, xx, self.h_int)
            };
            let mut a_s = DMatrix::zeros(nx, nx);
            let mut b_s = DMatrix::zeros(nx, nu);
            for i in 0..nx {
                let d = 1e-5 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += d;
                xm[i] -= d;
                let col = (step(&xp, uk)? - step(&xm, uk)?) / (2.0 * d);
                a_s.set_column(i, &col);
            }
            for i in 0..nu {
                let d = 1e-5 * (1.0 + uk[i].abs());
                let mut up = uk.clone();
                let mut um = uk.clone();
                up[i] += d;
                um[i] -= d;
                let col = (step(x, &up)? - step(x, &um)?) / (2.0 * d);
                b_s.set_column(i, &col);
            }
            a.push(a_s);
            b.push(b_s);
        }
        Ok(Linearization {
            a,
            b,
            u_ref: u.to_vec(),
        })
    }
}

fn stack(u: &[DVector<f64>]) -> DVector<f64> {
    let nu = u[0].len();
    let mut v = DVector::zeros(u.len() * nu);
    for (k, uk) in u.iter().enumerate() {
        v.rows_mut(k * nu, nu).copy_from(uk);
    }
    v
}

fn unstack(v: &DVector<f64>, n_blocks: usize, nu: usize) -> Vec<DVector<f64>> {
    (0..n_blocks)
        .map(|k| v.rows(k * nu, nu).into_owned())
        .collect()
}

/// Multiplier state of the augmented Lagrangian.
struct AugLag {
    lambda: Vec<f64>,
    mu: f64,
}

impl AugLag {
    fn psi(&self, i: usize, c: f64) -> f64 {
        let t = (self.lambda[i] + self.mu * c).max(0.0);
        (t * t - self.lambda[i] * self.lambda[i]) / (2.0 * self.mu)
    }

    /// dψ/dc.
    fn psi_prime(&self, i: usize, c: f64) -> f64 {
        (self.lambda[i] + self.mu * c).max(0.0)
    }
}

/// Solve the FHOCP from initial state `x0` at time `t0`.
pub fn solve_fhocp(
    plant: &dyn NominalPlant,
    x0: &DVector<f64>,
    t0: f64,
    cfg: &FhocpConfig,
    ingredients: &TerminalIngredients,
    warm_start: Option<&[DVector<f64>]>,
) -> Result<FhocpSolution> {
    cfg.validate()?;
    let n_blocks = cfg.steps();
    let nu = plant.input_dim();
    let total_substeps = n_blocks * cfg.substeps;
    let h_int = cfg.dt / cfg.substeps as f64;

    // Simpson weights per block, accumulated at shared endpoints.
    let mut weights = vec![0.0; total_substeps + 1];
    for k in 0..n_blocks {
        for j in 0..=cfg.substeps {
            let c = if j == 0 || j == cfg.substeps {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights[k * cfg.substeps + j] += c * h_int / 3.0;
        }
    }

    // Constraint list. Initial-state memberships are checked up front
    // (they do not depend on the decision variables).
    for (off, set) in &cfg.state_constraints {
        let seg = x0.rows(*off, set.dim()).into_owned();
        let v = set.violation(&seg);
        if v > cfg.feasibility_tol {
            return Err(Error::Infeasible {
                max_violation: v,
                stage: format!("initial state (offset {off})"),
            });
        }
    }
    let mut constraints = Vec::new();
    for s in 1..=total_substeps {
        for (off, set) in &cfg.state_constraints {
            match set {
                ConstraintSet::NormBall { center, radius } => constraints.push(Constraint::StateBall {
                    sample: s,
                    offset: *off,
                    center: center.clone(),
                    radius: *radius,
                }),
                ConstraintSet::Box { lo, hi } => {
                    for i in 0..lo.len() {
                        if lo[i].is_finite() {
                            constraints.push(Constraint::StateLo {
                                sample: s,
                                index: off + i,
                                bound: lo[i],
                            });
                        }
                        if hi[i].is_finite() {
                            constraints.push(Constraint::StateHi {
                                sample: s,
                                index: off + i,
                                bound: hi[i],
                            });
                        }
                    }
                }
            }
        }
    }
    constraints.push(Constraint::Terminal);
    for k in 0..n_blocks {
        for (off, set) in &cfg.input_constraints {
            match set {
                ConstraintSet::NormBall { center, radius } => constraints.push(Constraint::InputBall {
                    block: k,
                    offset: *off,
                    center: center.clone(),
                    radius: *radius,
                }),
                ConstraintSet::Box { lo, hi } => {
                    for i in 0..lo.len() {
                        if lo[i].is_finite() {
                            constraints.push(Constraint::InputLo {
                                block: k,
                                index: off + i,
                                bound: lo[i],
                            });
                        }
                        if hi[i].is_finite() {
                            constraints.push(Constraint::InputHi {
                                block: k,
                                index: off + i,
                                bound: hi[i],
                            });
                        }
                    }
                }
            }
        }
    }

    let tr = Transcription {
        plant,
        cfg,
        x0: x0.clone(),
        t0,
        n_blocks,
        total_substeps,
        h_int,
        weights,
        constraints,
        p_terminal: ingredients.p.clone(),
        epsilon: ingredients.epsilon,
    };

    let mut u: Vec<DVector<f64>> = match warm_start {
        Some(w) if w.len() == n_blocks => w.to_vec(),
        _ => (0..n_blocks).map(|_| DVector::zeros(nu)).collect(),
    };

    let mut al = AugLag {
        lambda: vec![0.0; tr.constraints.len()],
        mu: 10.0,
    };

    // Augmented-Lagrangian value at fixed multipliers.
    let phi = |u: &[DVector<f64>], states: &[DVector<f64>], al: &AugLag| -> f64 {
        let mut v = tr.cost(u, states);
        for (i, con) in tr.constraints.iter().enumerate() {
            v += al.psi(i, tr.constraint_value(con, u, states));
        }
        v
    };

    // Adjoint gradient of the augmented Lagrangian w.r.t. the stacked
    // input, using cached substep Jacobians.
    let gradient = |u: &[DVector<f64>],
                    states: &[DVector<f64>],
                    lin: &Linearization,
                    al: &AugLag|
     -> DVector<f64> {
        let nx = plant.state_dim();
        let cd = cfg.cost_dim;
        // Per-sample adjoint seeds from cost and state constraints.
        let mut seed = vec![DVector::zeros(nx); tr.total_substeps + 1];
        for (s, x) in states.iter().enumerate() {
            let xi = tr.cost_state(x);
            let gq = &cfg.q * &xi * (2.0 * tr.weights[s]);
            seed[s].rows_mut(0, cd).copy_from(&gq);
        }
        {
            let xi_t = tr.cost_state(states.last().unwrap());
            let gp = &tr.p_terminal * &xi_t * 2.0;
            seed[tr.total_substeps]
                .rows_mut(0, cd)
                .axpy(1.0, &gp, 1.0);
        }
        let mut g_u = vec![DVector::zeros(nu); tr.n_blocks];
        for (k, uk) in u.iter().enumerate() {
            g_u[k] += &cfg.r * uk * (2.0 * cfg.dt);
        }
        for (i, con) in tr.constraints.iter().enumerate() {
            let c = tr.constraint_value(con, u, states);
            let w = al.psi_prime(i, c);
            if w == 0.0 {
                continue;
            }
            match con {
                Constraint::StateBall {
                    sample,
                    offset,
                    center,
                    ..
                } => {
                    let seg = states[*sample].rows(*offset, center.len()).into_owned();
                    let g = (seg - center) * (2.0 * w);
                    seed[*sample].rows_mut(*offset, center.len()).axpy(1.0, &g, 1.0);
                }
                Constraint::StateLo { sample, index, .. } => seed[*sample][*index] -= w,
                Constraint::StateHi { sample, index, .. } => seed[*sample][*index] += w,
                Constraint::Terminal => {
                    let xi_t = tr.cost_state(states.last().unwrap());
                    let g = &tr.p_terminal * &xi_t * (2.0 * w);
                    seed[tr.total_substeps].rows_mut(0, cd).axpy(1.0, &g, 1.0);
                }
                Constraint::InputBall {
                    block,
                    offset,
                    center,
                    ..
                } => {
                    let seg = u[*block].rows(*offset, center.len()).into_owned();
                    let g = (seg - center) * (2.0 * w);
                    g_u[*block].rows_mut(*offset, center.len()).axpy(1.0, &g, 1.0);
                }
                Constraint::InputLo { block, index, .. } => g_u[*block][*index] -= w,
                Constraint::InputHi { block, index, .. } => g_u[*block][*index] += w,
            }
        }
        // Backward sweep.
        let mut p = seed[tr.total_substeps].clone();
        for s in (0..tr.total_substeps).rev() {
            let k = tr.block_of(s);
            g_u[k] += lin.b[s].transpose() * &p;
            p = lin.a[s].transpose() * &p + &seed[s];
        }
        stack(&g_u)
    };

    let mut states = tr.rollout(&u)?;
    let mut lin = tr.linearize(&u, &states)?;
    let mut iterations = 0usize;
    let mut status = FhocpStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let refresh_tol = 5e-3;

    'outer: for _outer in 0..40 {
        // Inner L-BFGS on Φ(·; λ, μ).
        let m_hist = 8;
        let mut s_hist: Vec<DVector<f64>> = Vec::new();
        let mut y_hist: Vec<DVector<f64>> = Vec::new();
        let mut uv = stack(&u);
        let mut fval = phi(&u, &states, &al);
        let mut g = gradient(&u, &states, &lin, &al);
        loop {
            if iterations >= cfg.max_iterations {
                break 'outer;
            }
            let gnorm = g.amax();
            if gnorm <= cfg.kkt_tol {
                // Confirm against fresh Jacobians before accepting.
                let drift = u
                    .iter()
                    .zip(lin.u_ref.iter())
                    .map(|(a, b)| (a - b).amax())
                    .fold(0.0, f64::max);
                if drift > 1e-12 {
                    lin = tr.linearize(&u, &states)?;
                    g = gradient(&u, &states, &lin, &al);
                    if g.amax() > cfg.kkt_tol {
                        continue;
                    }
                }
                break;
            }
            // Two-loop recursion.
            let mut d = -g.clone();
            let mut alphas = Vec::with_capacity(s_hist.len());
            for (si, yi) in s_hist.iter().zip(y_hist.iter()).rev() {
                let rho = 1.0 / yi.dot(si);
                let a = rho * si.dot(&d);
                d -= yi * a;
                alphas.push((a, rho));
            }
            if let (Some(sl), Some(yl)) = (s_hist.last(), y_hist.last()) {
                d *= sl.dot(yl) / yl.dot(yl);
            }
            for ((si, yi), (a, rho)) in s_hist.iter().zip(y_hist.iter()).zip(alphas.iter().rev()) {
                let b = rho * yi.dot(&d);
                d += si * (a - b);
            }
            if g.dot(&d) >= 0.0 {
                s_hist.clear();
                y_hist.clear();
                d = -g.clone();
            }
            // Armijo backtracking on exact rollout values.
            let slope = g.dot(&d);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand_v = &uv + &d * alpha;
                let cand = unstack(&cand_v, n_blocks, nu);
                match tr.rollout(&cand) {
                    Ok(st) => {
                        let f_new = phi(&cand, &st, &al);
                        if f_new <= fval + 1e-4 * alpha * slope {
                            // Accept.
                            let drift = cand
                                .iter()
                                .zip(lin.u_ref.iter())
                                .map(|(a, b)| (a - b).amax())
                                .fold(0.0, f64::max);
                            if drift > refresh_tol {
                                lin = tr.linearize(&cand, &st)?;
                            }
                            let g_new = gradient(&cand, &st, &lin, &al);
                            let s_vec = &cand_v - &uv;
                            let y_vec = &g_new - &g;
                            if s_vec.dot(&y_vec) > 1e-12 {
                                s_hist.push(s_vec);
                                y_hist.push(y_vec);
                                if s_hist.len() > m_hist {
                                    s_hist.remove(0);
                                    y_hist.remove(0);
                                }
                            }
                            uv = cand_v;
                            u = cand;
                            states = st;
                            fval = f_new;
                            g = g_new;
                            accepted = true;
                            break;
                        }
                    }
                    Err(_) => {} // integration blew up: shrink the step
                }
                alpha *= 0.5;
            }
            iterations += 1;
            if !accepted {
                // Either the cached Jacobians went stale or we are at a
                // stationary point; refresh once and stop if it persists.
                let fresh = tr.linearize(&u, &states)?;
                let g_fresh = gradient(&u, &states, &fresh, &al);
                lin = fresh;
                if (&g_fresh - &g).amax() < 1e-10 {
                    g = g_fresh;
                    break;
                }
                g = g_fresh;
            }
        }

        // Multiplier / penalty updates.
        let viol = tr.max_violation(&u, &states);
        kkt = g.amax();
        if viol <= cfg.feasibility_tol && kkt <= cfg.kkt_tol {
            status = FhocpStatus::Solved;
            break;
        }
        for (i, con) in tr.constraints.iter().enumerate() {
            let c = tr.constraint_value(con, &u, &states);
            al.lambda[i] = (al.lambda[i] + al.mu * c).max(0.0);
        }
        al.mu = (al.mu * 6.0).min(1e10);
    }

    let max_violation = tr.max_violation(&u, &states);
    if status != FhocpStatus::Solved {
        if max_violation > cfg.feasibility_tol * 10.0 {
            return Err(Error::Infeasible {
                max_violation,
                stage: "shooting".into(),
            });
        }
        status = if max_violation <= cfg.feasibility_tol && kkt <= cfg.kkt_tol {
            FhocpStatus::Solved
        } else {
            FhocpStatus::MaxIter
        };
    }

    let xi_t = tr.cost_state(states.last().unwrap());
    let terminal_norm = (xi_t.transpose() * &tr.p_terminal * &xi_t)[0].max(0.0).sqrt();
    Ok(FhocpSolution {
        cost: tr.cost(&u, &states),
        u_seq: u,
        states,
        status,
        kkt_residual: kkt,
        iterations,
        max_violation,
        terminal_margin: ingredients.epsilon - terminal_norm,
    })
}

/// Shift a solved sequence by one block and append the local controller
/// acting on the predicted terminal cost-state.
pub fn shifted_warm_start(
    prev: &FhocpSolution,
    ingredients: &TerminalIngredients,
    cost_dim: usize,
) -> Vec<DVector<f64>> {
    let mut w: Vec<DVector<f64>> = prev.u_seq.iter().skip(1).cloned().collect();
    let xi_t = prev.states.last().unwrap().rows(0, cost_dim).into_owned();
    w.push(&ingredients.k_loc * xi_t);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Integrator;

    impl NominalPlant for Integrator {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(u.clone())
        }
    }

    fn scalar_ingredients(p: f64, eps: f64) -> TerminalIngredients {
        TerminalIngredients {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::identity(1, 1),
            k_loc: DMatrix::from_element(1, 1, -1.0),
            p: DMatrix::from_element(1, 1, p),
            q_tilde: DMatrix::identity(1, 1),
            epsilon: eps,
            epsilon_grid_limited: false,
        }
    }

    fn scalar_cfg(horizon: f64, dt: f64) -> FhocpConfig {
        FhocpConfig {
            horizon,
            dt,
            substeps: 10,
            cost_dim: 1,
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            state_constraints: vec![],
            input_constraints: vec![],
            kkt_tol: 1e-6,
            feasibility_tol: 1e-6,
            max_iterations: 500,
        }
    }

    #[test]
    fn origin_is_already_optimal() {
        let cfg = scalar_cfg(1.0, 0.25);
        let ing = scalar_ingredients(1.0, 10.0);
        let sol = solve_fhocp(&Integrator, &DVector::zeros(1), 0.0, &cfg, &ing, None).unwrap();
        assert_eq!(sol.status, FhocpStatus::Solved);
        assert!(sol.cost < 1e-10);
        for u in &sol.u_seq {
            assert!(u.amax() < 1e-6);
        }
    }

    #[test]
    fn single_step_matches_brute_force_grid() {
        // One free input on ẋ = u from x₀ = 1 with Q = P = R = 1: compare
        // the solver against a dense scan of the same discretized cost.
        let cfg = FhocpConfig {
            horizon: 0.5,
            dt: 0.4,
            substeps: 10,
            cost_dim: 1,
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            state_constraints: vec![],
            input_constraints: vec![],
            kkt_tol: 1e-8,
            feasibility_tol: 1e-6,
            max_iterations: 500,
        };
        // dt 0.4 with horizon 0.5 rounds to a single block.
        assert_eq!(cfg.steps(), 1);
        let ing = scalar_ingredients(1.0, 100.0);
        let x0 = DVector::from_element(1, 1.0);
        let sol = solve_fhocp(&Integrator, &x0, 0.0, &cfg, &ing, None).unwrap();
        assert_eq!(sol.status, FhocpStatus::Solved);

        // Brute force over u with the identical rollout/quadrature.
        let eval = |uval: f64| -> f64 {
            let u = vec![DVector::from_element(1, uval)];
            let tr_states = {
                let mut xs = vec![x0.clone()];
                let h = cfg.dt / cfg.substeps as f64;
                for _ in 0..cfg.substeps {
                    let x = xs.last().unwrap()[0];
                    // exact RK4 on ẋ = u is the trapezoid-exact linear step
                    xs.push(DVector::from_element(1, x + h * uval));
                }
                xs
            };
            let h = cfg.dt / cfg.substeps as f64;
            let mut c = 0.0;
            for (j, x) in tr_states.iter().enumerate() {
                let w = if j == 0 || j == cfg.substeps {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c += w * h / 3.0 * x[0] * x[0];
            }
            c += cfg.dt * uval * uval;
            c += tr_states.last().unwrap()[0].powi(2);
            let _ = &u;
            c
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut uval = -3.0;
        while uval <= 0.5 {
            let c = eval(uval);
            if c < best.0 {
                best = (c, uval);
            }
            uval += 1e-4;
        }
        assert!(
            (sol.u_seq[0][0] - best.1).abs() < 1e-3,
            "solver {} vs grid {}",
            sol.u_seq[0][0],
            best.1
        );
        assert!((sol.cost - best.0).abs() / best.0.max(1e-9) < 1e-4);
    }

    #[test]
    fn infeasible_initial_state_is_reported() {
        let mut cfg = scalar_cfg(1.0, 0.25);
        cfg.state_constraints = vec![(0, ConstraintSet::ball0(1, 0.5).unwrap())];
        let ing = scalar_ingredients(1.0, 10.0);
        let res = solve_fhocp(
            &Integrator,
            &DVector::from_element(1, 2.0),
            0.0,
            &cfg,
            &ing,
            None,
        );
        assert!(matches!(res, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn input_ball_constraint_is_respected() {
        let mut cfg = scalar_cfg(1.0, 0.25);
        cfg.input_constraints = vec![(0, ConstraintSet::ball0(1, 0.3).unwrap())];
        let ing = scalar_ingredients(1.0, 10.0);
        let sol = solve_fhocp(
            &Integrator,
            &DVector::from_element(1, 1.0),
            0.0,
            &cfg,
            &ing,
            None,
        )
        .unwrap();
        assert_eq!(sol.status, FhocpStatus::Solved);
        for u in &sol.u_seq {
            assert!(u[0].abs() <= 0.3 + 1e-6);
        }
    }

    #[test]
    fn terminal_constraint_pulls_state_down() {
        let mut cfg = scalar_cfg(1.0, 0.25);
        cfg.kkt_tol = 1e-6;
        let ing = scalar_ingredients(1.0, 0.05);
        let sol = solve_fhocp(
            &Integrator,
            &DVector::from_element(1, 1.0),
            0.0,
            &cfg,
            &ing,
            None,
        )
        .unwrap();
        assert_eq!(sol.status, FhocpStatus::Solved);
        let xt = sol.states.last().unwrap()[0].abs();
        assert!(xt <= 0.05 + 1e-5, "terminal state {xt} above ε");
    }

    #[test]
    fn gradient_matches_finite_difference() {
        // Adjoint gradient against central differences on a nonlinear
        // plant with active constraint penalties.
        struct Pendulum;
        impl NominalPlant for Pendulum {
            fn state_dim(&self) -> usize {
                2
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_row_slice(&[x[1], -x[0].sin() + u[0]]))
            }
        }
        let cfg = FhocpConfig {
            horizon: 0.6,
            dt: 0.2,
            substeps: 4,
            cost_dim: 2,
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            state_constraints: vec![(0, ConstraintSet::ball0(2, 1.2).unwrap())],
            input_constraints: vec![(0, ConstraintSet::ball0(1, 2.0).unwrap())],
            kkt_tol: 1e-6,
            feasibility_tol: 1e-6,
            max_iterations: 500,
        };
        let ing = TerminalIngredients {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
            k_loc: DMatrix::zeros(1, 2),
            p: DMatrix::identity(2, 2),
            q_tilde: DMatrix::identity(2, 2),
            epsilon: 0.8,
            epsilon_grid_limited: false,
        };
        let x0 = DVector::from_row_slice(&[0.9, 0.0]);
        let tr = Transcription {
            plant: &Pendulum,
            cfg: &cfg,
            x0: x0.clone(),
            t0: 0.0,
            n_blocks: 3,
            total_substeps: 12,
            h_int: 0.05,
            weights: {
                let mut w = vec![0.0; 13];
                for k in 0..3 {
                    for j in 0..=4 {
                        let c = if j == 0 || j == 4 {
                            1.0
                        } else if j % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        w[k * 4 + j] += c * 0.05 / 3.0;
                    }
                }
                w
            },
            constraints: vec![
                Constraint::StateBall {
                    sample: 6,
                    offset: 0,
                    center: DVector::zeros(2),
                    radius: 0.5,
                },
                Constraint::Terminal,
                Constraint::InputBall {
                    block: 1,
                    offset: 0,
                    center: DVector::zeros(1),
                    radius: 0.1,
                },
            ],
            p_terminal: ing.p.clone(),
            epsilon: 0.3,
        };
        let u: Vec<DVector<f64>> = (0..3)
            .map(|k| DVector::from_element(1, 0.3 - 0.2 * k as f64))
            .collect();
        let states = tr.rollout(&u).unwrap();
        let lin = tr.linearize(&u, &states).unwrap();
        let al = AugLag {
            lambda: vec![0.3, 0.1, 0.2],
            mu: 5.0,
        };
        let phi = |u: &[DVector<f64>]| -> f64 {
            let st = tr.rollout(u).unwrap();
            let mut v = tr.cost(u, &st);
            for (i, con) in tr.constraints.iter().enumerate() {
                v += al.psi(i, tr.constraint_value(con, u, &st));
            }
            v
        };
        // Reuse the solver's gradient code path.
        let g = {
            let nx = 2;
            let nu = 1;
            let mut seed = vec![DVector::zeros(nx); 13];
            for (s, x) in states.iter().enumerate() {
                let xi = tr.cost_state(x);
                let gq = &cfg.q * &xi * (2.0 * tr.weights[s]);
                seed[s].rows_mut(0, 2).copy_from(&gq);
            }
            let xi_t = tr.cost_state(states.last().unwrap());
            let gp = &tr.p_terminal * &xi_t * 2.0;
            seed[12].rows_mut(0, 2).axpy(1.0, &gp, 1.0);
            let mut g_u = vec![DVector::zeros(nu); 3];
            for (k, uk) in u.iter().enumerate() {
                g_u[k] += &cfg.r * uk * (2.0 * cfg.dt);
            }
            for (i, con) in tr.constraints.iter().enumerate() {
                let c = tr.constraint_value(con, &u, &states);
                let w = al.psi_prime(i, c);
                if w == 0.0 {
                    continue;
                }
                match con {
                    Constraint::StateBall { sample, offset, center, .. } => {
                        let seg = states[*sample].rows(*offset, 2).into_owned();
                        let gg = (seg - center) * (2.0 * w);
                        seed[*sample].rows_mut(*offset, 2).axpy(1.0, &gg, 1.0);
                    }
                    Constraint::Terminal => {
                        let xi = tr.cost_state(states.last().unwrap());
                        let gg = &tr.p_terminal * &xi * (2.0 * w);
                        seed[12].rows_mut(0, 2).axpy(1.0, &gg, 1.0);
                    }
                    Constraint::InputBall { block, offset, center, .. } => {
                        let seg = u[*block].rows(*offset, 1).into_owned();
                        let gg = (seg - center) * (2.0 * w);
                        g_u[*block].rows_mut(*offset, 1).axpy(1.0, &gg, 1.0);
                    }
                    _ => unreachable!(),
                }
            }
            let mut p = seed[12].clone();
            for s in (0..12).rev() {
                let k = tr.block_of(s);
                g_u[k] += lin.b[s].transpose() * &p;
                p = lin.a[s].transpose() * &p + &seed[s];
            }
            stack(&g_u)
        };
        let uv = stack(&u);
        for i in 0..3 {
            let d = 1e-6;
            let mut up = uv.clone();
            let mut um = uv.clone();
            up[i] += d;
            um[i] -= d;
            let fd = (phi(&unstack(&up, 3, 1)) - phi(&unstack(&um, 3, 1))) / (2.0 * d);
            assert_relative_eq!(g[i], fd, epsilon = 1e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn warm_start_shift_appends_local_controller() {
        let ing = scalar_ingredients(1.0, 1.0);
        let prev = FhocpSolution {
            u_seq: vec![
                DVector::from_element(1, 0.5),
                DVector::from_element(1, -0.25),
            ],
            states: vec![DVector::from_element(1, 0.8)],
            cost: 0.0,
            status: FhocpStatus::Solved,
            kkt_residual: 0.0,
            iterations: 0,
            max_violation: 0.0,
            terminal_margin: 0.0,
        };
        let w = shifted_warm_start(&prev, &ing, 1);
        assert_eq!(w.len(), 2);
        assert_relative_eq!(w[0][0], -0.25);
        assert_relative_eq!(w[1][0], -0.8); // K_loc = −1 acting on 0.8
    }
}
