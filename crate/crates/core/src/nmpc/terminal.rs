//! Terminal ingredients for the quasi-infinite-horizon scheme: a local
//! linear feedback, a terminal weight from a Lyapunov solve, and the
//! largest terminal level set on which the local controller respects the
//! tightened input constraints.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sets::ConstraintSet;

/// Local controller, terminal weight and terminal radius.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Local feedback gain: `u_loc = K_loc ξ̄`.
    pub k_loc: DMatrix<f64>,
    /// Terminal weight; `ℱ = {‖ξ̄‖_P ≤ ε}` intersected with the tightened
    /// state sets.
    pub p: DMatrix<f64>,
    /// `Q̃ = Q + K_locᵀ R K_loc`, the decrease rate certified inside ℱ.
    pub q_tilde: DMatrix<f64>,
    pub epsilon: f64,
    /// True when the ε search ran into its grid ceiling rather than an
    /// input constraint.
    pub epsilon_grid_limited: bool,
}

fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve the continuous Lyapunov equation `AᵀP + PA = −Q` by vectorizing
/// to a Kronecker linear system. Sized for the small state dimensions of
/// this crate (n ≤ a few dozen).
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    // vec(AᵀP + PA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P)
    let eye = DMatrix::identity(n, n);
    let at = a.transpose();
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let lu = m.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    // Symmetrize away the solve's rounding.
    Ok((&p + p.transpose()) * 0.5)
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
///
/// The matrix Riccati ODE is integrated from `P = Q` until the induced
/// gain stabilizes the pair, then Newton-Kleinman iterations (each one a
/// Lyapunov solve) polish to machine accuracy.
pub fn care_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("R is not positive definite".into()))?
        .inverse();
    let s = b * &r_inv * b.transpose();

    let riccati_rhs = |p: &DMatrix<f64>| -> DMatrix<f64> {
        a.transpose() * p + p * a - p * &s * p + q
    };

    let mut p = q.clone();
    let mut stabilized = max_real_eig(&(a - &s * &p)) < -1e-9;
    let mut iters = 0;
    while !stabilized && iters < 200_000 {
        let dp = riccati_rhs(&p);
        let scale = dp.norm().max(1.0);
        let h = (0.2 / scale).min(0.05);
        // RK2 midpoint keeps the integration cheap; Newton does the
        // precision work afterwards.
        let mid = &p + &dp * (0.5 * h);
        let dp_mid = riccati_rhs(&mid);
        p += dp_mid * h;
        p = (&p + p.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotStabilizable(
                "Riccati flow diverged; pair likely not stabilizable".into(),
            ));
        }
        iters += 1;
        if iters % 25 == 0 {
            stabilized = max_real_eig(&(a - &s * &p)) < -1e-9;
        }
    }
    if !stabilized {
        return Err(Error::NotStabilizable(format!(
            "no stabilizing gain after {iters} Riccati flow steps"
        )));
    }

    // Newton-Kleinman polish.
    for _ in 0..60 {
        let k = -(&r_inv * b.transpose() * &p);
        let a_cl = a + b * &k;
        if max_real_eig(&a_cl) >= 0.0 {
            return Err(Error::NotStabilizable(
                "Newton iterate lost the stabilizing property".into(),
            ));
        }
        let rhs = q + k.transpose() * r * &k;
        let p_next = lyapunov_solve(&a_cl, &rhs)?;
        let delta = (&p_next - &p).norm();
        p = p_next;
        if delta <= 1e-12 * (1.0 + p.norm()) {
            break;
        }
    }
    Ok(p)
}

/// Synthesize the local controller, terminal weight and terminal radius.
///
/// `K_loc` is the infinite-horizon quadratic regulator for `(A, B, Q, R)`;
/// `P` solves `(A+BK)ᵀP + P(A+BK) = −(Q̃ + βI)` with `β` a small slack so
/// the decrease certificate is strict; ε is found by doubling-then-
/// bisection so that `K_loc ξ ∈ Ū` on sampled boundary points of
/// `{‖ξ‖_P = ε}`, then shrunk by 5%.
pub fn terminal_ingredients(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    input_constraints: &[(usize, ConstraintSet)],
    boundary_samples: usize,
    seed: u64,
) -> Result<TerminalIngredients> {
    const BETA: f64 = 1e-6;
    let n = a.nrows();
    let p_care = care_solve(&a, &b, q, r)?;
    let r_inv = r.clone().cholesky().unwrap().inverse();
    let k_loc = -(&r_inv * b.transpose() * &p_care);
    let a_cl = &a + &b * &k_loc;
    if max_real_eig(&a_cl) >= 0.0 {
        return Err(Error::NotStabilizable(
            "closed-loop matrix is not Hurwitz".into(),
        ));
    }
    let q_tilde = q + k_loc.transpose() * r * &k_loc;
    let p = lyapunov_solve(&a_cl, &(&q_tilde + DMatrix::identity(n, n) * BETA))?;
    if p.clone().cholesky().is_none() {
        return Err(Error::NumericalFailure(
            "terminal weight is not positive definite".into(),
        ));
    }

    // Boundary parameterization ξ = ε P^{-1/2} û.
    let eig = p.clone().symmetric_eigen();
    let mut p_inv_sqrt = DMatrix::zeros(n, n);
    for i in 0..n {
        let li = eig.eigenvalues[i];
        if li <= 0.0 {
            return Err(Error::NumericalFailure(
                "terminal weight has a nonpositive eigenvalue".into(),
            ));
        }
        let col = eig.eigenvectors.column(i);
        p_inv_sqrt += col * col.transpose() / li.sqrt();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<DVector<f64>> = (0..boundary_samples.max(8))
        .map(|_| {
            let mut v = DVector::from_fn(n, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let nv = v.norm();
            if nv > 0.0 {
                v /= nv;
            }
            v
        })
        .collect();
    let admissible = |eps: f64| -> bool {
        dirs.iter().all(|u| {
            let xi = &p_inv_sqrt * u * eps;
            let u_loc = &k_loc * xi;
            input_constraints.iter().all(|(off, set)| {
                let seg = u_loc.rows(*off, set.dim()).into_owned();
                set.contains(&seg, 1e-12)
            })
        })
    };

    const GRID_MAX: f64 = 1e9;
    let mut lo = 0.0_f64;
    let mut hi = 1e-3_f64;
    let mut grid_limited = false;
    while admissible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi >= GRID_MAX {
            grid_limited = true;
            hi = GRID_MAX;
            break;
        }
    }
    if !grid_limited {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if admissible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let epsilon = 0.95 * if grid_limited { hi } else { lo };
    if epsilon <= 0.0 {
        return Err(Error::InfeasibleGains(
            "terminal region collapsed: local controller violates the input set at any radius"
                .into(),
        ));
    }

    Ok(TerminalIngredients {
        a,
        b,
        k_loc,
        p,
        q_tilde,
        epsilon,
        epsilon_grid_limited: grid_limited,
    })
}

impl TerminalIngredients {
    /// `λ_min(P)`, the constant translating the ε level set into a
    /// Euclidean radius.
    pub fn p_min_eigenvalue(&self) -> f64 {
        self.p.clone().symmetric_eigen().eigenvalues.min()
    }

    /// Residual `λ_max((A+BK)ᵀP + P(A+BK) + Q̃)`; at most `−β` up to
    /// rounding by construction.
    pub fn lyapunov_residual(&self) -> f64 {
        let a_cl = &self.a + &self.b * &self.k_loc;
        let m = a_cl.transpose() * &self.p + &self.p * a_cl + &self.q_tilde;
        ((&m + m.transpose()) * 0.5).symmetric_eigen().eigenvalues.max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_kronecker_route_matches_direct_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -2.0]);
        let q = DMatrix::identity(2, 2);
        let p = lyapunov_solve(&a, &q).unwrap();
        let res = a.transpose() * &p + &p * &a + q;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn double_integrator_riccati_analytic() {
        // A = [[0,1],[0,0]], B = [0;1], Q = I, R = 1 has the closed-form
        // stabilizing solution P = [[√3, 1], [1, √3]].
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let p = care_solve(&a, &b, &q, &r).unwrap();
        let s3 = 3.0_f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        assert_relative_eq!(p, expected, epsilon = 1e-6);
    }

    #[test]
    fn hurwitz_open_loop_without_actuation() {
        // B = 0 with Hurwitz A degenerates to a pure Lyapunov problem and a
        // zero local gain is admissible.
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -0.5]));
        let b = DMatrix::zeros(2, 1);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let ing = terminal_ingredients(
            a,
            b,
            &q,
            &r,
            &[(0, ConstraintSet::ball0(1, 1.0).unwrap())],
            64,
            1,
        )
        .unwrap();
        assert!(ing.k_loc.norm() < 1e-12);
        assert!(ing.lyapunov_residual() <= 1e-8);
    }

    #[test]
    fn unconstrained_epsilon_hits_grid_ceiling() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let ing = terminal_ingredients(
            a,
            b,
            &q,
            &r,
            &[(0, ConstraintSet::ball0(1, 1e9).unwrap())],
            64,
            2,
        )
        .unwrap();
        assert!(ing.epsilon_grid_limited);
    }

    #[test]
    fn decrease_certificate_and_input_admissibility_on_boundary() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2) * 0.5;
        let r = DMatrix::identity(1, 1) * 0.5;
        let u_set = ConstraintSet::ball0(1, 0.8).unwrap();
        let ing =
            terminal_ingredients(a, b, &q, &r, &[(0, u_set.clone())], 512, 3).unwrap();
        assert!(ing.lyapunov_residual() <= 1e-8);
        assert!(!ing.epsilon_grid_limited);
        // Re-sample fresh boundary points and check the gain stays inside
        // the input set.
        let eig = ing.p.clone().symmetric_eigen();
        let mut p_inv_sqrt = DMatrix::zeros(2, 2);
        for i in 0..2 {
            let col = eig.eigenvectors.column(i);
            p_inv_sqrt += col * col.transpose() / eig.eigenvalues[i].sqrt();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let mut v = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n == 0.0 {
                continue;
            }
            v /= n;
            let xi = &p_inv_sqrt * v * ing.epsilon;
            let u = &ing.k_loc * xi;
            assert!(u_set.contains(&u, 1e-9));
        }
    }
}
