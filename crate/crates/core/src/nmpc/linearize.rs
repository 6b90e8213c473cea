//! Finite-difference linearization of nominal dynamics around an
//! equilibrium.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference Jacobians `(A, B)` of `rhs(x, u)` at `(x_eq, u_eq)`,
/// with steps scaled by `1 + |component|`.
pub fn jacobian_linearize<F>(
    mut rhs: F,
    x_eq: &DVector<f64>,
    u_eq: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    let f0 = rhs(x_eq, u_eq)?;
    let nx = x_eq.len();
    let nu = u_eq.len();
    let nf = f0.len();
    let mut a = DMatrix::zeros(nf, nx);
    let mut b = DMatrix::zeros(nf, nu);
    for i in 0..nx {
        let h = 1e-6 * (1.0 + x_eq[i].abs());
        let mut xp = x_eq.clone();
        let mut xm = x_eq.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = rhs(&xp, u_eq)?;
        let fm = rhs(&xm, u_eq)?;
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite difference in state column {i}"
            )));
        }
        a.set_column(i, &col);
    }
    for i in 0..nu {
        let h = 1e-6 * (1.0 + u_eq[i].abs());
        let mut up = u_eq.clone();
        let mut um = u_eq.clone();
        up[i] += h;
        um[i] -= h;
        let fp = rhs(x_eq, &up)?;
        let fm = rhs(x_eq, &um)?;
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite difference in input column {i}"
            )));
        }
        b.set_column(i, &col);
    }
    Ok((a, b))
}

/// Numerical rank of the controllability matrix `[B, AB, …, A^{n−1}B]`
/// through its singular values.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let mut blocks = DMatrix::zeros(n, n * b.ncols());
    let mut cur = b.clone();
    for i in 0..n {
        blocks.view_mut((0, i * b.ncols()), (n, b.ncols())).copy_from(&cur);
        cur = a * &cur;
    }
    let sv = blocks.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax.max(1e-300)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_linear_system() {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.7]);
        let b0 = DMatrix::from_row_slice(2, 1, &[0.5, -0.25]);
        let (a, b) = jacobian_linearize(
            |x: &DVector<f64>, u: &DVector<f64>| Ok(&a0 * x + &b0 * u),
            &DVector::from_row_slice(&[0.4, -0.2]),
            &DVector::from_row_slice(&[0.1]),
        )
        .unwrap();
        assert_relative_eq!(a, a0, epsilon = 1e-6);
        assert_relative_eq!(b, b0, epsilon = 1e-6);
    }

    #[test]
    fn nonlinear_pattern_at_origin() {
        // rhs = (sin x₁, u₁): A = [[1,0],[0,0]], B = [0; 1].
        let (a, b) = jacobian_linearize(
            |x: &DVector<f64>, u: &DVector<f64>| {
                Ok(DVector::from_row_slice(&[x[0].sin(), u[0]]))
            },
            &DVector::zeros(2),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(a[(0, 0)], 1.0, epsilon = 1e-9);
        assert!(a[(0, 1)].abs() + a[(1, 0)].abs() + a[(1, 1)].abs() < 1e-9);
        assert_relative_eq!(b[(1, 0)], 1.0, epsilon = 1e-9);
        assert!(b[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn controllability_rank_detects_both_cases() {
        // Double integrator is controllable; a decoupled unactuated state
        // drops the rank.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(controllability_rank(&a, &b, 1e-10), 2);
        let b2 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(controllability_rank(&a, &b2, 1e-10), 1);
    }
}
