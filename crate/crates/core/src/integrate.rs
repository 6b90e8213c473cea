//! Fixed-step classical Runge-Kutta integration.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One RK4 step of `ẏ = f(t, y)` from `t` over `h`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration step must be positive, got {h}"
        )));
    }
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite state after RK4 stage".into(),
        ));
    }
    Ok(next)
}

/// Integrate over `[t0, t0 + n·h]` returning the final state.
pub fn rk4_n_steps<F>(
    f: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    h: f64,
    n: usize,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut y = y0.clone();
    for i in 0..n {
        y = rk4_step(f, t0 + i as f64 * h, &y, h)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_rhs_keeps_state() {
        let y = DVector::from_row_slice(&[1.0, -2.0, 3.0]);
        let out = rk4_step(&mut |_, _| Ok(DVector::zeros(3)), 0.0, &y, 0.1).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn exponential_decay_one_step() {
        let y = DVector::from_row_slice(&[1.0]);
        let out = rk4_step(&mut |_, y: &DVector<f64>| Ok(-y.clone()), 0.0, &y, 0.1).unwrap();
        assert_relative_eq!(out[0], 0.904837418, epsilon = 1e-7);
    }

    #[test]
    fn halving_step_reduces_error_sixteenfold() {
        let y0 = DVector::from_row_slice(&[1.0]);
        let mut f = |_: f64, y: &DVector<f64>| Ok(-y.clone());
        let exact = (-0.2_f64).exp();
        let coarse = (rk4_step(&mut f, 0.0, &y0, 0.2).unwrap()[0] - exact).abs();
        let fine = (rk4_n_steps(&mut f, 0.0, &y0, 0.1, 2).unwrap()[0] - exact).abs();
        let ratio = coarse / fine;
        assert!(
            (10.0..26.0).contains(&ratio),
            "error ratio {ratio} not ~16 for an order-4 method"
        );
    }

    #[test]
    fn non_finite_rhs_is_reported() {
        let y = DVector::from_row_slice(&[1.0]);
        let res = rk4_step(
            &mut |_, _| Ok(DVector::from_row_slice(&[f64::NAN])),
            0.0,
            &y,
            0.1,
        );
        assert!(matches!(res, Err(Error::NumericalFailure(_))));
    }
}
