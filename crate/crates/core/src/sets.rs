//! Set arithmetic for constraint tightening.
//!
//! Two representations cover everything the controller needs: Euclidean
//! norm balls (velocity and input constraints, tube cross-sections) and
//! axis-aligned boxes (pose and joint limits). The operations are the
//! Minkowski sum `⊕`, the Pontryagin difference `⊖` and the matrix-set
//! product `B ∘ S = {Bs : s ∈ S}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// A constraint region: either a Euclidean norm ball or an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    NormBall { center: DVector<f64>, radius: f64 },
    Box { lo: DVector<f64>, hi: DVector<f64> },
}

impl ConstraintSet {
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if radius < 0.0 || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        Ok(ConstraintSet::NormBall { center, radius })
    }

    /// Origin-centered ball.
    pub fn ball0(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(DVector::zeros(dim), radius)
    }

    pub fn boxed(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::InvalidParameter(
                "box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(ConstraintSet::Box { lo, hi })
    }

    /// Symmetric box `[-half, half]` per axis.
    pub fn symmetric_box(half: DVector<f64>) -> Result<Self> {
        Self::boxed(-half.clone(), half)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::NormBall { center, .. } => center.len(),
            ConstraintSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            ConstraintSet::NormBall { center, radius } => (x - center).norm() <= radius + tol,
            ConstraintSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
        }
    }

    pub fn contains_origin(&self, tol: f64) -> bool {
        self.contains(&DVector::zeros(self.dim()), tol)
    }

    /// Signed distance-like violation: 0 inside, positive outside. For balls
    /// this is `‖x − c‖ − r`; for boxes the largest per-axis overshoot.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintSet::NormBall { center, radius } => ((x - center).norm() - radius).max(0.0),
            ConstraintSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
                .fold(0.0, f64::max),
        }
    }

    /// Uniform sample from the set.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            ConstraintSet::NormBall { center, radius } => {
                let n = center.len();
                let mut u = DVector::from_fn(n, |_, _| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let nu = u.norm();
                if nu > 0.0 {
                    u /= nu;
                }
                let r = *radius * rng.gen::<f64>().powf(1.0 / n as f64);
                center + u * r
            }
            ConstraintSet::Box { lo, hi } => {
                DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..=hi[i]))
            }
        }
    }

    /// Translate the set by `shift`.
    pub fn translate(&self, shift: &DVector<f64>) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: shift.len(),
            });
        }
        Ok(match self {
            ConstraintSet::NormBall { center, radius } => ConstraintSet::NormBall {
                center: center + shift,
                radius: *radius,
            },
            ConstraintSet::Box { lo, hi } => ConstraintSet::Box {
                lo: lo + shift,
                hi: hi + shift,
            },
        })
    }
}

fn check_dims(a: &ConstraintSet, b: &ConstraintSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Minkowski sum `a ⊕ b`.
///
/// Ball ⊕ ball is exact (radii and centers add). Box ⊕ box is the exact
/// componentwise interval sum. Box ⊕ ball returns the box inflated by the
/// radius on every face — exact for an ∞-norm ball, an outer bound for the
/// Euclidean ball used here.
pub fn minkowski_sum(a: &ConstraintSet, b: &ConstraintSet) -> Result<ConstraintSet> {
    use ConstraintSet::*;
    check_dims(a, b)?;
    match (a, b) {
        (
            NormBall { center: c1, radius: r1 },
            NormBall { center: c2, radius: r2 },
        ) => Ok(NormBall {
            center: c1 + c2,
            radius: r1 + r2,
        }),
        (Box { lo: l1, hi: h1 }, Box { lo: l2, hi: h2 }) => Ok(Box {
            lo: l1 + l2,
            hi: h1 + h2,
        }),
        (Box { lo, hi }, NormBall { center, radius })
        | (NormBall { center, radius }, Box { lo, hi }) => Ok(Box {
            lo: lo + center - DVector::from_element(lo.len(), *radius),
            hi: hi + center + DVector::from_element(hi.len(), *radius),
        }),
    }
}

/// Pontryagin difference `a ⊖ b = {x : x + s ∈ a ∀ s ∈ b}` for a ball `b`.
///
/// Ball ⊖ ball shrinks the radius. Box ⊖ ball moves every face inward by
/// the radius; this is the exact erosion for the per-axis interval
/// constraints used here, since each scalar constraint `|xᵢ| ≤ cᵢ` erodes
/// to `|xᵢ| ≤ cᵢ − r`.
pub fn pontryagin_diff(a: &ConstraintSet, b: &ConstraintSet) -> Result<ConstraintSet> {
    use ConstraintSet::*;
    check_dims(a, b)?;
    let (bc, br) = match b {
        NormBall { center, radius } => (center, *radius),
        Box { .. } => {
            return Err(Error::UnsupportedCombination(
                "pontryagin_diff subtrahend must be a norm ball",
            ))
        }
    };
    match a {
        NormBall { center, radius } => {
            let r = radius - br;
            if r < 0.0 {
                return Err(Error::EmptyResult(format!(
                    "ball radius {radius} eroded by {br}"
                )));
            }
            Ok(NormBall {
                center: center - bc,
                radius: r,
            })
        }
        Box { lo, hi } => {
            let lo2 = lo - bc + DVector::from_element(lo.len(), br);
            let hi2 = hi - bc - DVector::from_element(hi.len(), br);
            if lo2.iter().zip(hi2.iter()).any(|(l, h)| l > h) {
                return Err(Error::EmptyResult(format!(
                    "box width smaller than erosion radius {br}"
                )));
            }
            Ok(Box { lo: lo2, hi: hi2 })
        }
    }
}

/// Matrix-set product `Λ ∘ s` for a norm ball: `ball(Λc, ‖Λ‖₂·r)`.
///
/// Exact when `Λ` is a scalar multiple of an orthogonal matrix (in
/// particular for `λI`); an outer bound otherwise.
pub fn matrix_set_multiply(lambda: &DMatrix<f64>, s: &ConstraintSet) -> Result<ConstraintSet> {
    if lambda.ncols() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: lambda.ncols(),
            got: s.dim(),
        });
    }
    match s {
        ConstraintSet::NormBall { center, radius } => {
            let norm = spectral_norm(lambda);
            Ok(ConstraintSet::NormBall {
                center: lambda * center,
                radius: norm * radius,
            })
        }
        ConstraintSet::Box { .. } => Err(Error::UnsupportedCombination(
            "matrix-set product is only defined for norm balls",
        )),
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Translate a task-state constraint set into error coordinates:
/// `ℰ = 𝒳 ⊕ (−χ_des)`.
pub fn error_constraint_set(x: &ConstraintSet, chi_des: &DVector<f64>) -> Result<ConstraintSet> {
    x.translate(&(-chi_des))
}
