//! Tube-based nonlinear model predictive force control for underwater
//! vehicle-manipulator systems.
//!
//! The crate models a 6-DoF underwater vehicle carrying a serial arm in
//! compliant contact with the environment, and closes the loop with a
//! two-layer robust controller: a finite-horizon optimal control problem
//! solved on-line for the nominal (disturbance-free) system under
//! tightened constraints, plus an off-line ancillary feedback that keeps
//! the real trajectory inside an invariant tube around the nominal one.
//!
//! Modules follow the pipeline:
//!
//! * [`kinematics`] — frames, DH chains, forward kinematics and the task
//!   Jacobian;
//! * [`dynamics`] — contact wrench, acceleration- and velocity-level plant
//!   models, disturbance generators and RK4 integration ([`integrate`]);
//! * [`sets`] / [`bounds`] / [`gains`] — set arithmetic, region bound
//!   estimation and tube-gain synthesis with constraint tightening;
//! * [`tube`] — the ancillary feedback and deviation bookkeeping;
//! * [`nmpc`] — terminal ingredients and the shooting solver;
//! * [`scenario`] — the end-to-end closed-loop experiment, Monte-Carlo
//!   tube verification and trajectory logging.
//!
//! The `book/` directory of the repository walks through the same
//! pipeline chapter by chapter; its code snippets compile and run as part
//! of this crate's doctests.

pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod gains;
pub mod integrate;
pub mod kinematics;
pub mod nmpc;
pub mod scenario;
pub mod sets;
pub mod tube;

pub use error::{Error, Result};

// The guide chapters double as doctests so the book can never drift from
// the library's actual API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(kinematics, "../../../book/src/kinematics.md");
    chapter!(plant, "../../../book/src/plant.md");
    chapter!(sets_and_bounds, "../../../book/src/sets-and-bounds.md");
    chapter!(tube, "../../../book/src/tube.md");
    chapter!(nmpc, "../../../book/src/nmpc.md");
    chapter!(scenario, "../../../book/src/scenario.md");
    chapter!(cli, "../../../book/src/cli.md");
}
