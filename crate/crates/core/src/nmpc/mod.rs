//! Receding-horizon optimal control: linearization, terminal-ingredient
//! synthesis and the finite-horizon problem solver.

mod linearize;
mod solver;
mod terminal;

pub use linearize::{controllability_rank, jacobian_linearize};
pub use solver::{
    shifted_warm_start, solve_fhocp, FhocpConfig, FhocpSolution, FhocpStatus, NominalPlant,
};
pub use terminal::{care_solve, lyapunov_solve, terminal_ingredients, TerminalIngredients};
