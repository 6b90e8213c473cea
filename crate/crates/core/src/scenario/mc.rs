//! Monte-Carlo verification of the invariant tube across disturbance
//! realizations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DisturbanceSignal;
use crate::error::{Error, Result};

use super::{Prepared, ScenarioConfig, TrajectoryLog};

/// Aggregated tube statistics over independently disturbed runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeCheckReport {
    pub runs: usize,
    pub seed: u64,
    /// max over runs and samples of ‖𝔢‖/ω₁.
    pub max_e_ratio: f64,
    /// max over runs and samples of ‖𝔷‖/ω₂.
    pub max_z_ratio: f64,
    /// Logged samples outside either tube ball (aborted runs count too).
    pub violations: usize,
    /// max over post-entry samples of ‖χ−χ_des‖ − (ε/√λ_min(P) + ω₁).
    pub theorem_chi_residual: f64,
    /// max over post-entry samples of ‖ζ‖ − (ε/√λ_min(P) + ω₂).
    pub theorem_zeta_residual: f64,
    /// Every optimal control problem reported solved.
    pub all_feasible: bool,
    /// Runs that aborted, with their seeds and reasons.
    pub failures: Vec<(u64, String)>,
}

/// Admissible disturbance realization for run `i`: rotate through
/// sinusoids with random direction/phase/amplitude, uniform draws inside
/// the ball, and the worst-direction probe at the full bound.
fn disturbance_for_run(template: &DisturbanceSignal, base_seed: u64, i: usize) -> DisturbanceSignal {
    let bound = template.bound();
    let dim = template.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ (0xD1CE_5EED ^ i as u64).rotate_left(17));
    match i % 3 {
        0 => {
            let dir: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            DisturbanceSignal::Sinusoidal {
                amplitude: bound * rng.gen_range(0.5..=1.0),
                dim,
                frequency: rng.gen_range(0.5..2.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                direction: Some(dir),
            }
        }
        1 => DisturbanceSignal::UniformRandom {
            amplitude: bound,
            dim,
            hold_dt: 0.01,
            seed: rng.gen(),
        },
        _ => DisturbanceSignal::Adversarial {
            amplitude: bound,
            dim,
        },
    }
}

struct RunStats {
    max_e_ratio: f64,
    max_z_ratio: f64,
    violations: usize,
    chi_residual: f64,
    zeta_residual: f64,
    feasible: bool,
}

fn analyze(prepared: &Prepared, log: &TrajectoryLog) -> RunStats {
    let omega1 = prepared.omega1;
    let omega2 = prepared.omega2;
    let band = prepared.terminal_band();
    let chi_des = &prepared.chi_des;
    let mut s = RunStats {
        max_e_ratio: 0.0,
        max_z_ratio: 0.0,
        violations: 0,
        chi_residual: f64::NEG_INFINITY,
        zeta_residual: f64::NEG_INFINITY,
        feasible: log
            .diagnostics
            .iter()
            .all(|d| d.status == crate::nmpc::FhocpStatus::Solved),
    };
    // Entry time of the nominal trajectory into the terminal set.
    let entry = log
        .rows
        .iter()
        .position(|r| prepared.nominal_terminal_norm(r) <= prepared.ingredients.epsilon);
    for (idx, r) in log.rows.iter().enumerate() {
        let e_ratio = if omega1 > 0.0 { r.e_dev_norm / omega1 } else { 0.0 };
        let z_ratio = if omega2 > 0.0 { r.z_dev_norm / omega2 } else { 0.0 };
        s.max_e_ratio = s.max_e_ratio.max(e_ratio);
        s.max_z_ratio = s.max_z_ratio.max(z_ratio);
        if e_ratio > 1.0 + 1e-9 || z_ratio > 1.0 + 1e-9 {
            s.violations += 1;
        }
        if let Some(t0) = entry {
            if idx >= t0 {
                let chi_err = (&r.chi - chi_des).norm();
                s.chi_residual = s.chi_residual.max(chi_err - (band + omega1));
                s.zeta_residual = s.zeta_residual.max(r.zeta.norm() - (band + omega2));
            }
        }
    }
    s
}

/// Repeat the closed loop under independently seeded admissible
/// disturbances and report tube and convergence statistics.
pub fn monte_carlo_tube_check(config: &ScenarioConfig, runs: usize) -> Result<TubeCheckReport> {
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be >= 1".into()));
    }
    let prepared = Prepared::new(config)?;
    let results: Vec<(usize, std::result::Result<RunStats, String>)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let dist = disturbance_for_run(&config.disturbance, config.seed, i);
            let out = match prepared.run(&dist) {
                Ok(log) => Ok(analyze(&prepared, &log)),
                Err(e) => Err(e.to_string()),
            };
            (i, out)
        })
        .collect();

    let mut report = TubeCheckReport {
        runs,
        seed: config.seed,
        max_e_ratio: 0.0,
        max_z_ratio: 0.0,
        violations: 0,
        theorem_chi_residual: f64::NEG_INFINITY,
        theorem_zeta_residual: f64::NEG_INFINITY,
        all_feasible: true,
        failures: Vec::new(),
    };
    for (i, r) in results {
        match r {
            Ok(s) => {
                report.max_e_ratio = report.max_e_ratio.max(s.max_e_ratio);
                report.max_z_ratio = report.max_z_ratio.max(s.max_z_ratio);
                report.violations += s.violations;
                report.theorem_chi_residual = report.theorem_chi_residual.max(s.chi_residual);
                report.theorem_zeta_residual = report.theorem_zeta_residual.max(s.zeta_residual);
                report.all_feasible &= s.feasible;
            }
            Err(msg) => {
                report.violations += 1;
                report.all_feasible = false;
                report.failures.push((config.seed ^ i as u64, msg));
            }
        }
    }
    Ok(report)
}

impl TubeCheckReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("report serializes")
    }
}
