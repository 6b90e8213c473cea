//! Trajectory logging and CSV emission.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::Result;
use crate::nmpc::FhocpStatus;

/// One sample of the closed loop at the logging cadence (one tenth of the
/// sampling period).
#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub chi: DVector<f64>,
    pub chi_bar: DVector<f64>,
    /// Realized body velocity (the applied input at the kinematic level).
    pub zeta: DVector<f64>,
    /// Applied input `𝔲 = ū + κ`.
    pub u: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub kappa: DVector<f64>,
    pub e_dev_norm: f64,
    pub z_dev_norm: f64,
    pub fhocp_cost: f64,
    pub fhocp_status: FhocpStatus,
}

/// Per-solve diagnostics, one entry per sampling instant.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub terminal_margin: f64,
    pub status: FhocpStatus,
}

/// Synthesis constants carried alongside the rows so reports can be
/// reconstructed from a log alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub sigma: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub j_under: f64,
    pub l_c: f64,
    pub j_bar_cap: f64,
    pub epsilon: f64,
    pub p_min_eig: f64,
    pub dt: f64,
    pub substeps: usize,
    pub chi_des: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    /// Input dimension (6 + joint count).
    pub input_dim: usize,
    pub rows: Vec<LogRow>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub summary: RunSummary,
}

impl TrajectoryLog {
    pub fn new(input_dim: usize, summary: RunSummary) -> Self {
        Self {
            input_dim,
            rows: Vec::new(),
            diagnostics: Vec::new(),
            summary,
        }
    }

    /// The trajectory CSV header: time, real and nominal task states, the
    /// realized velocity, applied/nominal/ancillary inputs, deviation
    /// norms and solver outcome.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        for i in 1..=6 {
            cols.push(format!("chi_{i}"));
        }
        for i in 1..=6 {
            cols.push(format!("chibar_{i}"));
        }
        for name in ["zeta", "u", "ubar", "kappa"] {
            for i in 1..=self.input_dim {
                cols.push(format!("{name}_{i}"));
            }
        }
        cols.push("e_dev_norm".into());
        cols.push("z_dev_norm".into());
        cols.push("fhocp_cost".into());
        cols.push("fhocp_status".into());
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        for r in &self.rows {
            let mut fields: Vec<String> = vec![fmt(r.t)];
            fields.extend(r.chi.iter().map(|v| fmt(*v)));
            fields.extend(r.chi_bar.iter().map(|v| fmt(*v)));
            fields.extend(r.zeta.iter().map(|v| fmt(*v)));
            fields.extend(r.u.iter().map(|v| fmt(*v)));
            fields.extend(r.u_bar.iter().map(|v| fmt(*v)));
            fields.extend(r.kappa.iter().map(|v| fmt(*v)));
            fields.push(fmt(r.e_dev_norm));
            fields.push(fmt(r.z_dev_norm));
            fields.push(fmt(r.fhocp_cost));
            fields.push(r.fhocp_status.as_str().to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Per-solve diagnostics as a companion CSV.
    pub fn write_diagnostics_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "step,t,cost,kkt_residual,iterations,max_violation,terminal_margin,status"
        )?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                d.step,
                fmt(d.t),
                fmt(d.cost),
                fmt(d.kkt_residual),
                d.iterations,
                fmt(d.max_violation),
                fmt(d.terminal_margin),
                d.status.as_str()
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("valid utf8")
    }
}

fn fmt(v: f64) -> String {
    // Shortest round-trip float formatting keeps logs byte-reproducible.
    format!("{v}")
}
