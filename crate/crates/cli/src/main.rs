//! Command-line front end: scenario simulation, bound estimation, gain
//! synthesis, Monte-Carlo tube checks and plot-series extraction.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use uvms_mpc::bounds::{JacobianBounds, LipschitzBounds};
use uvms_mpc::gains::tube_gains;
use uvms_mpc::scenario::{
    estimate_scenario_bounds, monte_carlo_tube_check, run_closed_loop, BoundsReport,
    ScenarioConfig,
};
use uvms_mpc::Error;

#[derive(Parser)]
#[command(name = "uvms-mpc", version, about = "Tube-based MPC force-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop scenario and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Estimate region bounds over the scenario's operating sets.
    Bounds(BoundsArgs),
    /// Synthesize tube gains from a bounds report.
    Gains(GainsArgs),
    /// Monte-Carlo tube verification over disturbance realizations.
    TubeCheck(TubeCheckArgs),
    /// Extract per-figure series from a trajectory log.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-anchor the nominal state at the measured state each sampling
    /// instant.
    #[arg(long)]
    renominalize: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GainsArgs {
    /// Bounds report produced by the `bounds` subcommand.
    #[arg(long)]
    bounds: PathBuf,
    #[arg(long = "sigma-under", default_value_t = 1.0)]
    sigma_under: f64,
    #[arg(long = "d-tilde", default_value_t = 0.2)]
    d_tilde: f64,
    #[arg(long = "rho-margin", default_value_t = 2.0)]
    rho_margin: f64,
    #[arg(long = "k-margin", default_value_t = 2.0)]
    k_margin: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TubeCheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the run fan-out (default: all processors).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PlotDataArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subtract a constant target (six comma-separated values) so the
    /// position/orientation series become error series.
    #[arg(long = "chi-des", value_delimiter = ',', num_args = 6)]
    chi_des: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn verbose() -> bool {
    std::env::var("UVMS_MPC_LOG")
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Bounds(a) => bounds(a),
        Command::Gains(a) => gains(a),
        Command::TubeCheck(a) => tube_check(a),
        Command::PlotData(a) => plot_data(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut cfg = ScenarioConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.renominalize {
        cfg.fhocp.renominalize = true;
    }
    let log = run_closed_loop(&cfg)?;
    if verbose() {
        for d in &log.diagnostics {
            eprintln!(
                "step {:3} t={:5.2} cost={:10.6} kkt={:9.2e} iters={:3} viol={:9.2e} term_margin={:8.4} {}",
                d.step, d.t, d.cost, d.kkt_residual, d.iterations, d.max_violation,
                d.terminal_margin, d.status.as_str()
            );
        }
    }
    let mut f = fs::File::create(&a.out)?;
    log.write_csv(&mut f)?;
    let diag_path = a.out.with_extension("diag.csv");
    let mut fd = fs::File::create(&diag_path)?;
    log.write_diagnostics_csv(&mut fd)?;
    eprintln!(
        "wrote {} rows to {} (diagnostics: {})",
        log.rows.len(),
        a.out.display(),
        diag_path.display()
    );
    Ok(())
}

fn bounds(a: BoundsArgs) -> Result<(), Error> {
    let cfg = ScenarioConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let report = estimate_scenario_bounds(&cfg, a.samples, seed)?;
    fs::write(
        &a.out,
        toml::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    eprintln!("wrote bounds report to {}", a.out.display());
    Ok(())
}

fn gains(a: GainsArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&a.bounds)?;
    let report: BoundsReport = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let jb = JacobianBounds {
        j_under: report.j_under,
        j_bar: report.j_bar,
        j_tilde: report.j_tilde,
        samples: report.samples,
        seed: report.seed,
    };
    let lips = LipschitzBounds::new(report.l_c, report.l1, report.l2);
    let params = tube_gains(&jb, &lips, a.d_tilde, a.sigma_under, a.rho_margin, a.k_margin)?;
    fs::write(
        &a.out,
        toml::to_string_pretty(&params).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    eprintln!("wrote tube gains to {}", a.out.display());
    Ok(())
}

fn tube_check(a: TubeCheckArgs) -> Result<(), Error> {
    if let Some(workers) = a.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = ScenarioConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let report = monte_carlo_tube_check(&cfg, a.runs)?;
    fs::write(&a.out, report.to_toml_string())?;
    eprintln!(
        "runs={} violations={} max_e_ratio={:.4} max_z_ratio={:.4} feasible={}",
        report.runs, report.violations, report.max_e_ratio, report.max_z_ratio,
        report.all_feasible
    );
    if report.violations > 0 || !report.all_feasible {
        return Err(Error::TubeViolation(format!(
            "{} violations across {} runs",
            report.violations, report.runs
        )));
    }
    Ok(())
}

fn plot_data(a: PlotDataArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&a.log)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty log file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| -> Result<usize, Error> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` missing from log")))
    };
    let t_i = idx("t")?;
    let chi: Vec<usize> = (1..=6).map(|i| idx(&format!("chi_{i}"))).collect::<Result<_, _>>()?;
    let chibar: Vec<usize> = (1..=6)
        .map(|i| idx(&format!("chibar_{i}")))
        .collect::<Result<_, _>>()?;
    // Velocity blocks: ν₁ = u_1..3, ν₂ = u_4..6, q̇ = the rest.
    let mut u_cols = Vec::new();
    let mut k = 1;
    while let Ok(i) = idx(&format!("u_{k}")) {
        u_cols.push(i);
        k += 1;
    }
    if u_cols.len() < 6 {
        return Err(Error::Config("log has fewer than 6 input columns".into()));
    }

    fs::create_dir_all(&a.out)?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let target = a.chi_des.unwrap_or_default();
    let shift = |v: f64, j: usize| -> f64 {
        if target.len() == 6 {
            v - target[j]
        } else {
            v
        }
    };
    let parse = |s: &str| -> Result<f64, Error> {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("bad float `{s}`: {e}")))
    };

    let write_series = |path: &Path, head: &str, body: &mut dyn FnMut(&mut String) -> Result<(), Error>| -> Result<(), Error> {
        let mut out = String::from(head);
        out.push('\n');
        body(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    };

    write_series(
        &a.out.join("position.csv"),
        "t,p1,p2,p3,pbar1,pbar2,pbar3",
        &mut |out| {
            for r in &rows {
                let mut fields = vec![r[t_i].to_string()];
                for j in 0..3 {
                    fields.push(format!("{}", shift(parse(r[chi[j]])?, j)));
                }
                for j in 0..3 {
                    fields.push(format!("{}", shift(parse(r[chibar[j]])?, j)));
                }
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            Ok(())
        },
    )?;

    write_series(
        &a.out.join("orientation.csv"),
        "t,o1,o2,o3,obar1,obar2,obar3",
        &mut |out| {
            for r in &rows {
                let mut fields = vec![r[t_i].to_string()];
                for j in 3..6 {
                    fields.push(format!("{}", shift(parse(r[chi[j]])?, j)));
                }
                for j in 3..6 {
                    fields.push(format!("{}", shift(parse(r[chibar[j]])?, j)));
                }
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            Ok(())
        },
    )?;

    write_series(
        &a.out.join("inputs.csv"),
        "t,nu1_norm,nu2_norm,qdot_norm",
        &mut |out| {
            for r in &rows {
                let norm_of = |range: std::ops::Range<usize>| -> Result<f64, Error> {
                    let mut s = 0.0;
                    for i in range {
                        let v = parse(r[u_cols[i]])?;
                        s += v * v;
                    }
                    Ok(s.sqrt())
                };
                let line = format!(
                    "{},{},{},{}",
                    r[t_i],
                    norm_of(0..3)?,
                    norm_of(3..6)?,
                    norm_of(6..u_cols.len())?
                );
                out.push_str(&line);
                out.push('\n');
            }
            Ok(())
        },
    )?;
    eprintln!("wrote plot series to {}", a.out.display());
    Ok(())
}
