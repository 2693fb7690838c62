//! ewlab: simulate the admissible harmonic elastic wave system, split it
//! into its divergence and curl sectors, trace acoustic null cones, and
//! run the acceptance suites.
//!
//! Exit codes: 0 success, 1 tolerance failure, 2 usage/config error,
//! 3 runtime instability.

use clap::{Parser, Subcommand};
use ewlab_core::config::RunConfig;
use ewlab_core::diagnostics::{
    decoupling_monitor, divpart_residual, energy_series, standard_energy, DivpartMutation,
    EnergyOptions,
};
use ewlab_core::error::EwError;
use ewlab_core::evolve::{plane_wave_period, plane_wave_state, rk4_step, simulate,
    simulate_decomposed, Polarization};
use ewlab_core::geometry::{
    bundle_geometry, null_fluxes, raychaudhuri_residual, snap_direction_count, trace_bundle,
    BundleOptions, RaychaudhuriMutation, ScalarSampler, SpacetimeMetric,
};
use ewlab_core::io;
use ewlab_core::metric::MetricStack;
use ewlab_core::rescale::SnapshotSeq;
use ewlab_core::spectral::{helmholtz_decompose, spectral_derivative, DerivKind};
use ewlab_core::suites;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ewlab",
    about = "Numerical laboratory for the 3D admissible harmonic elastic wave system",
    long_about = "Simulates the quasilinear multi-speed elastic wave equations on a \
periodic box, verifies the structural identities behind the divergence/curl \
decoupling, and traces the acoustic null-cone geometry of the faster wave.\n\n\
The JSON run config is the source of truth for runs; flags only select the \
config and command. Config defaults: cfl_safety 0.4, data.s_div = data.s_curl \
= 2.6, data.traveling = true, material defaults c1 = 1, c2 = 0.5, b_coef = 0.5, \
gamma = [0.4, 0.1]. EWLAB_THREADS caps parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a JSON config and write a trajectory directory.
    Simulate {
        /// Path to the run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config's output_dir or "./run").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full evolution plus the exactly-evolved linear curl sector
    /// and write the comparison diagnostics.
    Decompose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace a null-ray bundle from a cone tip through a stored trajectory.
    Geodesics {
        /// Trajectory directory produced by `simulate`.
        #[arg(long)]
        traj: PathBuf,
        /// Tip event "t,x,y,z".
        #[arg(long)]
        tip: String,
        /// Number of ray directions (snapped to 12, 42, 162, 642, ...).
        #[arg(long, default_value_t = 642)]
        nomega: usize,
        /// RK4 substeps per snapshot interval.
        #[arg(long, default_value_t = 4)]
        substeps: usize,
        /// Output CSV path (default: <traj>/geodesics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also evaluate the Raychaudhuri residual and print its maximum.
        #[arg(long, default_value_t = false)]
        raychaudhuri: bool,
    },
    /// Integrate null fluxes of a field component over a traced cone.
    Fluxes {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        tip: String,
        #[arg(long, default_value_t = 642)]
        nomega: usize,
        #[arg(long, default_value_t = 4)]
        substeps: usize,
        /// Scalar to integrate: "div_phi" or "curl_psi".
        #[arg(long, default_value = "curl_psi")]
        field: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance suite (or all of them).
    Check {
        /// piola | linear-waves | decoupling | raychaudhuri | coercive |
        /// convergence | all
        #[arg(long)]
        suite: String,
    },
    /// Richardson order estimates for the solver, tracer and residuals.
    Convergence {
        /// Optional run config whose grid/material seed the study.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Refinement levels (>= 2).
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("EWLAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    if let Some(ew) = e.downcast_ref::<EwError>() {
        match ew {
            EwError::Config(_) | EwError::Contract(_) | EwError::RejectedInput(_) => 2,
            EwError::Instability { .. } | EwError::Hyperbolicity { .. } => 3,
            _ => 2,
        }
    } else {
        2
    }
}

fn load_config(path: &Path) -> anyhow::Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EwError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    Ok((cfg, text))
}

fn parse_tip(s: &str) -> anyhow::Result<(f64, [f64; 3])> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| EwError::Config(format!("bad --tip '{s}': {e}")))?;
    if parts.len() != 4 {
        return Err(EwError::Config(format!("--tip needs t,x,y,z, got '{s}'")).into());
    }
    Ok((parts[0], [parts[1], parts[2], parts[3]]))
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out } => {
            let (cfg, text) = load_config(&config)?;
            let dir = out_dir(&cfg, out);
            let state = cfg.initial_state()?;
            let opts = cfg.sim_options()?;
            let traj = simulate(state, &cfg.material, &opts)?;
            let energies: Vec<f64> = traj
                .states
                .iter()
                .enumerate()
                .map(|(j, s)| standard_energy(s, &traj.metric_at(j)?))
                .collect::<ewlab_core::Result<Vec<_>>>()?;
            io::write_trajectory(&dir, &traj, Some(&text), Some(&energies))?;
            println!(
                "trajectory: {} snapshots to t = {} in {}",
                traj.len(),
                traj.times.last().unwrap(),
                dir.display()
            );
            if let Some(f) = &traj.failure {
                eprintln!("instability: {} at t = {}", f.cause, f.time);
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Decompose { config, out } => {
            let (cfg, text) = load_config(&config)?;
            let dir = out_dir(&cfg, out);
            let state = cfg.initial_state()?;
            let opts = cfg.sim_options()?;
            let run = simulate_decomposed(state, &cfg.material, &opts)?;
            let energies: Vec<f64> = run
                .full
                .states
                .iter()
                .enumerate()
                .map(|(j, s)| standard_energy(s, &run.full.metric_at(j)?))
                .collect::<ewlab_core::Result<Vec<_>>>()?;
            io::write_trajectory(&dir, &run.full, Some(&text), Some(&energies))?;
            let records = energy_series(&run, &EnergyOptions::default())?;
            let wants = |name: &str| cfg.checks.iter().any(|c| c == name);
            let dec = if wants("decoupling") || cfg.checks.is_empty() {
                Some(decoupling_monitor(&run)?)
            } else {
                None
            };
            let div = if wants("divpart") || cfg.checks.is_empty() {
                Some(divpart_residual(&run, DivpartMutation::None)?)
            } else {
                None
            };
            io::write_diagnostics_csv(
                &dir.join("diagnostics.csv"),
                &records,
                dec.as_ref(),
                div.as_deref(),
            )?;
            println!(
                "decomposed run: {} snapshots, diagnostics in {}",
                run.full.len(),
                dir.display()
            );
            if let Some(f) = &run.full.failure {
                eprintln!("instability: {} at t = {}", f.cause, f.time);
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Geodesics {
            traj,
            tip,
            nomega,
            substeps,
            out,
            raychaudhuri,
        } => {
            let (tip_t, tip_x) = parse_tip(&tip)?;
            let (_, count, snapped) = snap_direction_count(nomega);
            if snapped {
                eprintln!("note: nomega {nomega} snapped to icosahedral count {count}");
            }
            let trajectory = io::read_trajectory(&traj)?;
            let stack = MetricStack::from_displacements(
                trajectory.grid,
                trajectory.times.clone(),
                &trajectory
                    .states
                    .iter()
                    .map(|s| s.u.clone())
                    .collect::<Vec<_>>(),
                &trajectory.spec,
            )?;
            let metric = SpacetimeMetric::new(stack, raychaudhuri);
            let opts = BundleOptions {
                n_omega: count,
                substeps,
                drift_tol: 1e-4,
            };
            let bundle = trace_bundle(&metric, tip_t, tip_x, &opts)?;
            if bundle.crossing_detected {
                eprintln!("warning: ray crossing detected; downstream quantities flagged");
            }
            let geom = bundle_geometry(&bundle, &metric, trajectory.spec.c2)?;
            let path = out.unwrap_or_else(|| traj.join("geodesics.csv"));
            io::write_geodesics_csv(&path, &bundle, &geom)?;
            println!(
                "traced {} rays over {} samples; max |g(L,L)| drift {}",
                bundle.rays.len(),
                bundle.times.len(),
                io::fmt_f64(bundle.max_drift())
            );
            if raychaudhuri {
                let rows =
                    raychaudhuri_residual(&bundle, &geom, &metric, RaychaudhuriMutation::None)?;
                let worst = rows.iter().map(|r| r.max_abs).fold(0.0_f64, f64::max);
                println!("raychaudhuri residual max {}", io::fmt_f64(worst));
            }
            println!("geodesics.csv: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Fluxes {
            traj,
            tip,
            nomega,
            substeps,
            field,
            out,
        } => {
            let (tip_t, tip_x) = parse_tip(&tip)?;
            let (_, count, snapped) = snap_direction_count(nomega);
            if snapped {
                eprintln!("note: nomega {nomega} snapped to icosahedral count {count}");
            }
            let trajectory = io::read_trajectory(&traj)?;
            let grid = trajectory.grid;
            let stack = MetricStack::from_displacements(
                grid,
                trajectory.times.clone(),
                &trajectory
                    .states
                    .iter()
                    .map(|s| s.u.clone())
                    .collect::<Vec<_>>(),
                &trajectory.spec,
            )?;
            let metric = SpacetimeMetric::new(stack, false);
            let bundle = trace_bundle(
                &metric,
                tip_t,
                tip_x,
                &BundleOptions {
                    n_omega: count,
                    substeps,
                    drift_tol: 1e-4,
                },
            )?;
            let geom = bundle_geometry(&bundle, &metric, trajectory.spec.c2)?;
            let sampler = match field.as_str() {
                "div_phi" => {
                    let mut scalars = Vec::with_capacity(trajectory.len());
                    for s in &trajectory.states {
                        let (phi, _, _) = helmholtz_decompose(&s.u)?;
                        scalars.push(spectral_derivative(&phi, DerivKind::Div)?);
                    }
                    ScalarSampler::new(&SnapshotSeq::new(trajectory.times.clone(), scalars)?)?
                }
                "curl_psi" => {
                    let mut curls = Vec::with_capacity(trajectory.len());
                    for s in &trajectory.states {
                        let (_, psi, _) = helmholtz_decompose(&s.u)?;
                        curls.push(spectral_derivative(&psi, DerivKind::Curl)?);
                    }
                    ScalarSampler::from_field_component(
                        &SnapshotSeq::new(trajectory.times.clone(), curls)?,
                        0,
                    )?
                }
                other => {
                    return Err(
                        EwError::Config(format!("unknown --field '{other}'")).into()
                    )
                }
            };
            let rep = null_fluxes(&bundle, &geom, &metric, &sampler, trajectory.spec.c2)?;
            let path = out.unwrap_or_else(|| traj.join("fluxes.csv"));
            io::write_fluxes_csv(&path, &[(bundle.tip_t, rep)])?;
            println!(
                "F1 = {}, F2 = {}, coercive ratio = {}",
                io::fmt_f64(rep.f1),
                io::fmt_f64(rep.f2),
                io::fmt_f64(rep.coercive_ratio)
            );
            println!("fluxes.csv: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { suite } => {
            let names: Vec<&str> = if suite == "all" {
                suites::SUITES.to_vec()
            } else if suites::SUITES.contains(&suite.as_str()) {
                vec![suites::SUITES
                    .iter()
                    .find(|s| **s == suite.as_str())
                    .unwrap()]
            } else {
                return Err(EwError::Config(format!(
                    "unknown suite '{suite}'; choose one of {} or all",
                    suites::SUITES.join(", ")
                ))
                .into());
            };
            let mut all_pass = true;
            for name in names {
                let report = suites::run_suite(name)?;
                print!("{}", report.render());
                all_pass &= report.passed();
            }
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Convergence { config, levels } => {
            if levels < 2 {
                return Err(EwError::Config("need at least 2 levels".into()).into());
            }
            let (grid, spec) = match config {
                Some(path) => {
                    let (cfg, _) = load_config(&path)?;
                    (cfg.grid3(), cfg.material.clone())
                }
                None => (
                    ewlab_core::Grid3::new(32, 2.0 * std::f64::consts::PI)?,
                    ewlab_core::MaterialSpec::linear(1.0, 0.5)?,
                ),
            };
            let mut failed = false;

            // Solver order: one-period plane-wave error under dt halving.
            let lin = ewlab_core::MaterialSpec::linear(spec.c1, spec.c2)?;
            let state = plane_wave_state(grid, &lin, [1, 0, 0], 0.01, Polarization::Transverse, true)?;
            let period = plane_wave_period(grid, &lin, [1, 0, 0], Polarization::Transverse);
            let mut errors = Vec::new();
            for level in 0..levels {
                let steps = 256usize << level;
                let dt = period / steps as f64;
                let mut s = state.clone();
                for _ in 0..steps {
                    s = rk4_step(&s, dt, &lin)?;
                }
                let mut diff = s.u.clone();
                diff.axpy(-1.0, &state.u);
                errors.push(diff.l2_norm() / state.u.l2_norm());
            }
            failed |= print_orders("solver (target 4)", &errors, grid.n());

            // Tracer order via null drift, and the residual orders, all on
            // a small-amplitude curved run built from the config material.
            let study = suites::convergence_study(grid, &spec, levels)?;
            failed |= print_orders("geodesic tracer (target 4)", &study.tracer_drifts, grid.n());
            failed |= print_orders(
                "raychaudhuri residual (target >= 2)",
                &study.raychaudhuri,
                grid.n(),
            );
            failed |= print_orders(
                "decoupling residual (target >= 2)",
                &study.psi_residuals,
                grid.n(),
            );
            Ok(if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}

/// Prints Richardson orders between consecutive levels; non-monotone
/// errors are surfaced as "n/a" and count as failure.
fn print_orders(label: &str, errors: &[f64], n: usize) -> bool {
    let mut failed = false;
    for w in errors.windows(2) {
        if w[1] <= 0.0 || w[0] <= w[1] {
            println!("{label}: order n/a (errors {} -> {}, n = {n})", w[0], w[1]);
            failed = true;
        } else {
            let order = (w[0] / w[1]).log2();
            println!(
                "{label}: order {:.2} (errors {} -> {}, n = {n})",
                order,
                io::fmt_f64(w[0]),
                io::fmt_f64(w[1])
            );
        }
    }
    failed
}
