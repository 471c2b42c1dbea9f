//! Command-line front end: parses a scenario config, runs the requested
//! experiment, and emits CSV/JSON results.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.

mod config;
mod emit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Experiment, ScenarioConfig};
use sgzp::{
    brute_force_policy_search, evaluate_heuristic, integrate_costates_backward, integrate_forward,
    optimal_threshold, robustness_sweep, simulate_population, verify_pmp, ControlPolicy,
    HeuristicKind, ModelSpec, PerturbationKind, PerturbationSpec, Variant,
};

/// Environment variable overriding the output directory.
const OUT_DIR_ENV: &str = "SGZP_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "sgzp",
    about = "Solve, verify, and stress-test spread/stealth trade-off policies for the SGZP epidemic model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (SGZP_OUT_DIR overrides).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed override for stochastic experiments.
    #[arg(long)]
    seed: Option<u64>,
    /// Integration step override.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal switch time.
    Solve(RunArgs),
    /// Optimal switch time and objective across a gamma grid.
    SweepGamma(RunArgs),
    /// Compare the optimum against baseline heuristics.
    Heuristics(RunArgs),
    /// Mean-field robustness to defender estimation error.
    RobustEstimation(RunArgs),
    /// Finite-population robustness to switch-time desynchronization.
    RobustSync(RunArgs),
    /// Check the solved optimum against the maximum-principle conditions.
    Verify(RunArgs),
    /// Finite-population event simulations at the solved optimum.
    Simulate(RunArgs),
    /// Brute-force piecewise-constant policy search.
    Oracle(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Solve(a)
            | Command::SweepGamma(a)
            | Command::Heuristics(a)
            | Command::RobustEstimation(a)
            | Command::RobustSync(a)
            | Command::Verify(a)
            | Command::Simulate(a)
            | Command::Oracle(a) => a,
        }
    }

    fn expected_kind(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::SweepGamma(_) => "sweep_gamma",
            Command::Heuristics(_) => "heuristics",
            Command::RobustEstimation(_) => "robust_estimation",
            Command::RobustSync(_) => "robust_sync",
            Command::Verify(_) => "verify",
            Command::Simulate(_) => "simulate",
            Command::Oracle(_) => "oracle",
        }
    }
}

fn experiment_kind(e: &Experiment) -> &'static str {
    match e {
        Experiment::Solve => "solve",
        Experiment::SweepGamma { .. } => "sweep_gamma",
        Experiment::Heuristics { .. } => "heuristics",
        Experiment::RobustEstimation { .. } => "robust_estimation",
        Experiment::RobustSync { .. } => "robust_sync",
        Experiment::Verify => "verify",
        Experiment::Simulate { .. } => "simulate",
        Experiment::Oracle { .. } => "oracle",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for numerical blow-ups, 1 for everything else (configuration, I/O).
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sgzp::Error>() {
        Some(sgzp::Error::NonFinite { .. }) | Some(sgzp::Error::SimplexViolation { .. }) => 2,
        _ => 1,
    }
}

fn out_dir(args: &RunArgs) -> anyhow::Result<PathBuf> {
    let dir = match std::env::var_os(OUT_DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => args.out.clone(),
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn run(command: &Command) -> anyhow::Result<()> {
    let args = command.args();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", args.config.display()))?;
    let mut config = ScenarioConfig::from_json(&text)?;
    anyhow::ensure!(
        experiment_kind(&config.experiment) == command.expected_kind(),
        "config experiment kind '{}' does not match subcommand '{}'",
        experiment_kind(&config.experiment),
        command.expected_kind()
    );
    if let Some(step) = args.step {
        anyhow::ensure!(step > 0.0, "--step must be positive");
        config.numerics.step = Some(step);
    }
    if let Some(seed) = args.seed {
        match &mut config.experiment {
            Experiment::RobustEstimation { seed: s, .. }
            | Experiment::RobustSync { seed: s, .. }
            | Experiment::Simulate { seed: s, .. } => *s = seed,
            _ => {}
        }
    }
    let dir = out_dir(args)?;
    let step = config.step();
    let model = config.model;

    match config.experiment.clone() {
        Experiment::Solve => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let traj = integrate_forward(&model, &ControlPolicy::threshold(sol.t_star), step)?;
            emit::emit_trajectory(&traj, None, &dir.join("trajectory.csv"))?;
            write_json(&sol, &dir.join("solution.json"))?;
            println!(
                "t_star={} J={} bracket={} evaluations={}",
                sol.t_star, sol.j_star, sol.bracket, sol.evaluations
            );
        }
        Experiment::SweepGamma { gammas, variants } => {
            let mut rows = Vec::new();
            for entry in &variants {
                for &gamma in &gammas {
                    let m = ModelSpec {
                        variant: entry.variant,
                        gamma,
                        pi: entry.pi,
                        ..model
                    };
                    m.validate().map_err(|e| anyhow::anyhow!("sweep entry: {e}"))?;
                    let sol = optimal_threshold(
                        &m,
                        config.numerics.step.unwrap_or_else(|| sgzp::default_step(&m)),
                        config.numerics.coarse_points,
                        config.numerics.refine_iters,
                    )?;
                    let variant_name = match entry.variant {
                        Variant::NoHalting => "no_halting",
                        Variant::Halting => "halting",
                        Variant::Adaptive => "adaptive",
                    };
                    let pi = entry.pi.map(|p| p.to_string()).unwrap_or_default();
                    let row = format!("{gamma},{variant_name},{pi},{},{}", sol.t_star, sol.j_star);
                    println!("{row}");
                    rows.push(row);
                }
            }
            emit::emit_csv("gamma,variant,pi,t_star,J", &rows, &dir.join("sweep.csv"))?;
        }
        Experiment::Heuristics { mix_points } => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let zombie = evaluate_heuristic(&model, step, HeuristicKind::AlwaysZombie, mix_points)?;
            let passive = evaluate_heuristic(&model, step, HeuristicKind::AlwaysPassive, mix_points)?;
            let mix = evaluate_heuristic(&model, step, HeuristicKind::StaticMix { rho: 0.5 }, mix_points)?;
            let rows = vec![
                format!("optimal_threshold,,{}", sol.j_star),
                format!("always_zombie,,{}", zombie.j),
                format!("always_passive,,{}", passive.j),
                format!("static_mix,{},{}", mix.rho.unwrap_or(0.0), mix.j),
            ];
            for row in &rows {
                println!("{row}");
            }
            emit::emit_csv("name,rho,J", &rows, &dir.join("heuristics.csv"))?;
        }
        Experiment::RobustEstimation { ranges, runs, noise, seed } => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let points = robustness_sweep(
                &model,
                &ControlPolicy::threshold(sol.t_star),
                PerturbationKind::EstimationError,
                &ranges,
                runs,
                None,
                step,
                noise,
                seed,
            )?;
            emit_robustness(&points, &dir)?;
        }
        Experiment::RobustSync { ranges, runs, n, seed } => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let points = robustness_sweep(
                &model,
                &ControlPolicy::threshold(sol.t_star),
                PerturbationKind::SyncError,
                &ranges,
                runs,
                Some(n),
                step,
                sgzp::NoiseModel::Multiplicative,
                seed,
            )?;
            emit_robustness(&points, &dir)?;
        }
        Experiment::Verify => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let policy = ControlPolicy::threshold(sol.t_star);
            let verdict = verify_pmp(&model, &policy, config.numerics.tol, step)?;
            let traj = integrate_forward(&model, &policy, step)?;
            let costates = integrate_costates_backward(&model, &traj)?;
            emit::emit_trajectory(&traj, Some(&costates), &dir.join("trajectory.csv"))?;
            #[derive(Serialize)]
            struct VerifyOut {
                t_star: f64,
                j_star: f64,
                verdict: sgzp::VerdictReport,
            }
            let out = VerifyOut { t_star: sol.t_star, j_star: sol.j_star, verdict };
            write_json(&out, &dir.join("verdict.json"))?;
            println!(
                "t_star={} pass={} worst_violation={} hamiltonian_drift={}",
                out.t_star,
                out.verdict.pass,
                out.verdict.worst_violation,
                out.verdict.hamiltonian_drift
            );
        }
        Experiment::Simulate { n, runs, seed, perturb } => {
            let sol = optimal_threshold(&model, step, config.numerics.coarse_points, config.numerics.refine_iters)?;
            let policy = ControlPolicy::threshold(sol.t_star);
            let perturb = perturb.unwrap_or(PerturbationSpec::None);
            let mut rows = Vec::new();
            let mut first_run = None;
            for run in 0..runs {
                let run_seed = seed.wrapping_add(run as u64);
                let sim = simulate_population(&model, &policy, n, &perturb, run_seed)?;
                let row = format!("{run},{run_seed},{}", sim.j);
                println!("{row}");
                rows.push(row);
                if run == 0 {
                    first_run = Some(sim);
                }
            }
            emit::emit_csv("run,seed,realized_J", &rows, &dir.join("runs.csv"))?;
            if let Some(sim) = first_run {
                let event_rows: Vec<String> = sim
                    .times
                    .iter()
                    .zip(&sim.counts)
                    .map(|(t, c)| format!("{t},{},{},{},{}", c[0], c[1], c[2], c[3]))
                    .collect();
                emit::emit_csv("t,n_S,n_G,n_Z,n_P", &event_rows, &dir.join("events.csv"))?;
            }
        }
        Experiment::Oracle { k, levels } => {
            let sol = brute_force_policy_search(&model, k, &levels, step)?;
            write_json(&sol, &dir.join("oracle.json"))?;
            println!("J_best={} one_switch={} segments={}", sol.j_best, sol.one_switch, sol.segments);
        }
    }
    Ok(())
}

fn emit_robustness(points: &[sgzp::RobustnessPoint], dir: &Path) -> anyhow::Result<()> {
    let rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{},{}", p.range, p.mean_j, p.std_j, p.rel_loss))
        .collect();
    for row in &rows {
        println!("{row}");
    }
    emit::emit_csv("range,mean_J,std_J,rel_loss", &rows, &dir.join("robustness.csv"))
}
