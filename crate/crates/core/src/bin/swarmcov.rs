use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use swarmcov::export;
use swarmcov::milp::SolverBackend;
use swarmcov::scenario::{Scenario, ScenarioError};
use swarmcov::sim::{self, SimulationConfig, Termination};
use swarmcov::vehicle::SyntheticQuad;

#[derive(Parser)]
#[command(name = "swarmcov", version, about = "Energy-aware multi-agent coverage planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Fallback,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Field,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate { scenario: PathBuf },
    /// Run the closed-loop simulation and write the run artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Per-solve wall-clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, value_enum, default_value = "external")]
        solver: SolverArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the scenario's prediction horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        rel_gap: Option<f64>,
    },
    /// Print a synthetic vehicle parameter file.
    Params {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
}

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    match Scenario::load(path) {
        Ok(s) => Ok(s),
        Err(ScenarioError::Invalid(problems)) => {
            for p in &problems {
                println!("violation: {p}");
            }
            Err(ExitCode::from(1))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let problems = s.validate();
            if problems.is_empty() {
                println!("{}: ok", scenario.display());
                ExitCode::SUCCESS
            } else {
                for p in &problems {
                    println!("violation: {p}");
                }
                ExitCode::from(1)
            }
        }
        Command::Run {
            scenario,
            max_steps,
            time_limit,
            solver,
            out,
            seed,
            horizon,
            rel_gap,
        } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let mut config = SimulationConfig::for_scenario(&s);
            if let Some(n) = max_steps {
                config.max_steps = n;
            }
            if let Some(t) = time_limit {
                config.time_limit = Some(t);
            }
            if let Some(n) = horizon {
                config.horizon = n;
            }
            if let Some(g) = rel_gap {
                config.rel_gap = g;
            }
            config.seed = seed;
            let backend = match solver {
                SolverArg::Fallback => SolverBackend::Fallback,
                SolverArg::External => SolverBackend::External,
            };
            let solver = match backend.instantiate() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let log = match sim::run(&s, &config, solver.as_ref()) {
                Ok(log) => log,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = export::write_all(&log, &out) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            let sm = &log.summary;
            println!(
                "{}: {} steps, termination {:?}, coverage {:.0}% ({}/{}), all landed {}",
                if sm.scenario.is_empty() { "scenario" } else { &sm.scenario },
                sm.steps,
                sm.termination_reason,
                sm.coverage * 100.0,
                sm.waypoints_covered,
                sm.waypoints,
                sm.all_landed
            );
            for a in &sm.agents {
                println!(
                    "  agent {}: DoD {:.3} -> {:.3}, return at {:?}, landed at {:?}",
                    a.agent, a.initial_dod, a.final_dod, a.return_step, a.landed_step
                );
            }
            let violations = sim::check_safety(&s, &log);
            for v in &violations {
                println!("  safety violation at t={}: {:?} {}", v.time, v.kind, v.detail);
            }
            if let Some(d) = &sm.diagnostic {
                eprintln!("aborted: {d}");
            }
            println!("artifacts in {}", out.display());
            if sm.termination_reason == Termination::Aborted {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Params { preset } => {
            let quad = match preset {
                Preset::Desk => SyntheticQuad::default(),
                Preset::Field => SyntheticQuad::field(),
            };
            println!("{}", quad.build().to_json());
            ExitCode::SUCCESS
        }
    }
}
