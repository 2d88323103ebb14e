//! Closed-loop receding-horizon simulation: plan, apply the first input,
//! advance the world, log.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{MilpSolution, MilpSolver, SolveOptions, SolveStatus};
use crate::mission::{update_target_dynamics, MissionError, OpTransition, Thresholds};
use crate::ocp::{build_with, BuildOptions, Obstacle, OcpSolution, OpMode, UasAgent, Waypoint};
use crate::scenario::{Scenario, ScheduledObstacle};
use crate::vehicle::{BatteryTelemetry, VehicleInput, VehicleState};

/// Safety recheck tolerance on realized states.
pub const SAFETY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario is invalid: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error(transparent)]
    Mission(#[from] MissionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub dt: f64,
    pub max_steps: usize,
    /// Wall-clock limit per solve (s).
    pub time_limit: Option<f64>,
    pub rel_gap: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            horizon: s.horizon,
            dt: s.dt,
            max_steps: s.max_steps,
            time_limit: Some(60.0),
            rel_gap: 1e-3,
            seed: 0,
        }
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            rel_gap: self.rel_gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AllLanded,
    StepCap,
    Aborted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent: usize,
    pub mode: OpMode,
    pub input: VehicleInput,
    /// State after applying `input`.
    pub state: VehicleState,
    pub telemetry: BatteryTelemetry,
    pub segment: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub status: Option<SolveStatus>,
    pub objective: Option<f64>,
    pub terms: [f64; 3],
    pub solve_seconds: f64,
    pub nodes: usize,
    pub recovery: bool,
    pub agents: Vec<AgentRecord>,
    /// `true` while waypoint `w` is uncovered, after this step's update.
    pub uncovered: Vec<bool>,
    /// Cumulative translation of every obstacle after this step.
    pub obstacle_offsets: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: usize,
    pub time: f64,
    pub transition: OpTransition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub initial_dod: f64,
    pub final_dod: f64,
    pub max_dod: f64,
    pub landed: bool,
    pub landed_step: Option<usize>,
    pub return_step: Option<usize>,
    /// Distance from the initial position at the end of the run.
    pub home_distance: f64,
    pub waypoints_covered: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub termination_reason: Termination,
    pub diagnostic: Option<String>,
    pub waypoints: usize,
    pub waypoints_covered: usize,
    pub coverage: f64,
    pub steps_to_full_coverage: Option<usize>,
    pub all_landed: bool,
    pub infeasible_solves: usize,
    pub recovery_steps: usize,
    pub total_solve_seconds: f64,
    pub agents: Vec<AgentSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationLog {
    pub dt: f64,
    pub initial: Vec<VehicleState>,
    pub initial_uncovered: Vec<bool>,
    pub steps: Vec<StepRecord>,
    pub transitions: Vec<TransitionRecord>,
    pub summary: RunSummary,
}

/// Additive perturbation of the realized state: `(step, agent, state)`.
pub type MismatchHook<'a> = dyn FnMut(usize, usize, &mut VehicleState) + 'a;

/// Translate moving obstacles by `v·dt`; fixed ones stay put.
pub fn advance_moving_obstacles(obstacles: &mut [Obstacle], dt: f64) {
    for o in obstacles {
        if let Some(v) = o.velocity {
            o.region = o.region.translated(&(v * dt));
        }
    }
}

fn obstacles_at(scheduled: &[ScheduledObstacle], offsets: &[Vector3<f64>], step: usize) -> Vec<Obstacle> {
    scheduled
        .iter()
        .zip(offsets)
        .map(|(o, off)| Obstacle {
            region: if off.norm() > 0.0 { o.region.translated(off) } else { o.region.clone() },
            delta_safe: o.delta_safe,
            velocity: o.velocity_at(step),
        })
        .collect()
}

struct Planned {
    solution: Option<OcpSolution>,
    milp: Option<MilpSolution>,
    recovery: bool,
    infeasible: bool,
}

pub fn run(scenario: &Scenario, config: &SimulationConfig, solver: &dyn MilpSolver) -> Result<SimulationLog, SimError> {
    run_with_hook(scenario, config, solver, None)
}

pub fn run_with_hook(
    scenario: &Scenario,
    config: &SimulationConfig,
    solver: &dyn MilpSolver,
    mut hook: Option<&mut MismatchHook<'_>>,
) -> Result<SimulationLog, SimError> {
    let mut scenario = scenario.clone();
    scenario.horizon = config.horizon;
    scenario.dt = config.dt;
    scenario.max_steps = config.max_steps;
    let problems = scenario.validate();
    if !problems.is_empty() {
        return Err(SimError::InvalidScenario(problems));
    }
    let thresholds: Vec<Thresholds> = scenario
        .agents
        .iter()
        .map(|a| scenario.mission.thresholds_for(a))
        .collect::<Result<_, _>>()?;

    let mut agents: Vec<UasAgent> = scenario.agents.clone();
    let mut waypoints: Vec<Waypoint> = scenario.waypoints.clone();
    let mut offsets = vec![Vector3::zeros(); scenario.obstacles.len()];
    let options = config.solve_options();

    let initial = agents.iter().map(|a| a.state).collect();
    let initial_uncovered = waypoints.iter().map(|w| w.uncovered).collect();
    let mut steps = Vec::new();
    let mut transitions = Vec::new();
    let mut last: Option<OcpSolution> = None;
    let mut consecutive_failures = 0;
    let mut infeasible_solves = 0;
    let mut recovery_steps = 0;
    let mut steps_to_full = waypoints.iter().all(|w| !w.uncovered).then_some(0);
    let mut termination = Termination::StepCap;
    let mut diagnostic = None;
    let mut covered_by = vec![0usize; agents.len()];

    for step in 0..config.max_steps {
        if agents.iter().all(|a| !a.is_airborne()) {
            termination = Termination::AllLanded;
            break;
        }
        let update = update_target_dynamics(&mut agents, &thresholds, &waypoints, last.as_ref(), &scenario.mission);
        for t in update.transitions.into_iter().filter(|t| t.from != t.to) {
            log::info!("step {step}: agent {} {:?} -> {:?} {:?}", t.agent, t.from, t.to, t.actions);
            transitions.push(TransitionRecord {
                step,
                time: step as f64 * config.dt,
                transition: t,
            });
        }
        if agents.iter().all(|a| !a.is_airborne()) {
            termination = Termination::AllLanded;
            break;
        }

        let obstacles = obstacles_at(&scenario.obstacles, &offsets, step);
        let snapshot = scenario.snapshot(&agents, &waypoints, &obstacles);
        let started = Instant::now();
        let planned = match plan(&snapshot, solver, &options) {
            Ok(p) => p,
            Err(msg) => {
                termination = Termination::Aborted;
                diagnostic = Some(format!("step {step}: {msg}"));
                break;
            }
        };
        let solve_seconds = started.elapsed().as_secs_f64();
        if planned.infeasible {
            infeasible_solves += 1;
            consecutive_failures += 1;
            log::warn!("step {step}: planning problem infeasible");
            if consecutive_failures >= 2 {
                termination = Termination::Aborted;
                diagnostic = Some(format!("step {step}: two consecutive infeasible solves"));
                break;
            }
        } else {
            consecutive_failures = 0;
        }
        if planned.recovery {
            recovery_steps += 1;
        }

        // Coverage marked at the current position.
        if let Some(sol) = planned.solution.as_ref().filter(|_| !planned.recovery) {
            for (w, i) in sol.covered_now() {
                if waypoints[w].uncovered {
                    waypoints[w].uncovered = false;
                    covered_by[i] += 1;
                }
            }
        }

        let mut records = Vec::with_capacity(agents.len());
        for (i, agent) in agents.iter_mut().enumerate() {
            let mode = agent.mode;
            let segment = agent.params.segment_index(agent.state.dod).unwrap_or(0);
            let input = if agent.is_airborne() {
                planned
                    .solution
                    .as_ref()
                    .and_then(|s| s.first_input(i))
                    .unwrap_or_else(VehicleInput::hover)
            } else {
                VehicleInput::hover()
            };
            let telemetry = agent.params.battery_telemetry(&agent.state, &input);
            if agent.is_airborne() {
                match agent.params.step(&agent.state, &input) {
                    Ok(next) => agent.state = next,
                    Err(e) => {
                        termination = Termination::Aborted;
                        diagnostic = Some(format!("step {step}: agent {}: {e}", agent.id));
                    }
                }
                if let Some(h) = hook.as_deref_mut() {
                    h(step, i, &mut agent.state);
                }
            }
            records.push(AgentRecord {
                agent: agent.id,
                mode,
                input,
                state: agent.state,
                telemetry,
                segment,
            });
        }

        for (o, off) in scenario.obstacles.iter().zip(offsets.iter_mut()) {
            if let Some(v) = o.velocity_at(step) {
                *off += v * config.dt;
            }
        }
        if steps_to_full.is_none() && waypoints.iter().all(|w| !w.uncovered) {
            steps_to_full = Some(step + 1);
        }
        let (status, objective, terms, nodes) = match (&planned.milp, &planned.solution) {
            (Some(m), Some(s)) => (Some(m.status), Some(s.objective), s.terms, m.nodes),
            (Some(m), None) => (Some(m.status), None, [0.0; 3], m.nodes),
            _ => (None, None, [0.0; 3], 0),
        };
        log::debug!("step {step}: {status:?} objective {objective:?} in {solve_seconds:.3} s");
        steps.push(StepRecord {
            step,
            status,
            objective,
            terms,
            solve_seconds,
            nodes,
            recovery: planned.recovery,
            agents: records,
            uncovered: waypoints.iter().map(|w| w.uncovered).collect(),
            obstacle_offsets: offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
        });
        last = planned.solution;
        if termination == Termination::Aborted {
            break;
        }
    }
    if termination == Termination::StepCap && agents.iter().all(|a| !a.is_airborne()) {
        termination = Termination::AllLanded;
    }

    let summary = summarize(
        &scenario,
        &agents,
        &waypoints,
        &steps,
        &transitions,
        SummaryCounts {
            termination,
            diagnostic,
            steps_to_full,
            infeasible_solves,
            recovery_steps,
            covered_by,
        },
    );
    Ok(SimulationLog {
        dt: config.dt,
        initial,
        initial_uncovered,
        steps,
        transitions,
        summary,
    })
}

/// Main solve, then the safety-only recovery problem, then hover.
fn plan(
    snapshot: &crate::ocp::ScenarioSnapshot,
    solver: &dyn MilpSolver,
    options: &SolveOptions,
) -> Result<Planned, String> {
    let (model, handles) = build_with(snapshot, BuildOptions::default()).map_err(|e| e.to_string())?;
    let sol = solver.solve(&model, options).map_err(|e| e.to_string())?;
    if sol.has_values() {
        return Ok(Planned {
            solution: OcpSolution::from_milp(&handles, &sol),
            milp: Some(sol),
            recovery: false,
            infeasible: false,
        });
    }
    let (model, handles) = build_with(snapshot, BuildOptions::recovery()).map_err(|e| e.to_string())?;
    let rec = solver.solve(&model, options).map_err(|e| e.to_string())?;
    Ok(Planned {
        solution: OcpSolution::from_milp(&handles, &rec),
        milp: Some(rec),
        recovery: true,
        infeasible: true,
    })
}

struct SummaryCounts {
    termination: Termination,
    diagnostic: Option<String>,
    steps_to_full: Option<usize>,
    infeasible_solves: usize,
    recovery_steps: usize,
    covered_by: Vec<usize>,
}

fn summarize(
    scenario: &Scenario,
    agents: &[UasAgent],
    waypoints: &[Waypoint],
    steps: &[StepRecord],
    transitions: &[TransitionRecord],
    c: SummaryCounts,
) -> RunSummary {
    let covered = waypoints.iter().filter(|w| !w.uncovered).count();
    let agent_summaries = agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let initial_dod = scenario.agents[i].state.dod;
            let max_dod = steps
                .iter()
                .map(|s| s.agents[i].state.dod)
                .fold(initial_dod, f64::max);
            let entered = |mode: OpMode| {
                transitions
                    .iter()
                    .find(|t| t.transition.agent == a.id && t.transition.to == mode)
                    .map(|t| t.step)
            };
            AgentSummary {
                agent: a.id,
                initial_dod,
                final_dod: a.state.dod,
                max_dod,
                landed: a.mode == OpMode::Landed,
                landed_step: entered(OpMode::Landed),
                return_step: entered(OpMode::Return),
                home_distance: (a.state.p - a.p_init).norm(),
                waypoints_covered: c.covered_by[i],
            }
        })
        .collect();
    RunSummary {
        scenario: scenario.name.clone(),
        steps: steps.len(),
        termination_reason: c.termination,
        diagnostic: c.diagnostic,
        waypoints: waypoints.len(),
        waypoints_covered: covered,
        coverage: if waypoints.is_empty() { 1.0 } else { covered as f64 / waypoints.len() as f64 },
        steps_to_full_coverage: c.steps_to_full,
        all_landed: agents.iter().all(|a| a.mode == OpMode::Landed),
        infeasible_solves: c.infeasible_solves,
        recovery_steps: c.recovery_steps,
        total_solve_seconds: steps.iter().map(|s| s.solve_seconds).sum(),
        agents: agent_summaries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GeoFence,
    ObstacleClearance,
    Separation,
    CoverageIncreased,
    DodDecreased,
    DodLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyViolation {
    /// Time index of the offending state (0 is the initial state).
    pub time: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

/// Exact recheck of the realized trajectory against the safety invariants.
pub fn check_safety(scenario: &Scenario, log: &SimulationLog) -> Vec<SafetyViolation> {
    let mut out = Vec::new();
    let zero = vec![[0.0; 3]; scenario.obstacles.len()];
    let mut frames: Vec<(Vec<VehicleState>, &[bool], &[[f64; 3]])> =
        vec![(log.initial.clone(), &log.initial_uncovered, &zero)];
    for s in &log.steps {
        frames.push((s.agents.iter().map(|a| a.state).collect(), &s.uncovered, &s.obstacle_offsets));
    }
    let mut push = |time, kind, detail: String| out.push(SafetyViolation { time, kind, detail });
    for (t, (states, uncovered, offsets)) in frames.iter().enumerate() {
        for (i, x) in states.iter().enumerate() {
            let params = &scenario.agents[i].params;
            let excess = scenario.fence.region.max_distance(&x.p) - scenario.fence.delta;
            if excess > SAFETY_TOL {
                push(t, ViolationKind::GeoFence, format!("agent {i} outside by {excess:.6} m"));
            }
            for (o, obs) in scenario.obstacles.iter().enumerate() {
                let region = obs.region.translated(&Vector3::from(offsets[o]));
                let d = region.max_distance(&x.p);
                let need = params.radius + obs.delta_safe;
                if d < need - SAFETY_TOL {
                    push(t, ViolationKind::ObstacleClearance, format!("agent {i} at {d:.6} m from {} (< {need:.6})", obs.name));
                }
            }
            if x.dod > params.dod_max + SAFETY_TOL {
                push(t, ViolationKind::DodLimit, format!("agent {i} DoD {:.6} > {}", x.dod, params.dod_max));
            }
            for (j, y) in states.iter().enumerate().skip(i + 1) {
                let need = params.radius + scenario.agents[j].params.radius + scenario.uas_safety;
                let d = (x.p - y.p).norm();
                if d < need - SAFETY_TOL {
                    push(t, ViolationKind::Separation, format!("agents {i},{j} at {d:.6} m (< {need:.6})"));
                }
            }
        }
        if t > 0 {
            let (prev_states, prev_uncovered, _) = &frames[t - 1];
            for (w, (&now, &before)) in uncovered.iter().zip(prev_uncovered.iter()).enumerate() {
                if now && !before {
                    push(t, ViolationKind::CoverageIncreased, format!("waypoint {w} uncovered again"));
                }
            }
            for (i, (x, p)) in states.iter().zip(prev_states).enumerate() {
                if x.dod < p.dod - 1e-12 {
                    push(t, ViolationKind::DodDecreased, format!("agent {i}: {:.9} -> {:.9}", p.dod, x.dod));
                }
            }
        }
    }
    out
}
