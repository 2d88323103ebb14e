//! Assembly of the moving-horizon coverage problem for one MPC iteration.
//!
//! Per airborne agent the model holds the LPV dynamics over the horizon,
//! physical limits, absolute-value slacks for the penalized channels, the
//! geo fence, obstacle exclusion with corner cutting, pairwise collision
//! avoidance, waypoint coverage binaries with the coverage-state recursion,
//! and (in transit/return mode) the target distance.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    make_closed_cylinder_faces, make_cylinder_faces, make_sphere_faces, AffineFace, ApproxSide, ConvexRegion,
    GeometryError, Point3, PolyApprox,
};
use crate::milp::{
    encode_abs, encode_corner_cutting, encode_hull_outside, encode_norm_lb, encode_norm_ub,
    vec3, LinExpr, MilpError, MilpModel, MilpSolution, SolveStatus, Var, Vec3Expr, DEFAULT_BIG_M,
};
use crate::vehicle::{
    su, sx, InputVector, StateVector, VehicleError, VehicleInput, VehicleParams, VehicleState, INPUT_DIM, STATE_DIM,
};

/// Tolerance used when classifying the measured initial state.
pub const START_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("prediction horizon must be at least 2, got {0}")]
    HorizonTooShort(usize),
    #[error("sampling time must be positive, got {0}")]
    InvalidDt(f64),
    #[error("no airborne agent left to plan for")]
    NoActiveAgents,
    #[error("agent {agent} starts outside the geo fence by {excess:.4} m beyond the buffer")]
    OutsideFence { agent: usize, excess: f64 },
    #[error("agent {agent} starts within the safety distance of obstacle {obstacle}")]
    InsideObstacle { agent: usize, obstacle: usize },
    #[error("agent {agent} is in mode {mode:?} without a target")]
    MissingTarget { agent: usize, mode: OpMode },
    #[error("agent {agent}: state component {component} = {value} outside its limits")]
    StateOutOfLimits {
        agent: usize,
        component: &'static str,
        value: f64,
    },
    #[error("transit target of agent {agent} refers to unknown waypoint {waypoint}")]
    UnknownWaypoint { agent: usize, waypoint: usize },
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpMode {
    Covering = 0,
    Transit = 1,
    Return = 2,
    Landed = 3,
}

impl OpMode {
    pub const ALL: [OpMode; 4] = [OpMode::Covering, OpMode::Transit, OpMode::Return, OpMode::Landed];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Point3,
    pub radius: f64,
    /// Coverage state: `true` while still uncovered.
    pub uncovered: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Transit towards an uncovered waypoint; relaxed once it is covered.
    Waypoint(usize),
    /// Return to the initial position; never relaxed.
    Home,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Point3,
    pub weight: f64,
    pub kind: TargetKind,
}

#[derive(Debug, Clone)]
pub struct UasAgent {
    pub id: usize,
    pub params: Arc<VehicleParams>,
    pub state: VehicleState,
    pub mode: OpMode,
    pub p_init: Point3,
    pub target: Option<Target>,
}

impl UasAgent {
    pub fn is_airborne(&self) -> bool {
        self.mode != OpMode::Landed
    }
}

#[derive(Debug, Clone)]
pub struct GeoFence {
    pub region: ConvexRegion,
    /// Buffer `δ_G`: positive relaxes, negative narrows.
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct Obstacle {
    pub region: ConvexRegion,
    pub delta_safe: f64,
    /// Current velocity; `None` for fixed obstacles.
    pub velocity: Option<Vector3<f64>>,
}

impl Obstacle {
    pub fn is_fixed(&self) -> bool {
        self.velocity.is_none()
    }

    /// Minimum clearance for an agent of the given radius.
    pub fn clearance(&self, radius: f64) -> f64 {
        radius + self.delta_safe
    }
}

/// Cost coefficients before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSet {
    /// Per input channel `(L, τx, τy, τz, ΔT)`.
    pub input: [f64; INPUT_DIM],
    /// Per state component; the DoD entry weighs the increment over the
    /// horizon.
    pub state: [f64; STATE_DIM],
    /// `W_D`, scale of the target-distance term.
    pub target_distance: f64,
    /// Default `W_Φ` assigned to waypoints by scenario loading.
    pub coverage: f64,
}

impl Default for WeightSet {
    fn default() -> Self {
        let mut state = [0.0; STATE_DIM];
        for k in [sx::WX, sx::WY, sx::WZ, sx::DOD, sx::PSI] {
            state[k] = 0.1;
        }
        Self {
            input: [0.1, 0.1, 0.1, 0.1, 0.0],
            state,
            target_distance: 2.0,
            coverage: 1.0,
        }
    }
}

impl WeightSet {
    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .input
            .iter()
            .chain(&self.state)
            .chain([&self.target_distance, &self.coverage]);
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(format!("weights must be finite and nonnegative, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxDegrees {
    /// `H_P`: speed, tilt and target-distance norms.
    pub physical: usize,
    /// `H_O`: inter-agent collision cylinders.
    pub obstacle: usize,
    /// `H_WP`: waypoint spheres.
    pub waypoint: usize,
}

impl Default for ApproxDegrees {
    fn default() -> Self {
        Self {
            physical: 8,
            obstacle: 8,
            waypoint: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSnapshot {
    pub horizon: usize,
    pub dt: f64,
    pub agents: Vec<UasAgent>,
    pub waypoints: Vec<Waypoint>,
    pub fence: GeoFence,
    pub obstacles: Vec<Obstacle>,
    pub weights: WeightSet,
    pub degrees: ApproxDegrees,
    /// Safety buffer added to the two vehicle radii for collision avoidance.
    pub uas_safety: f64,
    pub big_m: f64,
}

impl ScenarioSnapshot {
    pub fn active_count(&self) -> usize {
        self.agents.iter().filter(|a| a.is_airborne()).count()
    }

    pub fn min_separation(&self, i: usize, j: usize) -> f64 {
        self.agents[i].params.radius + self.agents[j].params.radius + self.uas_safety
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub coverage: bool,
    pub targets: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            coverage: true,
            targets: true,
        }
    }
}

impl BuildOptions {
    /// Safety-only problem used after an infeasible solve.
    pub fn recovery() -> Self {
        Self {
            coverage: false,
            targets: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleHandles {
    pub obstacle: usize,
    /// `b_O[n][h]` for `n = 1..=N` (index `n - 1`).
    pub faces: Vec<Vec<Var>>,
    /// `c_O[n][h]` for `n = 0..N` (fixed obstacles only).
    pub corner: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct AgentHandles {
    pub agent: usize,
    /// `x[n]` for `n = 0..=N`; `x[0]` is fixed to the measured state.
    pub x: Vec<[Var; STATE_DIM]>,
    /// `u[n]` for `n = 0..N`.
    pub u: Vec<[Var; INPUT_DIM]>,
    /// Horizontal-speed magnitude driving the thrust correction.
    pub speed: Vec<Var>,
    /// `D_target[n]` for `n = 1..=N` (index `n - 1`); empty without a target.
    pub target_distance: Vec<Var>,
    pub obstacles: Vec<ObstacleHandles>,
}

impl AgentHandles {
    pub fn position(&self, n: usize) -> Vec3Expr {
        vec3(self.x[n][sx::X], self.x[n][sx::Y], self.x[n][sx::Z])
    }
}

#[derive(Debug, Clone)]
pub struct OcpHandles {
    pub horizon: usize,
    pub agents: Vec<Option<AgentHandles>>,
    /// `b_W[w][i][n]`, `n = 0..N`; `None` where pruned or already covered.
    pub cover: Vec<Vec<Vec<Option<Var>>>>,
    /// `Φ[w][n]`, `n = 0..=N`.
    pub phi: Vec<Vec<LinExpr>>,
    /// Collision binaries per agent pair `(i, j, n, faces)`.
    pub collision: Vec<(usize, usize, usize, Vec<Var>)>,
    /// Objective terms I, II and III.
    pub terms: [LinExpr; 3],
}

#[derive(Debug, Clone)]
pub struct AgentPlan {
    pub states: Vec<VehicleState>,
    pub inputs: Vec<VehicleInput>,
    pub target_distance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub terms: [f64; 3],
    pub plans: Vec<Option<AgentPlan>>,
    /// `b_W[w][i][n]` as booleans.
    pub cover: Vec<Vec<Vec<bool>>>,
    pub phi: Vec<Vec<f64>>,
}

impl OcpSolution {
    pub fn from_milp(handles: &OcpHandles, sol: &MilpSolution) -> Option<Self> {
        if !sol.has_values() {
            return None;
        }
        let plans = handles
            .agents
            .iter()
            .map(|h| {
                h.as_ref().map(|h| AgentPlan {
                    states: h
                        .x
                        .iter()
                        .map(|row| {
                            VehicleState::from_vector(&StateVector::from_iterator(row.iter().map(|&v| sol.value(v))))
                        })
                        .collect(),
                    inputs: h
                        .u
                        .iter()
                        .map(|row| {
                            VehicleInput::from_vector(&InputVector::from_iterator(row.iter().map(|&v| sol.value(v))))
                        })
                        .collect(),
                    target_distance: h.target_distance.iter().map(|&v| sol.value(v)).collect(),
                })
            })
            .collect();
        let cover = handles
            .cover
            .iter()
            .map(|per_agent| {
                per_agent
                    .iter()
                    .map(|steps| steps.iter().map(|b| b.is_some_and(|v| sol.binary(v))).collect())
                    .collect()
            })
            .collect();
        let phi = handles
            .phi
            .iter()
            .map(|steps| steps.iter().map(|e| sol.eval(e)).collect())
            .collect();
        Some(Self {
            status: sol.status,
            objective: sol.objective,
            terms: [
                sol.eval(&handles.terms[0]),
                sol.eval(&handles.terms[1]),
                sol.eval(&handles.terms[2]),
            ],
            plans,
            cover,
            phi,
        })
    }

    /// Whether agent `i` covers any waypoint inside the horizon.
    pub fn agent_covers_any(&self, i: usize) -> bool {
        self.cover.iter().any(|w| w.get(i).is_some_and(|s| s.iter().any(|&b| b)))
    }

    /// Whether waypoint `w` gets covered by anyone inside the horizon.
    pub fn waypoint_covered_in_horizon(&self, w: usize) -> bool {
        self.cover[w].iter().any(|s| s.iter().any(|&b| b))
    }

    /// Waypoints marked covered at the current step (`b_W(0) = 1`).
    pub fn covered_now(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (w, per_agent) in self.cover.iter().enumerate() {
            for (i, steps) in per_agent.iter().enumerate() {
                if steps.first().copied().unwrap_or(false) {
                    out.push((w, i));
                }
            }
        }
        out
    }

    pub fn first_input(&self, i: usize) -> Option<VehicleInput> {
        self.plans.get(i)?.as_ref()?.inputs.first().copied()
    }
}

/// Per-step interval boxes of the state reachable under the input box.
pub fn reachable_boxes(
    params: &VehicleParams,
    x0: &VehicleState,
    horizon: usize,
) -> Result<Vec<(StateVector, StateVector)>, VehicleError> {
    let seg = params.segment_for(x0.dod.clamp(0.0, 1.0))?;
    let ulo = InputVector::from_column_slice(&params.input_lower);
    let uhi = InputVector::from_column_slice(&params.input_upper);
    let uc = (ulo + uhi) * 0.5;
    let ur = (uhi - ulo) * 0.5;
    let xlo = StateVector::from_column_slice(&params.state_lower);
    let xhi = StateVector::from_column_slice(&params.state_upper);
    let x0 = x0.to_vector();
    let mut boxes = vec![(x0, x0)];
    let abs_a = seg.a.abs();
    let abs_b = seg.b.abs();
    for _ in 0..horizon {
        let (lo, hi) = boxes.last().unwrap();
        let c = (lo + hi) * 0.5;
        let r = (hi - lo) * 0.5;
        let nc = seg.a * c + seg.b * uc + seg.e;
        let nr = abs_a * r + abs_b * ur;
        let mut nlo = nc - nr;
        let mut nhi = nc + nr;
        for k in 0..STATE_DIM {
            let (l, h) = (nlo[k].max(xlo[k]), nhi[k].min(xhi[k]));
            // An empty intersection means the limits are already broken;
            // keep the reachable interval and let the solver report it.
            if l <= h {
                nlo[k] = l;
                nhi[k] = h;
            }
        }
        boxes.push((nlo, nhi));
    }
    Ok(boxes)
}

fn face_range(face: &AffineFace, lo: &Vector3<f64>, hi: &Vector3<f64>, offset: bool) -> (f64, f64) {
    let n = face.normal();
    let mut min = if offset { face.c0 } else { 0.0 };
    let mut max = min;
    for k in 0..3 {
        let (a, b) = (n[k] * lo[k], n[k] * hi[k]);
        min += a.min(b);
        max += a.max(b);
    }
    (min, max)
}

fn face_value(face: &AffineFace, p: &Vec3Expr) -> LinExpr {
    LinExpr::weighted([(&p[0], face.cx), (&p[1], face.cy), (&p[2], face.cz)]) + face.c0
}

fn pos_box(b: &(StateVector, StateVector)) -> (Vector3<f64>, Vector3<f64>) {
    (b.0.fixed_rows::<3>(sx::X).into_owned(), b.1.fixed_rows::<3>(sx::X).into_owned())
}

fn box_ball_distance(lo: &Vector3<f64>, hi: &Vector3<f64>, c: &Point3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let e = (lo[k] - c[k]).max(0.0) + (c[k] - hi[k]).max(0.0);
        d2 += e * e;
    }
    d2.sqrt()
}

struct Approximations {
    speed: PolyApprox,
    target: PolyApprox,
    collision: PolyApprox,
    waypoint: PolyApprox,
}

/// Build the MILP for one MPC iteration.
pub fn build(snapshot: &ScenarioSnapshot) -> Result<(MilpModel, OcpHandles), OcpError> {
    build_with(snapshot, BuildOptions::default())
}

pub fn build_with(snapshot: &ScenarioSnapshot, opts: BuildOptions) -> Result<(MilpModel, OcpHandles), OcpError> {
    let n_h = snapshot.horizon;
    if n_h < 2 {
        return Err(OcpError::HorizonTooShort(n_h));
    }
    if !(snapshot.dt > 0.0 && snapshot.dt.is_finite()) {
        return Err(OcpError::InvalidDt(snapshot.dt));
    }
    let active = snapshot.active_count();
    if active == 0 {
        return Err(OcpError::NoActiveAgents);
    }
    let approx = Approximations {
        speed: make_cylinder_faces(snapshot.degrees.physical)?,
        target: make_closed_cylinder_faces(snapshot.degrees.physical)?,
        collision: make_closed_cylinder_faces(snapshot.degrees.obstacle)?,
        waypoint: make_sphere_faces(snapshot.degrees.waypoint)?,
    };
    let big_m = if snapshot.big_m > 0.0 { snapshot.big_m } else { DEFAULT_BIG_M };
    let mut model = MilpModel::new(big_m);
    let weights = &snapshot.weights;
    let n_wp = snapshot.waypoints.len();
    let n_agents = snapshot.agents.len();

    let mut terms = [LinExpr::new(), LinExpr::new(), LinExpr::new()];
    let mut agent_handles: Vec<Option<AgentHandles>> = vec![None; n_agents];
    let mut boxes_all: Vec<Vec<(StateVector, StateVector)>> = vec![Vec::new(); n_agents];
    // Target rows wait for Φ, which the coverage block creates.
    let mut pending: Vec<PendingTarget> = Vec::new();

    for (i, agent) in snapshot.agents.iter().enumerate() {
        if !agent.is_airborne() {
            continue;
        }
        let params = &*agent.params;
        let x0 = agent.state;
        validate_start(snapshot, i)?;
        let seg = params.segment_for(x0.dod.clamp(0.0, 1.0))?;
        let boxes = reachable_boxes(params, &x0, n_h)?;
        let tag = |s: &str, n: usize| format!("a{i}.{s}[{n}]");

        // States and inputs.
        let x0v = x0.to_vector();
        let mut x: Vec<[Var; STATE_DIM]> = Vec::with_capacity(n_h + 1);
        for (n, (lo, hi)) in boxes.iter().enumerate() {
            let row: [Var; STATE_DIM] = std::array::from_fn(|k| {
                let name = format!("a{i}.{}[{n}]", sx::NAMES[k]);
                if n == 0 {
                    model.add_fixed(name, x0v[k])
                } else {
                    model.add_continuous(name, lo[k], hi[k])
                }
            });
            x.push(row);
        }
        let u: Vec<[Var; INPUT_DIM]> = (0..n_h)
            .map(|n| {
                std::array::from_fn(|k| {
                    model.add_continuous(
                        format!("a{i}.{}[{n}]", su::NAMES[k]),
                        params.input_lower[k],
                        params.input_upper[k],
                    )
                })
            })
            .collect();

        // Dynamics.
        for n in 0..n_h {
            for r in 0..STATE_DIM {
                let mut rhs = LinExpr::constant(seg.e[r]);
                for c in 0..STATE_DIM {
                    if seg.a[(r, c)] != 0.0 {
                        rhs.add_term(x[n][c], seg.a[(r, c)]);
                    }
                }
                for c in 0..INPUT_DIM {
                    if seg.b[(r, c)] != 0.0 {
                        rhs.add_term(u[n][c], seg.b[(r, c)]);
                    }
                }
                model.add_eq(format!("a{i}.dyn{}[{n}]", sx::NAMES[r]), x[n + 1][r], rhs);
            }
        }

        // Physical limits on the horizontal speed and tilt norms.
        for n in 1..=n_h {
            let v = vec3(x[n][sx::VX], x[n][sx::VY], 0.0);
            encode_norm_ub(&mut model, &v, &approx.speed, ApproxSide::Inner, params.speed_max, None, &tag("vmax", n));
            let tilt = vec3(x[n][sx::PHI], x[n][sx::THETA], 0.0);
            encode_norm_ub(&mut model, &tilt, &approx.speed, ApproxSide::Inner, params.tilt_max, None, &tag("tilt", n));
        }

        // Thrust correction ΔT = k_L·L + k_v·‖v_h‖.
        let speed_cap = params.speed_max / approx.speed.c_in_inner();
        let mut speed = Vec::with_capacity(n_h);
        for n in 0..n_h {
            let s = model.add_continuous(tag("vh", n), 0.0, speed_cap);
            let v = vec3(x[n][sx::VX], x[n][sx::VY], 0.0);
            encode_norm_ub(&mut model, &v, &approx.speed, ApproxSide::Outer, s, None, &tag("vh", n));
            let tc = params.thrust_correction;
            model.add_eq(
                tag("dT", n),
                u[n][su::DELTA_T],
                u[n][su::LIFT] * tc.lift_gain + s * tc.speed_gain,
            );
            speed.push(s);
        }

        // Absolute-value slacks of the penalized channels.
        let share = active as f64;
        for n in 0..n_h {
            for k in 0..INPUT_DIM {
                // A zero limit pins the channel, so there is nothing to penalize.
                if weights.input[k] > 0.0 && params.input_limit(k) > 0.0 {
                    let s = encode_abs(&mut model, u[n][k], &tag(su::NAMES[k], n));
                    terms[0].add_term(s, weights.input[k] / (params.input_limit(k) * share));
                }
            }
        }
        for n in 1..=n_h {
            for k in 0..STATE_DIM {
                if weights.state[k] > 0.0 && params.state_limit(k) > 0.0 {
                    let e = if k == sx::DOD {
                        x[n][k] - x0.dod
                    } else {
                        LinExpr::from(x[n][k])
                    };
                    let s = encode_abs(&mut model, e, &tag(&format!("{}s", sx::NAMES[k]), n));
                    terms[0].add_term(s, weights.state[k] / (params.state_limit(k) * share));
                }
            }
        }

        // Geo fence; faces that the reachable box cannot violate are skipped.
        let positions: Vec<Vec3Expr> = (0..=n_h).map(|n| vec3(x[n][sx::X], x[n][sx::Y], x[n][sx::Z])).collect();
        for n in 1..=n_h {
            let (lo, hi) = pos_box(&boxes[n]);
            for (h, face) in snapshot.fence.region.faces().iter().enumerate() {
                if face_range(face, &lo, &hi, true).1 > snapshot.fence.delta {
                    model.add_le(format!("a{i}.fence{h}[{n}]"), face_value(face, &positions[n]), snapshot.fence.delta);
                }
            }
        }

        // Obstacles.
        let mut obstacle_handles = Vec::new();
        for (o, obs) in snapshot.obstacles.iter().enumerate() {
            let clearance = obs.clearance(params.radius);
            let handles = add_obstacle(&mut model, snapshot, o, obs, clearance, &positions, &boxes, i)?;
            if let Some(h) = handles {
                obstacle_handles.push(h);
            }
        }

        // Target distance.
        let mut target_distance = Vec::new();
        if opts.targets && matches!(agent.mode, OpMode::Transit | OpMode::Return) {
            let target = agent.target.ok_or(OcpError::MissingTarget { agent: i, mode: agent.mode })?;
            let relax_wp = match (agent.mode, target.kind) {
                (OpMode::Transit, TargetKind::Waypoint(w)) => {
                    if w >= n_wp {
                        return Err(OcpError::UnknownWaypoint { agent: i, waypoint: w });
                    }
                    Some(w)
                }
                _ => None,
            };
            let c_in = approx.target.c_in(ApproxSide::Inner);
            for n in 1..=n_h {
                let (lo, hi) = pos_box(&boxes[n]);
                let far = (0..3)
                    .map(|k| (lo[k] - target.position[k]).abs().max((hi[k] - target.position[k]).abs()))
                    .fold(0.0, f64::max);
                let dmax = 2.0 * far / c_in;
                let d = model.add_continuous(tag("Dt", n), 0.0, dmax);
                let rel = vec3(
                    positions[n][0].clone() - target.position.x,
                    positions[n][1].clone() - target.position.y,
                    positions[n][2].clone() - target.position.z,
                );
                target_distance.push((d, rel));
            }
            agent_handles[i] = Some(AgentHandles {
                agent: i,
                x,
                u,
                speed,
                target_distance: target_distance.iter().map(|t| t.0).collect(),
                obstacles: obstacle_handles,
            });
            for (d, _) in &target_distance {
                terms[1].add_term(*d, target.weight);
            }
            pending.push((i, relax_wp, target_distance));
        } else {
            agent_handles[i] = Some(AgentHandles {
                agent: i,
                x,
                u,
                speed,
                target_distance: Vec::new(),
                obstacles: obstacle_handles,
            });
        }
        boxes_all[i] = boxes;
    }

    // Collision avoidance. A landed agent has no variables but still occupies
    // its position, so airborne agents keep clear of it.
    let mut collision = Vec::new();
    for i in 0..n_agents {
        for j in i + 1..n_agents {
            let (hi_, hj) = (&agent_handles[i], &agent_handles[j]);
            if hi_.is_none() && hj.is_none() {
                continue;
            }
            let sep = snapshot.min_separation(i, j);
            let side = |k: usize, h: &Option<AgentHandles>, n: usize| match h {
                Some(h) => (h.position(n), pos_box(&boxes_all[k][n])),
                None => {
                    let p = snapshot.agents[k].state.p;
                    (vec3(p.x, p.y, p.z), (p, p))
                }
            };
            for n in 1..=n_h {
                let (pi, (ilo, ihi)) = side(i, hi_, n);
                let (pj, (jlo, jhi)) = side(j, hj, n);
                let (dlo, dhi) = (ilo - jhi, ihi - jlo);
                let certain = approx
                    .collision
                    .faces()
                    .iter()
                    .any(|f| face_range(f, &dlo, &dhi, false).0 >= sep);
                if certain {
                    continue;
                }
                let rel = vec3(pi[0].clone() - pj[0].clone(), pi[1].clone() - pj[1].clone(), pi[2].clone() - pj[2].clone());
                let bins = encode_norm_lb(&mut model, &rel, &approx.collision, ApproxSide::Inner, sep, &format!("col{i}.{j}[{n}]"));
                collision.push((i, j, n, bins));
            }
        }
    }

    // Waypoint coverage.
    let mut cover: Vec<Vec<Vec<Option<Var>>>> = vec![vec![vec![None; n_h]; n_agents]; n_wp];
    let mut phi: Vec<Vec<LinExpr>> = Vec::with_capacity(n_wp);
    for (w, wp) in snapshot.waypoints.iter().enumerate() {
        let phi0 = if wp.uncovered { 1.0 } else { 0.0 };
        let mut steps = vec![LinExpr::constant(phi0)];
        for n in 0..n_h {
            let mut drained = LinExpr::new();
            if opts.coverage && wp.uncovered {
                for (i, h) in agent_handles.iter().enumerate() {
                    let Some(h) = h else { continue };
                    if !waypoint_reachable(&approx.waypoint, wp, &boxes_all[i][n]) {
                        continue;
                    }
                    let b = model.add_binary(format!("bW{w}.a{i}[{n}]"));
                    model.set_priority(b, 2);
                    let p = h.position(n);
                    let rel = vec3(
                        p[0].clone() - wp.position.x,
                        p[1].clone() - wp.position.y,
                        p[2].clone() - wp.position.z,
                    );
                    encode_norm_ub(
                        &mut model,
                        &rel,
                        &approx.waypoint,
                        ApproxSide::Outer,
                        wp.radius,
                        Some(b.into()),
                        &format!("wp{w}.a{i}[{n}]"),
                    );
                    drained.add_term(b, 1.0);
                    cover[w][i][n] = Some(b);
                }
            }
            let prev = steps[n].clone();
            if drained.terms().is_empty() {
                steps.push(prev);
            } else {
                model.add_le(format!("wp{w}.once[{n}]"), drained.clone(), prev.clone());
                let next = model.add_continuous(format!("phi{w}[{}]", n + 1), 0.0, 1.0);
                model.add_eq(format!("wp{w}.phi[{}]", n + 1), next, prev - drained);
                steps.push(LinExpr::from(next));
            }
        }
        if opts.coverage {
            for step in steps.iter().skip(1) {
                terms[2].add_scaled(step, wp.weight);
            }
        }
        phi.push(steps);
    }

    // Transit relaxations now that Φ exists.
    for (i, relax_wp, rows) in pending {
        for (n_idx, (d, rel)) in rows.into_iter().enumerate() {
            let n = n_idx + 1;
            let relax = relax_wp.map(|w| phi[w][n].clone());
            encode_norm_ub(
                &mut model,
                &rel,
                &approx.target,
                ApproxSide::Inner,
                d,
                relax,
                &format!("a{i}.target[{n}]"),
            );
        }
    }

    let objective = terms[0].clone() + terms[1].clone() + terms[2].clone();
    model.set_objective(objective);
    model.validate()?;
    Ok((
        model,
        OcpHandles {
            horizon: n_h,
            agents: agent_handles,
            cover,
            phi,
            collision,
            terms,
        },
    ))
}

type PendingTarget = (usize, Option<usize>, Vec<(Var, Vec3Expr)>);

fn waypoint_reachable(approx: &PolyApprox, wp: &Waypoint, b: &(StateVector, StateVector)) -> bool {
    let (lo, hi) = pos_box(b);
    let (rlo, rhi) = (lo - wp.position, hi - wp.position);
    if approx.faces().iter().any(|f| face_range(f, &rlo, &rhi, false).0 > wp.radius) {
        return false;
    }
    box_ball_distance(&lo, &hi, &wp.position) <= wp.radius / approx.c_in_inner()
}

fn validate_start(snapshot: &ScenarioSnapshot, i: usize) -> Result<(), OcpError> {
    let agent = &snapshot.agents[i];
    let params = &agent.params;
    let p = agent.state.p;
    let excess = snapshot.fence.region.max_distance(&p) - snapshot.fence.delta;
    if excess > START_TOL {
        return Err(OcpError::OutsideFence { agent: i, excess });
    }
    for (o, obs) in snapshot.obstacles.iter().enumerate() {
        if obs.region.max_distance(&p) < obs.clearance(params.radius) - START_TOL {
            return Err(OcpError::InsideObstacle { agent: i, obstacle: o });
        }
    }
    let x = agent.state.to_vector();
    for k in 0..STATE_DIM {
        let (lo, hi) = (params.state_lower[k], params.state_upper[k]);
        let slack = START_TOL * lo.abs().max(hi.abs()).max(1.0);
        if !x[k].is_finite() || x[k] < lo - slack || x[k] > hi + slack {
            return Err(OcpError::StateOutOfLimits {
                agent: i,
                component: sx::NAMES[k],
                value: x[k],
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn add_obstacle(
    model: &mut MilpModel,
    snapshot: &ScenarioSnapshot,
    o: usize,
    obs: &Obstacle,
    clearance: f64,
    positions: &[Vec3Expr],
    boxes: &[(StateVector, StateVector)],
    i: usize,
) -> Result<Option<ObstacleHandles>, OcpError> {
    let n_h = snapshot.horizon;
    let dt = snapshot.dt;
    let (velocity, delta) = match obs.velocity {
        None => (Vector3::zeros(), clearance),
        Some(v) => (v, clearance + 0.5 * v.norm() * dt),
    };
    let region_at = |n: usize| {
        if obs.is_fixed() {
            obs.region.clone()
        } else {
            obs.region.translated(&(velocity * (n as f64 * dt)))
        }
    };
    // Skip when one face separates every reachable position from the
    // inflated obstacle over the whole horizon.
    let separated = (0..obs.region.face_count()).any(|h| {
        (1..=n_h).all(|n| {
            let (lo, hi) = pos_box(&boxes[n]);
            let face = region_at(n).faces()[h];
            face_range(&face, &lo, &hi, true).0 >= delta
        })
    });
    if separated {
        return Ok(None);
    }
    let mut faces = Vec::with_capacity(n_h);
    for n in 1..=n_h {
        let region = region_at(n);
        faces.push(encode_hull_outside(model, &positions[n], &region, delta, &format!("a{i}.obs{o}[{n}]")));
    }
    let mut corner = Vec::new();
    if obs.is_fixed() {
        let p0 = snapshot.agents[i].state.p;
        let start: Vec<LinExpr> = obs
            .region
            .signed_distances(&p0)
            .iter()
            .map(|&d| LinExpr::constant(if d >= delta - START_TOL { 0.0 } else { 1.0 }))
            .collect();
        let as_expr = |v: &[Var]| v.iter().map(|&b| LinExpr::from(b)).collect::<Vec<_>>();
        corner.push(encode_corner_cutting(model, &start, &as_expr(&faces[0]), &format!("a{i}.cc{o}[0]")));
        for n in 1..n_h {
            corner.push(encode_corner_cutting(
                model,
                &as_expr(&faces[n - 1]),
                &as_expr(&faces[n]),
                &format!("a{i}.cc{o}[{n}]"),
            ));
        }
    }
    Ok(Some(ObstacleHandles {
        obstacle: o,
        faces,
        corner,
    }))
}
