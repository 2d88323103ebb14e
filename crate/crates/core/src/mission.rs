//! Operation-mode state machine, target-distance lifecycle and transit
//! waypoint selection. Runs between solves.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::ocp::{OcpSolution, OpMode, Target, TargetKind, UasAgent, Waypoint};
use crate::vehicle::VehicleError;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("return threshold for agent {agent}: {source}")]
    ReturnThreshold {
        agent: usize,
        #[source]
        source: VehicleError,
    },
    #[error("invalid mission setting: {0}")]
    InvalidSetting(String),
}

/// Weights of the transit cost factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionWeights {
    pub horizontal: f64,
    pub vertical: f64,
    pub heading: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            horizontal: 0.6,
            vertical: 0.2,
            heading: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Overestimated remaining flight distance `D_r,max` (m).
    pub return_distance: f64,
    /// Replaces the computed return threshold when set.
    pub return_dod: Option<f64>,
    /// Landing radius `δ_l` (m).
    pub landing_radius: f64,
    /// Speed below which an agent counts as stationary (m/s, max norm).
    pub velocity_eps: f64,
    pub selection: SelectionWeights,
    /// `W_D` before normalization.
    pub target_weight: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            return_distance: 20.0,
            return_dod: None,
            landing_radius: 1.0,
            velocity_eps: 0.05,
            selection: SelectionWeights::default(),
            target_weight: 2.0,
        }
    }
}

/// Per-agent decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub return_dod: f64,
    pub dod_max: f64,
    pub landing_radius: f64,
    pub velocity_eps: f64,
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        let positive = [
            ("return_distance", self.return_distance),
            ("landing_radius", self.landing_radius),
            ("velocity_eps", self.velocity_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MissionError::InvalidSetting(format!("{name} must be positive, got {v}")));
            }
        }
        let s = self.selection;
        for v in [s.horizontal, s.vertical, s.heading, self.target_weight] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MissionError::InvalidSetting(format!("weights must be nonnegative, got {v}")));
            }
        }
        if let Some(d) = self.return_dod {
            if !(0.0..=1.0).contains(&d) {
                return Err(MissionError::InvalidSetting(format!("return_dod {d} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn thresholds_for(&self, agent: &UasAgent) -> Result<Thresholds, MissionError> {
        let return_dod = match self.return_dod {
            Some(d) => d,
            None => agent
                .params
                .return_threshold(self.return_distance)
                .map_err(|source| MissionError::ReturnThreshold { agent: agent.id, source })?,
        };
        Ok(Thresholds {
            return_dod,
            dod_max: agent.params.dod_max,
            landing_radius: self.landing_radius,
            velocity_eps: self.velocity_eps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetAction {
    AddTarget,
    UpdateTarget,
    RemoveTarget,
    MarkLanded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTransition {
    pub agent: usize,
    pub from: OpMode,
    pub to: OpMode,
    pub actions: Vec<TargetAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitChoice {
    pub waypoint: usize,
    pub cost: f64,
    /// Normalized components of the cost factor.
    pub horizontal: f64,
    pub vertical: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetUpdate {
    pub transitions: Vec<OpTransition>,
    /// Set when any target-distance term was added, updated or removed.
    pub rebuild: bool,
}

/// Action set for a mode change of the target-distance lifecycle.
pub fn transition_actions(from: OpMode, to: OpMode) -> &'static [TargetAction] {
    use OpMode::*;
    use TargetAction::*;
    match (from, to) {
        (Covering, Transit) | (Covering, Return) | (Transit, Return) => &[AddTarget],
        (Transit, Covering) => &[RemoveTarget],
        (Transit, Transit) | (Return, Return) => &[UpdateTarget],
        (Return, Landed) => &[MarkLanded, RemoveTarget],
        _ => &[],
    }
}

/// Next operation mode of agent `index` given the current coverage and the
/// previous solve (if any).
pub fn determine_next_op(
    agent: &UasAgent,
    index: usize,
    waypoints: &[Waypoint],
    last: Option<&OcpSolution>,
    thresholds: &Thresholds,
) -> OpMode {
    match agent.mode {
        OpMode::Landed => OpMode::Landed,
        OpMode::Return => {
            let home = (agent.state.p - agent.p_init).norm();
            let still = agent.state.v.amax() <= thresholds.velocity_eps;
            if home <= thresholds.landing_radius && still {
                OpMode::Landed
            } else {
                OpMode::Return
            }
        }
        _ if waypoints.iter().all(|w| !w.uncovered) || agent.state.dod >= thresholds.return_dod => OpMode::Return,
        OpMode::Transit => match agent.target.map(|t| t.kind) {
            Some(TargetKind::Waypoint(w)) if waypoints.get(w).is_some_and(|wp| wp.uncovered) => OpMode::Transit,
            _ => OpMode::Covering,
        },
        OpMode::Covering => match last {
            Some(sol) if !sol.agent_covers_any(index) => OpMode::Transit,
            _ => OpMode::Covering,
        },
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w < -PI + 1e-15 {
        PI
    } else {
        w
    }
}

/// Cheapest feasible transit waypoint; `None` when nothing is left.
/// `excluded` lists waypoints targeted by other agents or covered inside
/// the last prediction.
pub fn select_target_waypoint(
    agent: &UasAgent,
    waypoints: &[Waypoint],
    excluded: &[usize],
    weights: &SelectionWeights,
) -> Option<TransitChoice> {
    let p = agent.state.p;
    let yaw = agent.state.attitude.z;
    let raw: Vec<(usize, f64, f64, f64)> = waypoints
        .iter()
        .enumerate()
        .filter(|(w, wp)| wp.uncovered && !excluded.contains(w))
        .map(|(w, wp)| {
            let d = wp.position - p;
            let horizontal = d.x.hypot(d.y);
            let heading = if horizontal > 0.0 {
                wrap_angle(d.y.atan2(d.x) - yaw).abs() / PI
            } else {
                0.0
            };
            (w, horizontal, d.z.abs(), heading)
        })
        .collect();
    let h_max = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    let v_max = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    let scale = |x: f64, max: f64| if max > 0.0 { x / max } else { 0.0 };
    raw.into_iter()
        .map(|(w, h, v, psi)| {
            let horizontal = scale(h, h_max);
            let vertical = scale(v, v_max);
            TransitChoice {
                waypoint: w,
                cost: weights.horizontal * horizontal + weights.vertical * vertical + weights.heading * psi,
                horizontal,
                vertical,
                heading: psi,
            }
        })
        // Strict comparison keeps the lowest index among ties.
        .fold(None, |best: Option<TransitChoice>, c| match best {
            Some(b) if b.cost <= c.cost => Some(b),
            _ => Some(c),
        })
}

/// `W_t`: target weight normalized by the current distance to the waypoint.
pub fn transit_weight(target_weight: f64, agent_pos: &Point3, wp: &Waypoint) -> f64 {
    target_weight / (agent_pos - wp.position).norm().max(wp.radius)
}

/// Charge scaling of the return weight. Before the threshold is reached
/// (return triggered by full coverage) the pull is at its full value.
pub const RETURN_WEIGHT_FLOOR: f64 = 0.5;

/// `W_r`: normalized by the distance to home at the start of the iteration
/// (floored at the landing radius) and raised linearly with the depth of
/// discharge between the return threshold and `DoD_max`.
pub fn return_weight(target_weight: f64, distance: f64, dod: f64, thresholds: &Thresholds, all_covered: bool) -> f64 {
    let charge = if all_covered {
        1.0
    } else {
        let span = thresholds.dod_max - thresholds.return_dod;
        let ratio = if span > 0.0 {
            (dod - thresholds.return_dod) / span
        } else {
            1.0
        };
        RETURN_WEIGHT_FLOOR + (1.0 - RETURN_WEIGHT_FLOOR) * ratio.clamp(0.0, 1.0)
    };
    target_weight / distance.max(thresholds.landing_radius) * charge
}

fn home_target(cfg: &MissionConfig, agent: &UasAgent, th: &Thresholds, all_covered: bool) -> Target {
    let distance = (agent.state.p - agent.p_init).norm();
    Target {
        position: agent.p_init,
        weight: return_weight(cfg.target_weight, distance, agent.state.dod, th, all_covered),
        kind: TargetKind::Home,
    }
}

/// Apply the mode machine to every agent and maintain their targets.
pub fn update_target_dynamics(
    agents: &mut [UasAgent],
    thresholds: &[Thresholds],
    waypoints: &[Waypoint],
    last: Option<&OcpSolution>,
    cfg: &MissionConfig,
) -> TargetUpdate {
    let all_covered = waypoints.iter().all(|w| !w.uncovered);
    let in_horizon: Vec<usize> = match last {
        Some(sol) => (0..waypoints.len())
            .filter(|&w| sol.waypoint_covered_in_horizon(w))
            .collect(),
        None => Vec::new(),
    };
    let mut transitions = Vec::with_capacity(agents.len());
    for i in 0..agents.len() {
        let th = &thresholds[i];
        let from = agents[i].mode;
        let mut to = determine_next_op(&agents[i], i, waypoints, last, th);

        if from == OpMode::Covering && to == OpMode::Transit {
            let mut excluded = in_horizon.clone();
            excluded.extend(agents.iter().enumerate().filter(|(j, _)| *j != i).filter_map(|(_, a)| {
                match a.target.map(|t| t.kind) {
                    Some(TargetKind::Waypoint(w)) if a.mode == OpMode::Transit => Some(w),
                    _ => None,
                }
            }));
            match select_target_waypoint(&agents[i], waypoints, &excluded, &cfg.selection) {
                Some(choice) => {
                    let wp = &waypoints[choice.waypoint];
                    agents[i].target = Some(Target {
                        position: wp.position,
                        weight: transit_weight(cfg.target_weight, &agents[i].state.p, wp),
                        kind: TargetKind::Waypoint(choice.waypoint),
                    });
                }
                // Nothing left for this agent: coverage is complete from its view.
                None => to = OpMode::Return,
            }
        }

        let actions = transition_actions(from, to);
        match (from, to) {
            (OpMode::Transit, OpMode::Transit) => {
                if let Some(t) = agents[i].target.as_mut() {
                    if let TargetKind::Waypoint(w) = t.kind {
                        t.weight = transit_weight(cfg.target_weight, &agents[i].state.p, &waypoints[w]);
                    }
                }
            }
            (_, OpMode::Return) => {
                agents[i].target = Some(home_target(cfg, &agents[i], th, all_covered));
            }
            (OpMode::Transit, OpMode::Covering) | (OpMode::Return, OpMode::Landed) => agents[i].target = None,
            _ => {}
        }
        agents[i].mode = to;
        transitions.push(OpTransition {
            agent: agents[i].id,
            from,
            to,
            actions: actions.to_vec(),
        });
    }
    let rebuild = transitions.iter().any(|t| !t.actions.is_empty());
    TargetUpdate { transitions, rebuild }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{SyntheticQuad, VehicleState};
    use nalgebra::Vector3;
    use std::sync::Arc;

    fn agent_at(p: [f64; 3], yaw: f64) -> UasAgent {
        let mut state = VehicleState::at_rest(Vector3::from(p), 0.0);
        state.attitude.z = yaw;
        UasAgent {
            id: 0,
            params: Arc::new(SyntheticQuad::default().build()),
            state,
            mode: OpMode::Covering,
            p_init: Vector3::from(p),
            target: None,
        }
    }

    fn wp(p: [f64; 3]) -> Waypoint {
        Waypoint {
            position: Vector3::from(p),
            radius: 0.5,
            uncovered: true,
            weight: 1.0,
        }
    }

    fn th() -> Thresholds {
        Thresholds {
            return_dod: 0.6,
            dod_max: 0.75,
            landing_radius: 1.0,
            velocity_eps: 0.05,
        }
    }

    #[test]
    fn landed_is_absorbing() {
        let mut a = agent_at([0.0; 3], 0.0);
        a.mode = OpMode::Landed;
        a.state.dod = 0.9;
        assert_eq!(determine_next_op(&a, 0, &[wp([1.0, 0.0, 0.0])], None, &th()), OpMode::Landed);
    }

    #[test]
    fn low_charge_triggers_return() {
        let mut a = agent_at([0.0; 3], 0.0);
        a.state.dod = 0.61;
        assert_eq!(determine_next_op(&a, 0, &[wp([1.0, 0.0, 0.0])], None, &th()), OpMode::Return);
    }

    #[test]
    fn full_coverage_triggers_return() {
        let a = agent_at([0.0; 3], 0.0);
        let mut w = wp([1.0, 0.0, 0.0]);
        w.uncovered = false;
        assert_eq!(determine_next_op(&a, 0, &[w], None, &th()), OpMode::Return);
    }

    #[test]
    fn landing_needs_position_and_rest() {
        let mut a = agent_at([0.5, 0.0, 0.0], 0.0);
        a.p_init = Vector3::zeros();
        a.mode = OpMode::Return;
        assert_eq!(determine_next_op(&a, 0, &[], None, &th()), OpMode::Landed);
        a.state.v.x = 0.2;
        assert_eq!(determine_next_op(&a, 0, &[], None, &th()), OpMode::Return);
        a.state.v.x = 0.0;
        a.state.p.x = 1.5;
        assert_eq!(determine_next_op(&a, 0, &[], None, &th()), OpMode::Return);
    }

    #[test]
    fn transit_ends_when_target_is_covered() {
        let mut a = agent_at([0.0; 3], 0.0);
        a.mode = OpMode::Transit;
        a.target = Some(Target {
            position: Vector3::new(5.0, 0.0, 0.0),
            weight: 1.0,
            kind: TargetKind::Waypoint(0),
        });
        let mut wps = vec![wp([5.0, 0.0, 0.0]), wp([9.0, 0.0, 0.0])];
        assert_eq!(determine_next_op(&a, 0, &wps, None, &th()), OpMode::Transit);
        wps[0].uncovered = false;
        assert_eq!(determine_next_op(&a, 0, &wps, None, &th()), OpMode::Covering);
    }

    #[test]
    fn selection_examples() {
        let a = agent_at([0.0, 0.0, -2.0], 0.0);
        let w = SelectionWeights::default();
        let only = select_target_waypoint(&a, &[wp([3.0, 4.0, -1.0])], &[], &w).unwrap();
        assert_eq!(only.waypoint, 0);

        let wps = [wp([0.0, 5.0, -6.0]), wp([0.0, 5.0, -2.0])];
        assert_eq!(select_target_waypoint(&a, &wps, &[], &w).unwrap().waypoint, 1);
        assert_eq!(select_target_waypoint(&a, &wps, &[1], &w).unwrap().waypoint, 0);
        assert!(select_target_waypoint(&a, &wps, &[0, 1], &w).is_none());

        let tied = [wp([0.0, 5.0, -2.0]), wp([0.0, -5.0, -2.0])];
        assert_eq!(select_target_waypoint(&a, &tied, &[], &w).unwrap().waypoint, 0);
    }

    #[test]
    fn heading_component_uses_wrapped_angle() {
        let a = agent_at([0.0, 0.0, 0.0], 3.0);
        let c = select_target_waypoint(&a, &[wp([-1.0, -0.1, 0.0])], &[], &SelectionWeights::default()).unwrap();
        assert!(c.heading < 0.1, "{}", c.heading);
    }

    #[test]
    fn action_table() {
        use OpMode::*;
        use TargetAction::*;
        assert_eq!(transition_actions(Covering, Transit), &[AddTarget]);
        assert_eq!(transition_actions(Return, Landed), &[MarkLanded, RemoveTarget]);
        assert!(transition_actions(Covering, Covering).is_empty());
    }

    #[test]
    fn return_weight_scaling() {
        let t = th();
        assert!((return_weight(2.0, 4.0, 0.6, &t, false) - 0.25).abs() < 1e-12);
        assert!((return_weight(2.0, 4.0, 0.75, &t, false) - 0.5).abs() < 1e-12);
        assert!((return_weight(2.0, 4.0, 0.1, &t, true) - 0.5).abs() < 1e-12);
        assert!((return_weight(2.0, 0.2, 0.1, &t, true) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn return_normalization_follows_the_current_distance() {
        let mut a = agent_at([4.0, 0.0, 0.0], 0.0);
        a.p_init = Vector3::zeros();
        a.mode = OpMode::Covering;
        let cfg = MissionConfig::default();
        let wps = [Waypoint { uncovered: false, ..wp([9.0, 0.0, 0.0]) }];
        let mut agents = [a];
        update_target_dynamics(&mut agents, &[th()], &wps, None, &cfg);
        assert_eq!(agents[0].mode, OpMode::Return);
        agents[0].state.p = Vector3::new(1.5, 0.0, 0.0);
        update_target_dynamics(&mut agents, &[th()], &wps, None, &cfg);
        let t = agents[0].target.unwrap();
        assert_eq!(t.kind, TargetKind::Home);
        assert!((t.weight - cfg.target_weight / 1.5).abs() < 1e-12);
    }
}
