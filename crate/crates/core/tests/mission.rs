mod common;

use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use swarmcov::mission::*;
use swarmcov::ocp::*;

const TH: Thresholds = Thresholds {
    return_dod: 0.6,
    dod_max: 0.75,
    landing_radius: 1.0,
    velocity_eps: 0.05,
};

#[derive(Debug, Clone)]
struct World {
    agents: Vec<UasAgent>,
    waypoints: Vec<Waypoint>,
}

fn world() -> impl Strategy<Value = World> {
    let agent_s = (
        0u8..4,
        prop::array::uniform3(-6.0..6.0f64),
        prop::array::uniform3(-0.3..0.3f64),
        0.0..0.8f64,
        prop::bool::weighted(0.2),
    );
    (
        prop::collection::vec(agent_s, 1..5),
        prop::collection::vec((prop::array::uniform3(-6.0..6.0f64), prop::bool::ANY), 1..7),
    )
        .prop_map(|(agents, wps)| {
            let waypoints: Vec<Waypoint> = wps
                .into_iter()
                .map(|(p, unc)| {
                    let mut w = waypoint(p, 0.5);
                    w.uncovered = unc;
                    w
                })
                .collect();
            let mut next_wp = 0;
            let agents = agents
                .into_iter()
                .enumerate()
                .map(|(id, (mode, p, v, dod, at_home))| {
                    let mut a = agent(id, [id as f64, 0.0, -1.0], dod);
                    if !at_home {
                        a.state.p = Vector3::from(p);
                        a.state.v = Vector3::from(v);
                    }
                    a.mode = OpMode::from_code(mode).unwrap();
                    match a.mode {
                        // Transit agents start with distinct targets.
                        OpMode::Transit if next_wp < waypoints.len() => {
                            a.target = Some(Target {
                                position: waypoints[next_wp].position,
                                weight: 1.0,
                                kind: TargetKind::Waypoint(next_wp),
                            });
                            next_wp += 1;
                        }
                        OpMode::Transit => a.mode = OpMode::Covering,
                        OpMode::Return => {
                            a.target = Some(Target {
                                position: a.p_init,
                                weight: 1.0,
                                kind: TargetKind::Home,
                            })
                        }
                        _ => {}
                    }
                    a
                })
                .collect();
            World { agents, waypoints }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn update_respects_the_mode_machine(w in world()) {
        let mut agents = w.agents.clone();
        let th = vec![TH; agents.len()];
        let update = update_target_dynamics(&mut agents, &th, &w.waypoints, None, &MissionConfig::default());
        prop_assert_eq!(update.transitions.len(), agents.len());
        let mut any_action = false;
        for ((before, after), t) in w.agents.iter().zip(&agents).zip(&update.transitions) {
            prop_assert_eq!(t.from, before.mode);
            prop_assert_eq!(t.to, after.mode);
            prop_assert_eq!(&t.actions[..], transition_actions(t.from, t.to));
            any_action |= !t.actions.is_empty();
            // Tail monotonicity.
            if matches!(before.mode, OpMode::Return | OpMode::Landed) {
                prop_assert!(matches!(after.mode, OpMode::Return | OpMode::Landed));
            }
            if before.mode == OpMode::Landed {
                prop_assert_eq!(after.mode, OpMode::Landed);
            }
            // Return trigger.
            if matches!(before.mode, OpMode::Covering | OpMode::Transit) && before.state.dod >= TH.return_dod {
                prop_assert_eq!(after.mode, OpMode::Return);
            }
            match after.mode {
                OpMode::Transit => {
                    let Some(Target { kind: TargetKind::Waypoint(k), .. }) = after.target else {
                        return Err(TestCaseError::fail("transit agent without a waypoint target"));
                    };
                    prop_assert!(w.waypoints[k].uncovered);
                }
                OpMode::Return => prop_assert!(after.target.is_some_and(|t| t.kind == TargetKind::Home)),
                OpMode::Covering | OpMode::Landed => prop_assert!(after.target.is_none()),
            }
        }
        prop_assert_eq!(update.rebuild, any_action);

        let mut targets: Vec<usize> = agents
            .iter()
            .filter(|a| a.mode == OpMode::Transit)
            .filter_map(|a| match a.target?.kind {
                TargetKind::Waypoint(k) => Some(k),
                TargetKind::Home => None,
            })
            .collect();
        let n = targets.len();
        targets.sort_unstable();
        targets.dedup();
        prop_assert_eq!(targets.len(), n, "two transit agents share a target");
    }

    #[test]
    fn low_charge_always_returns(dod in 0.6..1.0f64, transit in prop::bool::ANY) {
        let mut a = agent(0, [3.0, 3.0, -2.0], dod);
        let wps = vec![waypoint([0.0, 5.0, -2.0], 0.5)];
        if transit {
            a.mode = OpMode::Transit;
            a.target = Some(Target { position: wps[0].position, weight: 1.0, kind: TargetKind::Waypoint(0) });
        }
        prop_assert_eq!(determine_next_op(&a, 0, &wps, None, &TH), OpMode::Return);
    }

    #[test]
    fn landing_needs_rest_inside_the_radius(offset in 0.0..2.0f64, speed in 0.0..0.2f64) {
        let mut a = agent(0, [0.0, 0.0, -1.0], 0.65);
        a.mode = OpMode::Return;
        a.state.p += Vector3::new(offset, 0.0, 0.0);
        a.state.v = Vector3::new(0.0, speed, 0.0);
        let next = determine_next_op(&a, 0, &[], None, &TH);
        let expect_landed = offset <= TH.landing_radius && speed <= TH.velocity_eps;
        prop_assert_eq!(next == OpMode::Landed, expect_landed);
    }

    #[test]
    fn return_weight_grows_with_discharge(d in 0.0..30.0f64, a in 0.6..0.75f64, b in 0.6..0.75f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let w_lo = return_weight(2.0, d, lo, &TH, false);
        let w_hi = return_weight(2.0, d, hi, &TH, false);
        prop_assert!(w_lo <= w_hi + 1e-15);
        prop_assert!(w_hi <= return_weight(2.0, d, hi, &TH, true) + 1e-15);
        prop_assert!(w_lo >= RETURN_WEIGHT_FLOOR * 2.0 / d.max(TH.landing_radius) - 1e-15);
    }
}

#[test]
fn selection_prefers_the_co_altitude_waypoint() {
    let a = agent(0, [0.0, 0.0, -2.0], 0.1);
    let wps = vec![waypoint([0.0, 4.0, -4.0], 0.5), waypoint([0.0, -4.0, -2.0], 0.5)];
    let mut weights = SelectionWeights::default();
    weights.heading = 0.0;
    assert_eq!(select_target_waypoint(&a, &wps, &[], &weights).unwrap().waypoint, 1);
    assert_eq!(select_target_waypoint(&a, &wps, &[1], &weights).unwrap().waypoint, 0);
    assert!(select_target_waypoint(&a, &wps, &[0, 1], &weights).is_none());
}
