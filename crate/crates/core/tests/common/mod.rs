#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::Vector3;
use swarmcov::geometry::{box_region, ConvexRegion};
use swarmcov::ocp::*;
use swarmcov::vehicle::{SyntheticQuad, VehicleParams, VehicleState};

pub fn quad() -> Arc<VehicleParams> {
    Arc::new(SyntheticQuad::default().build())
}

pub fn cube(lo: [f64; 3], hi: [f64; 3]) -> ConvexRegion {
    box_region(Vector3::from(lo), Vector3::from(hi)).unwrap()
}

pub fn agent(id: usize, p: [f64; 3], dod: f64) -> UasAgent {
    let p = Vector3::from(p);
    UasAgent {
        id,
        params: quad(),
        state: VehicleState::at_rest(p, dod),
        mode: OpMode::Covering,
        p_init: p,
        target: None,
    }
}

pub fn waypoint(p: [f64; 3], radius: f64) -> Waypoint {
    Waypoint {
        position: Vector3::from(p),
        radius,
        uncovered: true,
        weight: 1.0,
    }
}

/// Open 40 m box fence and no obstacles.
pub fn snapshot(horizon: usize, agents: Vec<UasAgent>, waypoints: Vec<Waypoint>) -> ScenarioSnapshot {
    ScenarioSnapshot {
        horizon,
        dt: 1.0,
        agents,
        waypoints,
        fence: GeoFence {
            region: cube([-20.0, -20.0, -20.0], [20.0, 20.0, 20.0]),
            delta: 0.0,
        },
        obstacles: Vec::new(),
        weights: WeightSet::default(),
        degrees: ApproxDegrees::default(),
        uas_safety: 0.2,
        big_m: 1e4,
    }
}
