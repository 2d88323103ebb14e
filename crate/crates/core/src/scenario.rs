//! Scenario files: a strict TOML document describing vehicles, geo fence,
//! obstacles, waypoints, weights and mission thresholds.
//!
//! Coordinates are SI and north-east-down, so altitude is negative `z`.
//! Parameter files are JSON and resolved relative to the scenario file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{convex_hull, ConvexRegion, GeometryError, Point3};
use crate::milp::DEFAULT_BIG_M;
use crate::mission::{MissionConfig, SelectionWeights};
use crate::ocp::{
    ApproxDegrees, GeoFence, Obstacle, OpMode, ScenarioSnapshot, UasAgent, Waypoint, WeightSet,
};
use crate::vehicle::{VehicleError, VehicleParams, VehicleState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("vehicle {index}: {source}")]
    Params {
        index: usize,
        #[source]
        source: VehicleError,
    },
    #[error("scenario has {} problem(s): {}", .0.len(), .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub horizon: usize,
    pub dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleEntry {
    /// Parameter file, relative to the scenario.
    pub params: PathBuf,
    pub position: [f64; 3],
    #[serde(default)]
    pub dod: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FenceSection {
    pub vertices: Vec<[f64; 3]>,
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityKey {
    /// First step at which the velocity applies.
    pub step: usize,
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub vertices: Vec<[f64; 3]>,
    #[serde(default)]
    pub delta_safe: f64,
    /// Present for moving obstacles; velocity is zero before the first key.
    #[serde(default)]
    pub schedule: Option<Vec<VelocityKey>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointEntry {
    pub position: [f64; 3],
    pub radius: f64,
    #[serde(default)]
    pub weight: Option<f64>,
    #[serde(default)]
    pub covered: bool,
}

/// Regular grid of waypoints: `origin + (a·spacing[0], b·spacing[1], 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointGrid {
    pub origin: [f64; 3],
    pub spacing: [f64; 2],
    pub count: [usize; 2],
    pub radius: f64,
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    /// Overrides `DoD_max` of every vehicle.
    pub dod_max: Option<f64>,
    /// `D_r,max` (m).
    pub return_distance: Option<f64>,
    pub return_dod: Option<f64>,
    /// `δ_l` (m).
    pub landing_radius: Option<f64>,
    pub velocity_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub timing: TimingSection,
    pub vehicles: Vec<VehicleEntry>,
    pub geo_fence: FenceSection,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
    #[serde(default)]
    pub waypoints: Vec<WaypointEntry>,
    #[serde(default)]
    pub waypoint_grids: Vec<WaypointGrid>,
    #[serde(default)]
    pub weights: WeightSet,
    #[serde(default)]
    pub approximation: ApproxDegrees,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub selection: SelectionWeights,
    #[serde(default = "default_uas_safety")]
    pub uas_safety: f64,
    #[serde(default = "default_big_m")]
    pub big_m: f64,
}

fn default_uas_safety() -> f64 {
    0.2
}

fn default_big_m() -> f64 {
    DEFAULT_BIG_M
}

#[derive(Debug, Clone)]
pub struct ScheduledObstacle {
    pub name: String,
    pub region: ConvexRegion,
    pub delta_safe: f64,
    pub schedule: Option<Vec<VelocityKey>>,
}

impl ScheduledObstacle {
    pub fn is_fixed(&self) -> bool {
        self.schedule.is_none()
    }

    /// Scripted velocity at `step`; `None` for fixed obstacles.
    pub fn velocity_at(&self, step: usize) -> Option<Vector3<f64>> {
        let keys = self.schedule.as_ref()?;
        let v = keys
            .iter()
            .filter(|k| k.step <= step)
            .max_by_key(|k| k.step)
            .map_or([0.0; 3], |k| k.velocity);
        Some(Vector3::from(v))
    }
}

/// Resolved, ready-to-simulate scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    pub dt: f64,
    pub max_steps: usize,
    pub agents: Vec<UasAgent>,
    pub waypoints: Vec<Waypoint>,
    pub fence: GeoFence,
    pub obstacles: Vec<ScheduledObstacle>,
    pub weights: WeightSet,
    pub degrees: ApproxDegrees,
    pub uas_safety: f64,
    pub big_m: f64,
    pub mission: MissionConfig,
}

fn points(v: &[[f64; 3]]) -> Vec<Point3> {
    v.iter().map(|p| Vector3::from(*p)).collect()
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Load parameter files and construct hulls. Geometry problems are
    /// collected and reported together.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let mut problems = Vec::new();
        let mut cache: BTreeMap<PathBuf, Arc<VehicleParams>> = BTreeMap::new();
        let mut agents = Vec::with_capacity(self.vehicles.len());
        for (index, v) in self.vehicles.iter().enumerate() {
            let path = base_dir.join(&v.params);
            let params = match cache.get(&path) {
                Some(p) => p.clone(),
                None => {
                    let mut p =
                        VehicleParams::load(&path).map_err(|source| ScenarioError::Params { index, source })?;
                    if let Some(d) = self.thresholds.dod_max {
                        p.dod_max = d;
                    }
                    let p = Arc::new(p);
                    cache.insert(path.clone(), p.clone());
                    p
                }
            };
            let p = Vector3::from(v.position);
            let mut state = VehicleState::at_rest(p, v.dod);
            state.attitude.z = v.yaw;
            agents.push(UasAgent {
                id: index,
                params,
                state,
                mode: OpMode::Covering,
                p_init: p,
                target: None,
            });
        }

        let fence = match convex_hull(&points(&self.geo_fence.vertices)) {
            Ok(region) => Some(region),
            Err(e) => {
                problems.push(format!("geo fence: {e}"));
                None
            }
        };
        let mut obstacles = Vec::new();
        for (o, entry) in self.obstacles.iter().enumerate() {
            let name = entry.name.clone().unwrap_or_else(|| format!("obstacle {o}"));
            match convex_hull(&points(&entry.vertices)) {
                Ok(region) => obstacles.push(ScheduledObstacle {
                    name,
                    region,
                    delta_safe: entry.delta_safe,
                    schedule: entry.schedule.clone(),
                }),
                Err(e) => problems.push(format!("{name}: {}", describe_hull_error(&e))),
            }
        }

        let default_weight = self.weights.coverage;
        let mut waypoints: Vec<Waypoint> = self
            .waypoints
            .iter()
            .map(|w| Waypoint {
                position: Vector3::from(w.position),
                radius: w.radius,
                uncovered: !w.covered,
                weight: w.weight.unwrap_or(default_weight),
            })
            .collect();
        for g in &self.waypoint_grids {
            for a in 0..g.count[0] {
                for b in 0..g.count[1] {
                    waypoints.push(Waypoint {
                        position: Vector3::new(
                            g.origin[0] + a as f64 * g.spacing[0],
                            g.origin[1] + b as f64 * g.spacing[1],
                            g.origin[2],
                        ),
                        radius: g.radius,
                        uncovered: true,
                        weight: g.weight.unwrap_or(default_weight),
                    });
                }
            }
        }

        let Some(fence) = fence else {
            return Err(ScenarioError::Invalid(problems));
        };
        if !problems.is_empty() {
            return Err(ScenarioError::Invalid(problems));
        }
        let defaults = MissionConfig::default();
        let t = &self.thresholds;
        Ok(Scenario {
            name: self.name.clone(),
            horizon: self.timing.horizon,
            dt: self.timing.dt,
            max_steps: self.timing.max_steps,
            agents,
            waypoints,
            fence: GeoFence {
                region: fence,
                delta: self.geo_fence.delta,
            },
            obstacles,
            weights: self.weights.clone(),
            degrees: self.approximation,
            uas_safety: self.uas_safety,
            big_m: self.big_m,
            mission: MissionConfig {
                return_distance: t.return_distance.unwrap_or(defaults.return_distance),
                return_dod: t.return_dod,
                landing_radius: t.landing_radius.unwrap_or(defaults.landing_radius),
                velocity_eps: t.velocity_eps.unwrap_or(defaults.velocity_eps),
                selection: self.selection,
                target_weight: self.weights.target_distance,
            },
        })
    }
}

fn describe_hull_error(e: &GeometryError) -> String {
    match e {
        GeometryError::Degenerate(_) | GeometryError::TooFewPoints(_) => format!("degenerate hull ({e})"),
        _ => e.to_string(),
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let file = ScenarioFile::read(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        file.resolve(base)
    }

    /// Every rule violation found; empty when the scenario is clean.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.horizon < 2 {
            out.push(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_steps == 0 {
            out.push("max_steps must be at least 1".into());
        }
        if self.agents.is_empty() {
            out.push("no vehicles".into());
        }
        if let Err(e) = self.weights.validate() {
            out.push(e);
        }
        if let Err(e) = self.mission.validate() {
            out.push(e.to_string());
        }
        for (name, h) in [
            ("physical", self.degrees.physical),
            ("obstacle", self.degrees.obstacle),
            ("waypoint", self.degrees.waypoint),
        ] {
            if h < 4 || h % 2 != 0 {
                out.push(format!("{name} approximation degree must be even and >= 4, got {h}"));
            }
        }
        if !(self.uas_safety.is_finite() && self.uas_safety >= 0.0) {
            out.push(format!("uas_safety must be nonnegative, got {}", self.uas_safety));
        }
        if !(self.big_m.is_finite() && self.big_m > 0.0) {
            out.push(format!("big_m must be positive, got {}", self.big_m));
        }
        for o in &self.obstacles {
            if o.delta_safe < 0.0 {
                out.push(format!("{}: delta_safe must be nonnegative", o.name));
            }
            if let Some(keys) = &o.schedule {
                if keys.windows(2).any(|w| w[1].step <= w[0].step) {
                    out.push(format!("{}: schedule steps must increase", o.name));
                }
            }
        }
        for (w, wp) in self.waypoints.iter().enumerate() {
            if !(wp.radius.is_finite() && wp.radius > 0.0) {
                out.push(format!("waypoint {w}: radius must be positive, got {}", wp.radius));
            }
            if !(wp.weight.is_finite() && wp.weight >= 0.0) {
                out.push(format!("waypoint {w}: weight must be nonnegative, got {}", wp.weight));
            }
            if self.fence.region.max_distance(&wp.position) > self.fence.delta {
                out.push(format!("waypoint {w} lies outside the geo fence"));
            }
            for o in self.obstacles.iter().filter(|o| o.is_fixed()) {
                if o.region.contains(&wp.position) {
                    out.push(format!("waypoint {w} lies inside {}", o.name));
                }
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            let p = &a.params;
            if let Err(e) = p.validate() {
                out.push(format!("vehicle {i}: {e}"));
            }
            if p.dod_max >= p.dod_cutoff {
                out.push(format!(
                    "vehicle {i}: DoD_max {} must be below DoD_cutoff {}",
                    p.dod_max, p.dod_cutoff
                ));
            }
            if !(0.0..p.dod_max).contains(&a.state.dod) {
                out.push(format!("vehicle {i}: initial DoD {} outside [0, DoD_max)", a.state.dod));
            }
            if (p.dt - self.dt).abs() > 1e-9 {
                out.push(format!("vehicle {i}: model sampled at {} s but dt is {} s", p.dt, self.dt));
            }
            if let Err(e) = self.mission.thresholds_for(a) {
                out.push(e.to_string());
            }
            let excess = self.fence.region.max_distance(&a.state.p) - self.fence.delta;
            if excess > 0.0 {
                out.push(format!("vehicle {i}: initial position outside the geo fence by {excess:.3} m"));
            }
            for o in &self.obstacles {
                if o.region.max_distance(&a.state.p) < p.radius + o.delta_safe {
                    out.push(format!("vehicle {i}: initial position within the clearance of {}", o.name));
                }
            }
            for (j, b) in self.agents.iter().enumerate().skip(i + 1) {
                let sep = p.radius + b.params.radius + self.uas_safety;
                if (a.state.p - b.state.p).norm() < sep {
                    out.push(format!("vehicles {i} and {j} start closer than {sep:.3} m"));
                }
            }
        }
        out
    }

    /// OCP input for the current world state at `step`.
    pub fn snapshot(&self, agents: &[UasAgent], waypoints: &[Waypoint], obstacles: &[Obstacle]) -> ScenarioSnapshot {
        ScenarioSnapshot {
            horizon: self.horizon,
            dt: self.dt,
            agents: agents.to_vec(),
            waypoints: waypoints.to_vec(),
            fence: self.fence.clone(),
            obstacles: obstacles.to_vec(),
            weights: self.weights.clone(),
            degrees: self.degrees,
            uas_safety: self.uas_safety,
            big_m: self.big_m,
        }
    }
}
