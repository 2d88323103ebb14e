//! Multi-agent coverage planning with MILP-based model predictive control
//! for battery-constrained multicopters.

pub mod export;
pub mod geometry;
pub mod vehicle;
pub mod milp;
pub mod mission;
pub mod ocp;
pub mod scenario;
pub mod sim;
