//! Discrete-time LPV multicopter model with battery energy states.
//!
//! `x(k+1) = A_d x(k) + B_d u(k) + E_d` where the matrices are selected by
//! the depth-of-discharge segment of the current state. Battery outputs
//! `(SoC, u_b, i_b)` come from a per-segment linear output map
//! `y = C x + D u + F`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 14;
pub const INPUT_DIM: usize = 5;
pub const OUTPUT_DIM: usize = 3;

pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;
pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type OutputStateMatrix = SMatrix<f64, OUTPUT_DIM, STATE_DIM>;
pub type OutputInputMatrix = SMatrix<f64, OUTPUT_DIM, INPUT_DIM>;

/// State vector component indices.
pub mod sx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
    pub const VX: usize = 3;
    pub const VY: usize = 4;
    pub const VZ: usize = 5;
    pub const PHI: usize = 6;
    pub const THETA: usize = 7;
    pub const PSI: usize = 8;
    pub const WX: usize = 9;
    pub const WY: usize = 10;
    pub const WZ: usize = 11;
    pub const DOD: usize = 12;
    pub const UTH: usize = 13;

    pub const NAMES: [&str; super::STATE_DIM] = [
        "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "wx", "wy", "wz", "dod", "u_th",
    ];
}

/// Input vector component indices.
pub mod su {
    pub const LIFT: usize = 0;
    pub const TAU_X: usize = 1;
    pub const TAU_Y: usize = 2;
    pub const TAU_Z: usize = 3;
    pub const DELTA_T: usize = 4;

    pub const NAMES: [&str; super::INPUT_DIM] = ["lift", "tau_x", "tau_y", "tau_z", "delta_t"];
}

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("depth of discharge {0} outside [0, 1]")]
    DodOutOfRange(f64),
    #[error("input {component} = {value} outside [{lo}, {hi}]")]
    InputLimit {
        component: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("return threshold configuration error: {0}")]
    ReturnThreshold(String),
    #[error("cannot read parameter file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse parameter file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Full 14-dimensional vehicle state in the north-east-down inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Euler angles `(φ, θ, ψ)`.
    pub attitude: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub dod: f64,
    pub u_th: f64,
}

impl VehicleState {
    pub fn at_rest(p: Vector3<f64>, dod: f64) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            attitude: Vector3::zeros(),
            omega: Vector3::zeros(),
            dod,
            u_th: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(sx::X).copy_from(&self.p);
        x.fixed_rows_mut::<3>(sx::VX).copy_from(&self.v);
        x.fixed_rows_mut::<3>(sx::PHI).copy_from(&self.attitude);
        x.fixed_rows_mut::<3>(sx::WX).copy_from(&self.omega);
        x[sx::DOD] = self.dod;
        x[sx::UTH] = self.u_th;
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            p: x.fixed_rows::<3>(sx::X).into_owned(),
            v: x.fixed_rows::<3>(sx::VX).into_owned(),
            attitude: x.fixed_rows::<3>(sx::PHI).into_owned(),
            omega: x.fixed_rows::<3>(sx::WX).into_owned(),
            dod: x[sx::DOD],
            u_th: x[sx::UTH],
        }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::from_vector(&StateVector::from_column_slice(x))
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Control input `(L, τx, τy, τz, ΔT)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleInput {
    pub lift: f64,
    pub tau: Vector3<f64>,
    pub delta_t: f64,
}

impl VehicleInput {
    pub fn hover() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.lift, self.tau.x, self.tau.y, self.tau.z, self.delta_t)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self {
            lift: u[su::LIFT],
            tau: Vector3::new(u[su::TAU_X], u[su::TAU_Y], u[su::TAU_Z]),
            delta_t: u[su::DELTA_T],
        }
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self::from_vector(&InputVector::from_column_slice(u))
    }
}

/// One DoD segment of the LPV model: dynamics plus battery output map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpvSegment {
    /// Half-open `[lo, hi)`; the last segment also contains `hi = 1`.
    pub dod_range: [f64; 2],
    #[serde(with = "row_major")]
    pub a: StateMatrix,
    #[serde(with = "row_major")]
    pub b: InputMatrix,
    #[serde(with = "row_major")]
    pub e: SMatrix<f64, STATE_DIM, 1>,
    #[serde(with = "row_major")]
    pub c: OutputStateMatrix,
    #[serde(with = "row_major")]
    pub d: OutputInputMatrix,
    #[serde(with = "row_major")]
    pub f: SMatrix<f64, OUTPUT_DIM, 1>,
}

impl LpvSegment {
    pub fn contains(&self, dod: f64, last: bool) -> bool {
        dod >= self.dod_range[0] && (dod < self.dod_range[1] || (last && dod <= self.dod_range[1]))
    }

    pub fn predict(&self, x: &StateVector, u: &InputVector) -> StateVector {
        self.a * x + self.b * u + self.e
    }
}

/// Linear surrogate of the corrected thrust:
/// `ΔT = lift_gain·L + speed_gain·‖v_h‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrustCorrection {
    pub lift_gain: f64,
    pub speed_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub name: String,
    pub mass: f64,
    pub gravity: f64,
    pub motor_count: usize,
    /// Vehicle radius `δ_UAV`.
    pub radius: f64,
    /// Nominal hover power `p_DC,nom` in W.
    pub p_dc_nom: f64,
    pub v_cruise: f64,
    /// Battery charge capacity `Q_b` in C.
    pub charge_capacity: f64,
    pub u_b_nom: f64,
    pub dod_max: f64,
    pub dod_cutoff: f64,
    /// Sampling time the matrices were discretized with.
    pub dt: f64,
    /// Discretization order of the series expansion (metadata).
    pub n_dis: usize,
    pub state_lower: [f64; STATE_DIM],
    pub state_upper: [f64; STATE_DIM],
    pub input_lower: [f64; INPUT_DIM],
    pub input_upper: [f64; INPUT_DIM],
    /// Limit on the horizontal speed norm.
    pub speed_max: f64,
    /// Limit on the tilt norm `‖(φ, θ)‖`.
    pub tilt_max: f64,
    pub thrust_correction: ThrustCorrection,
    pub segments: Vec<LpvSegment>,
}

/// `(SoC, u_b, i_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryTelemetry {
    pub soc: f64,
    pub u_b: f64,
    pub i_b: f64,
}

const INPUT_TOL: f64 = 1e-6;

impl VehicleParams {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VehicleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VehicleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let params: Self = serde_json::from_str(&text).map_err(|source| VehicleError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vehicle params serialize")
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let bad = |m: String| Err(VehicleError::InvalidParams(m));
        let positives = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("radius", self.radius),
            ("p_dc_nom", self.p_dc_nom),
            ("v_cruise", self.v_cruise),
            ("charge_capacity", self.charge_capacity),
            ("u_b_nom", self.u_b_nom),
            ("dt", self.dt),
            ("speed_max", self.speed_max),
            ("tilt_max", self.tilt_max),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.motor_count < 4 || self.motor_count % 2 != 0 {
            return bad(format!("motor_count must be even and >= 4, got {}", self.motor_count));
        }
        if !(self.dod_max > 0.0 && self.dod_max < self.dod_cutoff && self.dod_cutoff <= 1.0) {
            return bad(format!(
                "need 0 < dod_max < dod_cutoff <= 1, got dod_max = {}, dod_cutoff = {}",
                self.dod_max, self.dod_cutoff
            ));
        }
        for k in 0..STATE_DIM {
            if !(self.state_lower[k] < self.state_upper[k]) {
                return bad(format!("state limit {} has lower >= upper", sx::NAMES[k]));
            }
        }
        for k in 0..INPUT_DIM {
            if !(self.input_lower[k] < self.input_upper[k]) {
                return bad(format!("input limit {} has lower >= upper", su::NAMES[k]));
            }
        }
        if self.segments.is_empty() {
            return bad("no LPV segments".into());
        }
        let mut expected = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let [lo, hi] = seg.dod_range;
            if (lo - expected).abs() > 1e-12 || !(hi > lo) {
                return bad(format!("segment {k} range [{lo}, {hi}) leaves a gap or overlap"));
            }
            let finite = seg.a.iter().chain(seg.b.iter()).chain(seg.e.iter()).all(|v| v.is_finite())
                && seg.c.iter().chain(seg.d.iter()).chain(seg.f.iter()).all(|v| v.is_finite());
            if !finite {
                return bad(format!("segment {k} has non-finite entries"));
            }
            expected = hi;
        }
        if (expected - 1.0).abs() > 1e-12 {
            return bad(format!("segments end at {expected}, expected 1"));
        }
        Ok(())
    }

    pub fn segment_index(&self, dod: f64) -> Result<usize, VehicleError> {
        if !(0.0..=1.0).contains(&dod) {
            return Err(VehicleError::DodOutOfRange(dod));
        }
        let last = self.segments.len() - 1;
        self.segments
            .iter()
            .enumerate()
            .position(|(k, s)| s.contains(dod, k == last))
            .ok_or(VehicleError::DodOutOfRange(dod))
    }

    /// Segment whose half-open DoD interval contains `dod`.
    pub fn segment_for(&self, dod: f64) -> Result<&LpvSegment, VehicleError> {
        Ok(&self.segments[self.segment_index(dod)?])
    }

    pub fn input_limit(&self, k: usize) -> f64 {
        self.input_lower[k].abs().max(self.input_upper[k].abs())
    }

    pub fn state_limit(&self, k: usize) -> f64 {
        self.state_lower[k].abs().max(self.state_upper[k].abs())
    }

    fn checked_input(&self, u: &VehicleInput) -> Result<InputVector, VehicleError> {
        let mut v = u.to_vector();
        for k in 0..INPUT_DIM {
            let (lo, hi) = (self.input_lower[k], self.input_upper[k]);
            let slack = INPUT_TOL * hi.abs().max(lo.abs()).max(1.0);
            if !v[k].is_finite() || v[k] < lo - slack || v[k] > hi + slack {
                return Err(VehicleError::InputLimit {
                    component: su::NAMES[k],
                    value: v[k],
                    lo,
                    hi,
                });
            }
            v[k] = v[k].clamp(lo, hi);
        }
        Ok(v)
    }

    /// One step of the LPV model.
    pub fn step(&self, x: &VehicleState, u: &VehicleInput) -> Result<VehicleState, VehicleError> {
        let u = self.checked_input(u)?;
        let seg = self.segment_for(x.dod.clamp(0.0, 1.0))?;
        let mut next = seg.predict(&x.to_vector(), &u);
        let dod = next[sx::DOD];
        if !(0.0..=1.0).contains(&dod) {
            log::warn!("{}: depth of discharge {dod:.6} clamped to [0, 1]", self.name);
            next[sx::DOD] = dod.clamp(0.0, 1.0);
        }
        Ok(VehicleState::from_vector(&next))
    }

    pub fn battery_telemetry(&self, x: &VehicleState, u: &VehicleInput) -> BatteryTelemetry {
        let seg = &self.segments[self.segment_index(x.dod.clamp(0.0, 1.0)).unwrap_or(0)];
        let y = seg.c * x.to_vector() + seg.d * u.to_vector() + seg.f;
        BatteryTelemetry {
            soc: 1.0 - x.dod,
            u_b: y[1],
            i_b: y[2],
        }
    }

    pub fn return_threshold(&self, d_r_max: f64) -> Result<f64, VehicleError> {
        return_threshold(
            self.dod_max,
            self.p_dc_nom,
            d_r_max,
            self.v_cruise,
            self.charge_capacity,
            self.u_b_nom,
        )
    }
}

/// `DoD_r = DoD_max - p_DC,nom·D_r,max / (v_cruise·Q_b·u_b,nom)`.
pub fn return_threshold(
    dod_max: f64,
    p_dc_nom: f64,
    d_r_max: f64,
    v_cruise: f64,
    charge_capacity: f64,
    u_b_nom: f64,
) -> Result<f64, VehicleError> {
    for (name, v) in [
        ("dod_max", dod_max),
        ("p_dc_nom", p_dc_nom),
        ("v_cruise", v_cruise),
        ("charge_capacity", charge_capacity),
        ("u_b_nom", u_b_nom),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(VehicleError::ReturnThreshold(format!("{name} must be positive, got {v}")));
        }
    }
    if !(d_r_max.is_finite() && d_r_max >= 0.0) {
        return Err(VehicleError::ReturnThreshold(format!(
            "remaining distance must be non-negative, got {d_r_max}"
        )));
    }
    let dod_r = dod_max - p_dc_nom * d_r_max / (v_cruise * charge_capacity * u_b_nom);
    if dod_r <= 0.0 {
        return Err(VehicleError::ReturnThreshold(format!(
            "remaining distance {d_r_max} m drives the threshold to {dod_r}"
        )));
    }
    Ok(dod_r)
}

/// Knobs of the shipped synthetic quadcopter parameterization.
///
/// Continuous-time model (NED, small angles about hover):
/// `ṗ = v`, `v̇x = -g θ - k_d vx`, `v̇y = g φ - k_d vy`, `v̇z = -L/m - k_d vz`,
/// `Ψ̇ = ω`, `ω̇ = -k_ω ω + τ/J`, `DoḊ = i/Q_b`, `u̇_th = -u_th/(R1 C1) + i/C1`
/// with battery current `i = i_hover(seg) + k_i·ΔT`. The matrices are
/// discretized with a truncated series of order `n_dis`; segments differ in
/// their open-circuit voltage and therefore in hover current.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuad {
    pub name: String,
    pub mass: f64,
    pub gravity: f64,
    pub drag: f64,
    pub inertia: f64,
    pub rate_damping: f64,
    pub radius: f64,
    pub p_dc_nom: f64,
    pub v_cruise: f64,
    pub charge_capacity: f64,
    pub u_b_nom: f64,
    /// Open-circuit voltage at the DoD breakpoints.
    pub ocv_breakpoints: Vec<(f64, f64)>,
    pub r0: f64,
    pub r1: f64,
    pub tau_th: f64,
    /// Extra current per newton of corrected thrust deviation, as a multiple
    /// of `i_hover / (m g)`.
    pub current_thrust_ratio: f64,
    pub dod_max: f64,
    pub dod_cutoff: f64,
    pub dt: f64,
    pub n_dis: usize,
    pub speed_max: f64,
    pub climb_max: f64,
    pub tilt_max: f64,
    pub rate_max: f64,
    pub lift_max_ratio: f64,
    pub torque_max: f64,
    pub yaw_torque_max: f64,
    pub speed_gain: f64,
    pub position_limit: f64,
}

impl Default for SyntheticQuad {
    /// Desk-scale quadcopter.
    fn default() -> Self {
        Self {
            name: "synthetic-quad".into(),
            mass: 1.5,
            gravity: 9.81,
            drag: 0.1,
            inertia: 0.03,
            rate_damping: 0.5,
            radius: 0.25,
            p_dc_nom: 150.0,
            v_cruise: 1.0,
            charge_capacity: 3600.0,
            u_b_nom: 14.8,
            ocv_breakpoints: vec![(0.0, 16.8), (0.3, 15.3), (0.7, 14.4), (1.0, 12.0)],
            r0: 0.02,
            r1: 0.01,
            tau_th: 20.0,
            current_thrust_ratio: 1.5,
            dod_max: 0.75,
            dod_cutoff: 0.9,
            dt: 1.0,
            n_dis: 4,
            speed_max: 1.5,
            climb_max: 0.5,
            tilt_max: 0.3,
            rate_max: 0.5,
            lift_max_ratio: 0.3,
            torque_max: 0.05,
            yaw_torque_max: 0.02,
            speed_gain: 0.4,
            position_limit: 1000.0,
        }
    }
}

impl SyntheticQuad {
    /// Field-scale variant: faster, larger cruise speed.
    pub fn field() -> Self {
        Self {
            name: "synthetic-quad-field".into(),
            v_cruise: 5.0,
            speed_max: 5.0,
            climb_max: 1.0,
            tilt_max: 0.35,
            rate_max: 0.6,
            torque_max: 0.06,
            charge_capacity: 18000.0,
            position_limit: 5000.0,
            ..Self::default()
        }
    }

    pub fn hover_current(&self, ocv: f64) -> f64 {
        self.p_dc_nom / ocv
    }

    pub fn build(&self) -> VehicleParams {
        let m = self.mass;
        let g = self.gravity;
        let nominal_current = self.p_dc_nom / self.u_b_nom;
        let k_i = self.current_thrust_ratio * nominal_current / (m * g);
        let c1 = self.tau_th / self.r1;

        let mut a = StateMatrix::zeros();
        let mut b = InputMatrix::zeros();
        for k in 0..3 {
            a[(sx::X + k, sx::VX + k)] = 1.0;
            a[(sx::VX + k, sx::VX + k)] = -self.drag;
            a[(sx::PHI + k, sx::WX + k)] = 1.0;
            a[(sx::WX + k, sx::WX + k)] = -self.rate_damping;
            b[(sx::WX + k, su::TAU_X + k)] = 1.0 / self.inertia;
        }
        a[(sx::VX, sx::THETA)] = -g;
        a[(sx::VY, sx::PHI)] = g;
        b[(sx::VZ, su::LIFT)] = -1.0 / m;
        a[(sx::UTH, sx::UTH)] = -1.0 / self.tau_th;
        b[(sx::DOD, su::DELTA_T)] = k_i / self.charge_capacity;
        b[(sx::UTH, su::DELTA_T)] = k_i / c1;

        let (ad, gamma) = series_discretize(&a, self.dt, self.n_dis);
        let bd = gamma * b;

        let mut segments = Vec::new();
        for w in self.ocv_breakpoints.windows(2) {
            let ((d0, u0), (d1, u1)) = (w[0], w[1]);
            let slope = (u0 - u1) / (d1 - d0);
            let i_hover = self.hover_current(0.5 * (u0 + u1));
            let mut e_c = StateVector::zeros();
            e_c[sx::DOD] = i_hover / self.charge_capacity;
            e_c[sx::UTH] = i_hover / c1;
            let ed = gamma * e_c;

            // y = (SoC, u_b, i_b)
            let mut c = OutputStateMatrix::zeros();
            let mut d = OutputInputMatrix::zeros();
            let mut f = SMatrix::<f64, OUTPUT_DIM, 1>::zeros();
            c[(0, sx::DOD)] = -1.0;
            f[0] = 1.0;
            // u_b = ocv(DoD) - u_th - R0 i_b
            c[(1, sx::DOD)] = -slope;
            c[(1, sx::UTH)] = -1.0;
            d[(1, su::DELTA_T)] = -self.r0 * k_i;
            f[1] = u0 + slope * d0 - self.r0 * i_hover;
            d[(2, su::DELTA_T)] = k_i;
            f[2] = i_hover;

            segments.push(LpvSegment {
                dod_range: [d0, d1],
                a: ad,
                b: bd,
                e: ed,
                c,
                d,
                f,
            });
        }

        let lift_max = self.lift_max_ratio * m * g;
        let speed_dt_max = self.speed_gain * self.speed_max;
        let pl = self.position_limit;
        let mut state_lower = [0.0; STATE_DIM];
        let mut state_upper = [0.0; STATE_DIM];
        let sym = [
            pl,
            pl,
            pl,
            self.speed_max,
            self.speed_max,
            self.climb_max,
            self.tilt_max,
            self.tilt_max,
            PI,
            self.rate_max,
            self.rate_max,
            self.rate_max,
        ];
        for k in 0..12 {
            state_lower[k] = -sym[k];
            state_upper[k] = sym[k];
        }
        state_lower[sx::DOD] = 0.0;
        state_upper[sx::DOD] = self.dod_cutoff;
        state_lower[sx::UTH] = -2.0;
        state_upper[sx::UTH] = 2.0;
        let input_lower = [
            -lift_max,
            -self.torque_max,
            -self.torque_max,
            -self.yaw_torque_max,
            -lift_max,
        ];
        let input_upper = [
            lift_max,
            self.torque_max,
            self.torque_max,
            self.yaw_torque_max,
            lift_max + speed_dt_max,
        ];

        VehicleParams {
            name: self.name.clone(),
            mass: m,
            gravity: g,
            motor_count: 4,
            radius: self.radius,
            p_dc_nom: self.p_dc_nom,
            v_cruise: self.v_cruise,
            charge_capacity: self.charge_capacity,
            u_b_nom: self.u_b_nom,
            dod_max: self.dod_max,
            dod_cutoff: self.dod_cutoff,
            dt: self.dt,
            n_dis: self.n_dis,
            state_lower,
            state_upper,
            input_lower,
            input_upper,
            speed_max: self.speed_max,
            tilt_max: self.tilt_max,
            thrust_correction: ThrustCorrection {
                lift_gain: 1.0,
                speed_gain: self.speed_gain,
            },
            segments,
        }
    }
}

/// Truncated series `A_d = Σ_{i≤n} (A dt)^i / i!` and
/// `Γ = Σ_{i<n} A^i dt^{i+1} / (i+1)!`, so that `B_d = Γ B`.
pub fn series_discretize(a: &StateMatrix, dt: f64, order: usize) -> (StateMatrix, StateMatrix) {
    let mut ad = StateMatrix::identity();
    let mut gamma = StateMatrix::zeros();
    let mut power = StateMatrix::identity();
    let mut fact = 1.0;
    for i in 0..order {
        // power = A^i, fact = (i+1)!
        fact *= (i + 1) as f64;
        gamma += power * (dt.powi(i as i32 + 1) / fact);
        power *= a;
        ad += power * (dt.powi(i as i32 + 1) / fact);
    }
    (ad, gamma)
}

mod row_major {
    use nalgebra::SMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const R: usize, const C: usize>(
        m: &SMatrix<f64, R, C>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        if C == 1 {
            s.collect_seq(m.iter())
        } else {
            let rows: Vec<Vec<f64>> = (0..R).map(|r| m.row(r).iter().copied().collect()).collect();
            s.collect_seq(rows)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const R: usize, const C: usize>(
        d: D,
    ) -> Result<SMatrix<f64, R, C>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Dense {
            Flat(Vec<f64>),
            Rows(Vec<Vec<f64>>),
        }
        let flat = match Dense::deserialize(d)? {
            Dense::Flat(v) => v,
            Dense::Rows(rows) => {
                if rows.len() != R || rows.iter().any(|r| r.len() != C) {
                    return Err(D::Error::custom(format!("expected a {R}x{C} matrix")));
                }
                rows.into_iter().flatten().collect()
            }
        };
        if flat.len() != R * C {
            return Err(D::Error::custom(format!(
                "expected {} entries for a {R}x{C} matrix, got {}",
                R * C,
                flat.len()
            )));
        }
        Ok(SMatrix::from_row_slice(&flat))
    }
}
