//! Kinematic bicycle model with constant speed.
//!
//! The state is the planar pose `(x, y, theta)`; the only input is the
//! steering angle. One step of the model is the explicit Euler map
//!
//! ```text
//! x'     = x + v cos(theta) dt
//! y'     = y + v sin(theta) dt
//! theta' = theta + (v / l_f) sin(delta) dt
//! ```
//!
//! Headings are never wrapped here; consumers only use them through
//! `sin`/`cos` or as wrapped differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn position(&self) -> Observation {
        observe(self)
    }
}

/// Planar position, the observable part of a [`VehicleState`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
}

impl Observation {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Observation) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_squared(&self, other: &Observation) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Constant longitudinal speed, m/s.
    pub v: f64,
    /// Distance from the front axle to the center of gravity, m.
    pub l_f: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Steering bound, rad.
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            v: 3.0,
            l_f: 0.15875,
            dt: 0.05,
            delta_max: 0.4189,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v.is_finite()
            && self.v > 0.0
            && self.l_f.is_finite()
            && self.l_f > 0.0
            && self.dt.is_finite()
            && self.dt > 0.0
            && self.delta_max > 0.0
            && self.delta_max < std::f64::consts::FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("vehicle parameters out of range: {self:?}")))
        }
    }

    /// Distance travelled per step; also the waypoint spacing of every generated reference.
    pub fn spacing(&self) -> f64 {
        self.v * self.dt
    }

    /// Heading change per step per unit `sin(delta)`.
    pub fn yaw_gain(&self) -> f64 {
        self.v / self.l_f * self.dt
    }

    /// Largest path curvature the vehicle can hold at full steering lock, 1/m.
    pub fn max_curvature(&self) -> f64 {
        self.delta_max.sin() / self.l_f
    }

    pub fn clamp_steering(&self, delta: f64) -> f64 {
        delta.clamp(-self.delta_max, self.delta_max)
    }
}

/// One explicit Euler step of the bicycle model.
///
/// Rejects non-finite inputs and steering outside `[-delta_max, delta_max]`;
/// callers clamp first.
pub fn step_dynamics(state: &VehicleState, delta: f64, params: &VehicleParams) -> Result<VehicleState> {
    if !state.is_finite() || !delta.is_finite() {
        return Err(Error::invalid("non-finite state or steering"));
    }
    if delta.abs() > params.delta_max {
        return Err(Error::invalid(format!(
            "steering {delta} outside [-{m}, {m}]",
            m = params.delta_max
        )));
    }
    Ok(step_unchecked(state, delta, params))
}

/// [`step_dynamics`] without argument checks, for inner loops.
#[inline]
pub fn step_unchecked(state: &VehicleState, delta: f64, params: &VehicleParams) -> VehicleState {
    let (s, c) = state.theta.sin_cos();
    VehicleState {
        x: state.x + params.v * c * params.dt,
        y: state.y + params.v * s * params.dt,
        theta: state.theta + params.v / params.l_f * delta.sin() * params.dt,
    }
}

pub fn observe(state: &VehicleState) -> Observation {
    Observation {
        x: state.x,
        y: state.y,
    }
}

/// Expresses a world-frame point in the frame attached to `robot`.
#[inline]
pub fn world_to_robot(robot: &VehicleState, point: &Observation) -> Observation {
    let (s, c) = robot.theta.sin_cos();
    let dx = point.x - robot.x;
    let dy = point.y - robot.y;
    Observation {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
    }
}

/// Inverse of [`world_to_robot`].
#[inline]
pub fn robot_to_world(robot: &VehicleState, point: &Observation) -> Observation {
    let (s, c) = robot.theta.sin_cos();
    Observation {
        x: robot.x + c * point.x - s * point.y,
        y: robot.y + s * point.x + c * point.y,
    }
}
