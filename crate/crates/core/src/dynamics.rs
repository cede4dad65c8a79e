//! Ego vehicle dynamics: the default teleport model and the kinematic
//! bicycle model, both at a fixed 0.1 s step.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, wrap_angle, Vec2};
use crate::scenario::DT;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    /// Heading in (-π, π].
    pub theta: f64,
    /// Forward speed, never negative.
    pub v: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    /// Longitudinal acceleration, m/s².
    pub accel: f64,
    /// Front-wheel steering angle, radians.
    pub steer: f64,
}

impl Action {
    pub const ZERO: Action = Action { accel: 0.0, steer: 0.0 };

    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }
}

/// A pose target: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_steer: f64,
    pub max_speed: f64,
    pub dt: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_accel: 6.0,
            max_steer: 0.5,
            max_speed: 30.0,
            dt: DT,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("wheelbase", self.wheelbase),
            ("max_accel", self.max_accel),
            ("max_steer", self.max_steer),
            ("max_speed", self.max_speed),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("vehicle.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, a: Action) -> Action {
        let fix = |v: f64| if v.is_finite() { v } else { 0.0 };
        Action {
            accel: fix(a.accel).clamp(-self.max_accel, self.max_accel),
            steer: fix(a.steer).clamp(-self.max_steer, self.max_steer),
        }
    }
}

/// Default dynamics: jump to the predicted pose, speed from displacement.
pub fn step_default(state: &EgoState, wp: &Waypoint, dt: f64) -> EgoState {
    let v = state.position().dist(wp.position()) / dt;
    EgoState {
        x: wp.x,
        y: wp.y,
        theta: wrap_angle(wp.heading),
        v,
    }
}

/// Forward-Euler kinematic bicycle step. The action is clamped first.
pub fn step_bicycle(state: &EgoState, action: Action, p: &VehicleParams) -> EgoState {
    let a = p.clamp(action);
    let dt = p.dt;
    EgoState {
        x: state.x + state.v * state.theta.cos() * dt,
        y: state.y + state.v * state.theta.sin() * dt,
        theta: wrap_angle(state.theta + state.v / p.wheelbase * a.steer.tan() * dt),
        v: (state.v + a.accel * dt).clamp(0.0, p.max_speed),
    }
}

/// One-step inverse of the bicycle model: the (clamped) action whose speed
/// and heading change best reproduce a move to `wp` within one step.
pub fn action_toward(state: &EgoState, wp: &Waypoint, p: &VehicleParams) -> Action {
    let v_next = state.position().dist(wp.position()) / p.dt;
    let accel = (v_next - state.v) / p.dt;
    let steer = if state.v > 1e-3 {
        let dtheta = angle_diff(wp.heading, state.theta);
        (dtheta * p.wheelbase / (state.v * p.dt)).atan()
    } else {
        0.0
    };
    p.clamp(Action::new(accel, steer))
}

/// Action implied by an observed transition, used for smoothness signals
/// when the default dynamics bypass the action channel.
pub fn implied_action(prev: &EgoState, next: &EgoState, p: &VehicleParams) -> Action {
    let accel = (next.v - prev.v) / p.dt;
    let steer = if prev.v > 1e-3 {
        (angle_diff(next.theta, prev.theta) * p.wheelbase / (prev.v * p.dt)).atan()
    } else {
        0.0
    };
    Action::new(accel, steer)
}
