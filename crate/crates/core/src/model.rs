//! Shared domain types: control commands, poses, vehicle state and geodetic
//! locations.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("angle is not finite")]
    NonFinite,
}

/// Per-frame vehicle command.
///
/// Field order is part of the log and wire formats and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub throttle: f64,
    /// Normalized lateral command, positive turns left.
    pub steer: f64,
    pub brake: f64,
    pub hand_brake: bool,
    pub reverse: bool,
    pub manual_gear_shift: bool,
    /// -1 reverse, 0 neutral, 1..=6 forward gears.
    pub gear: i8,
}

pub const MIN_GEAR: i8 = -1;
pub const MAX_GEAR: i8 = 6;

impl ControlAction {
    /// All-zero command: no throttle, no brake, neutral gear.
    pub const fn neutral() -> Self {
        Self {
            throttle: 0.0,
            steer: 0.0,
            brake: 0.0,
            hand_brake: false,
            reverse: false,
            manual_gear_shift: false,
            gear: 0,
        }
    }

    /// Neutral controls with full brake. Substituted whenever an agent fails
    /// to produce an action in time.
    pub const fn safe_stop() -> Self {
        Self {
            brake: 1.0,
            ..Self::neutral()
        }
    }

    /// Checks every bound, reporting the first violated one in field order.
    pub fn validate(self) -> Result<Self, ModelError> {
        fn check(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ModelError> {
            if (lo..=hi).contains(&value) {
                Ok(())
            } else {
                Err(ModelError::OutOfRange { field, value })
            }
        }
        check("throttle", self.throttle, 0.0, 1.0)?;
        check("steer", self.steer, -1.0, 1.0)?;
        check("brake", self.brake, 0.0, 1.0)?;
        if !(MIN_GEAR..=MAX_GEAR).contains(&self.gear) {
            return Err(ModelError::OutOfRange {
                field: "gear",
                value: f64::from(self.gear),
            });
        }
        if self.reverse && self.manual_gear_shift && self.gear > 0 {
            return Err(ModelError::OutOfRange {
                field: "gear",
                value: f64::from(self.gear),
            });
        }
        Ok(self)
    }
}

impl Default for ControlAction {
    fn default() -> Self {
        Self::neutral()
    }
}

pub fn validate_control(action: ControlAction) -> Result<ControlAction, ModelError> {
    action.validate()
}

pub fn neutral_control() -> ControlAction {
    ControlAction::neutral()
}

/// Wraps an angle into (-π, π].
pub fn normalize_yaw(angle: f64) -> Result<f64, ModelError> {
    if !angle.is_finite() {
        return Err(ModelError::NonFinite);
    }
    let wrapped = angle.rem_euclid(TAU);
    Ok(if wrapped > PI { wrapped - TAU } else { wrapped })
}

/// Same as [`normalize_yaw`] for callers that have already established
/// finiteness. Non-finite input is returned unchanged.
pub(crate) fn wrap_angle(angle: f64) -> f64 {
    normalize_yaw(angle).unwrap_or(angle)
}

/// Planar pose in the map frame: x east, y north, yaw counterclockwise
/// from +x.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Transform {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn at(x: f64, y: f64) -> Self {
        Self { x, y, yaw: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    pub fn distance_to(&self, other: &Transform) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Maps a point given in this pose's local frame (x forward, y left)
    /// into the parent frame.
    pub fn apply(&self, local_x: f64, local_y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (
            self.x + c * local_x - s * local_y,
            self.y + s * local_x + c * local_y,
        )
    }

    /// Inverse of [`Transform::apply`].
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub transform: Transform,
    /// Signed, negative when reversing.
    pub speed: f64,
    pub yaw_rate: f64,
    pub frame: u64,
    pub sim_time: f64,
}

impl VehicleState {
    pub fn at_rest(transform: Transform, frame: u64, fixed_delta: f64) -> Self {
        Self {
            transform,
            speed: 0.0,
            yaw_rate: 0.0,
            frame,
            sim_time: frame as f64 * fixed_delta,
        }
    }

    /// World-frame velocity vector.
    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.transform.yaw.sin_cos();
        (self.speed * c, self.speed * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoLocation {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}
