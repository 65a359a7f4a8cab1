//! Fly-ball carry distance from a point-mass model with quadratic drag and
//! constant-coefficient lift, integrated with fixed-step RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MPH_TO_MPS: f64 = 0.44704;
pub const FT_TO_M: f64 = 0.3048;
pub const GRAVITY: f64 = 9.80665;

/// Drag coefficient giving 385.3 ft at 100 mph and 30° with the other
/// defaults (see `examples/calibrate_trajectory.rs`).
pub const CALIBRATED_DRAG: f64 = 0.3812;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightParams {
    pub drag_coefficient: f64,
    pub lift_coefficient: f64,
    /// kg/m³
    pub air_density: f64,
    /// kg
    pub mass: f64,
    /// m
    pub diameter: f64,
    /// ft
    pub release_height: f64,
    /// s
    pub step: f64,
}

impl Default for FlightParams {
    fn default() -> Self {
        FlightParams {
            drag_coefficient: CALIBRATED_DRAG,
            lift_coefficient: 0.20,
            air_density: 1.194,
            mass: 0.145,
            diameter: 0.0737,
            release_height: 3.0,
            step: 0.001,
        }
    }
}

impl FlightParams {
    /// No air and launch from the ground.
    pub fn vacuum() -> Self {
        FlightParams { drag_coefficient: 0.0, lift_coefficient: 0.0, release_height: 0.0, ..Default::default() }
    }

    pub fn cross_section(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("air_density", self.air_density),
            ("mass", self.mass),
            ("diameter", self.diameter),
            ("step", self.step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("drag_coefficient", self.drag_coefficient),
            ("lift_coefficient", self.lift_coefficient),
            ("release_height", self.release_height),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.step > 0.01 {
            return Err(Error::InvalidArgument(format!("step must be at most 0.01 s, got {}", self.step)));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: FlightParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

type State = [f64; 4];

fn derivative(s: &State, k: f64, cd: f64, cl: f64) -> State {
    let [_, _, vx, vz] = *s;
    let speed = vx.hypot(vz);
    // Lift acts perpendicular to the velocity, rotated towards +z.
    let ax = -k * cd * speed * vx - k * cl * speed * vz;
    let az = -GRAVITY - k * cd * speed * vz + k * cl * speed * vx;
    [vx, vz, ax, az]
}

fn axpy(s: &State, h: f64, d: &State) -> State {
    [s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2], s[3] + h * d[3]]
}

/// Horizontal distance (ft) at which the ball returns to ground level.
pub fn carry_distance(exit_velocity_mph: f64, launch_angle_deg: f64, params: &FlightParams) -> Result<f64> {
    params.validate()?;
    if !(0.0..=125.0).contains(&exit_velocity_mph) {
        return Err(Error::InvalidArgument(format!("exit velocity must be in [0, 125] mph, got {exit_velocity_mph}")));
    }
    if !(launch_angle_deg > 0.0 && launch_angle_deg < 90.0) {
        return Err(Error::InvalidArgument(format!("launch angle must be in (0, 90) degrees, got {launch_angle_deg}")));
    }
    if exit_velocity_mph == 0.0 {
        return Ok(0.0);
    }
    let v = exit_velocity_mph * MPH_TO_MPS;
    let th = launch_angle_deg.to_radians();
    let k = params.air_density * params.cross_section() / (2.0 * params.mass);
    let (cd, cl, h) = (params.drag_coefficient, params.lift_coefficient, params.step);
    let mut s: State = [0.0, params.release_height * FT_TO_M, v * th.cos(), v * th.sin()];
    let mut airborne = false;
    for _ in 0..10_000_000 {
        let k1 = derivative(&s, k, cd, cl);
        let k2 = derivative(&axpy(&s, h / 2.0, &k1), k, cd, cl);
        let k3 = derivative(&axpy(&s, h / 2.0, &k2), k, cd, cl);
        let k4 = derivative(&axpy(&s, h, &k3), k, cd, cl);
        let next: State = std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        airborne |= next[1] > 0.0;
        if airborne && next[1] <= 0.0 {
            // Linear interpolation of the ground crossing within the step.
            let t = s[1] / (s[1] - next[1]);
            let x = s[0] + t * (next[0] - s[0]);
            return Ok(x / FT_TO_M);
        }
        s = next;
    }
    Err(Error::Numerical("trajectory did not land".into()))
}
