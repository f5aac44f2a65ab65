//! Kinematic bicycle vehicle model stepped at a fixed tick.

use super::geometry::{wrap_angle, Vec2};
use crate::env::ContinuousControl;
use serde::{Deserialize, Serialize};

/// Vehicle and surface constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// Distance between axles, meters.
    pub wheelbase: f64,
    /// Speed ceiling, m/s.
    pub v_max: f64,
    /// Steering lock, radians.
    pub max_steer: f64,
    /// Steering slew rate, radians/second: the wheel moves toward the
    /// commanded angle at most this fast.
    pub steer_rate: f64,
    /// Full-throttle acceleration, m/s^2.
    pub accel_scale: f64,
    /// Full-brake deceleration, m/s^2.
    pub brake_scale: f64,
    /// Linear drag coefficient, 1/s.
    pub drag_coeff: f64,
    /// Fraction of speed retained per second of grass driving.
    pub grass_speed_multiplier: f64,
    /// Collision radius of the car body, meters.
    pub car_radius: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            wheelbase: 2.5,
            v_max: 30.0,
            max_steer: 0.4,
            steer_rate: 20.0,
            accel_scale: 15.0,
            brake_scale: 15.0,
            drag_coeff: 0.05,
            grass_speed_multiplier: 0.6,
            car_radius: 1.0,
        }
    }
}

/// Top-down vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: Vec2,
    pub heading: f64,
    /// Forward speed, m/s, never negative.
    pub speed: f64,
    pub steer_angle: f64,
}

impl CarState {
    pub fn at(position: Vec2, heading: f64) -> Self {
        CarState {
            position,
            heading,
            speed: 0.0,
            steer_angle: 0.0,
        }
    }
}

/// One explicit-Euler step of the bicycle model. Pure function: same inputs,
/// bit-identical output.
///
/// The wheel slews toward the commanded angle at `steer_rate`; position and
/// speed derivatives are evaluated at the pre-step state, heading at the
/// post-slew steer angle. Grass adds drag equivalent to retaining
/// `grass_speed_multiplier` of the speed per second, so a coarse step agrees
/// with fine substeps of the same model.
pub fn step_dynamics(
    car: &CarState,
    control: &ContinuousControl,
    on_grass: bool,
    params: &DynamicsParams,
    dt: f64,
) -> CarState {
    let target = control.steer.clamp(-1.0, 1.0) * params.max_steer;
    let swing = params.steer_rate * dt;
    let steer = (car.steer_angle + (target - car.steer_angle).clamp(-swing, swing))
        .clamp(-params.max_steer, params.max_steer);
    let accel = control.accel.clamp(0.0, 1.0) * params.accel_scale;
    let brake = control.brake.clamp(0.0, 1.0) * params.brake_scale;

    let mut drag = params.drag_coeff;
    if on_grass {
        drag += -params.grass_speed_multiplier.ln();
    }

    let position = car.position + Vec2::from_angle(car.heading) * (car.speed * dt);
    let heading = wrap_angle(car.heading + car.speed * steer.tan() / params.wheelbase * dt);
    let speed = (car.speed + (accel - brake - drag * car.speed) * dt).clamp(0.0, params.v_max);

    CarState {
        position,
        heading,
        speed,
        steer_angle: steer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_with_zero_control_is_a_fixed_point() {
        let params = DynamicsParams::default();
        let car = CarState::at(Vec2::new(3.0, -2.0), 0.7);
        let next = step_dynamics(&car, &ContinuousControl::new(0.0, 0.0, 0.0), false, &params, 0.02);
        assert_eq!(car, next);
    }

    #[test]
    fn coasting_advances_v_dt() {
        let params = DynamicsParams {
            drag_coeff: 0.0,
            ..DynamicsParams::default()
        };
        let mut car = CarState::at(Vec2::ZERO, 0.3);
        car.speed = 10.0;
        let next = step_dynamics(&car, &ContinuousControl::new(0.0, 0.0, 0.0), false, &params, 0.02);
        let expect = Vec2::from_angle(0.3) * 0.2;
        assert!((next.position - expect).norm() < 1e-12);
        assert_eq!(next.speed, 10.0);
        assert_eq!(next.heading, 0.3);
    }

    #[test]
    fn grass_is_strictly_slower() {
        let params = DynamicsParams::default();
        let mut car = CarState::at(Vec2::ZERO, 0.0);
        car.speed = 12.0;
        let control = ContinuousControl::new(0.2, 0.0, 0.0);
        let on_track = step_dynamics(&car, &control, false, &params, 0.02);
        let on_grass = step_dynamics(&car, &control, true, &params, 0.02);
        assert!(on_grass.speed < on_track.speed);
    }

    #[test]
    fn speed_clamped_to_limits() {
        let params = DynamicsParams::default();
        let mut car = CarState::at(Vec2::ZERO, 0.0);
        car.speed = params.v_max;
        let next = step_dynamics(&car, &ContinuousControl::new(0.0, 1.0, 0.0), false, &params, 0.02);
        assert_eq!(next.speed, params.v_max);

        car.speed = 0.05;
        let next = step_dynamics(&car, &ContinuousControl::new(0.0, 0.0, 1.0), false, &params, 0.02);
        assert_eq!(next.speed, 0.0);
    }

    #[test]
    fn steer_slews_toward_command_and_clamps_at_lock() {
        let params = DynamicsParams {
            steer_rate: 2.0,
            ..DynamicsParams::default()
        };
        let mut car = CarState::at(Vec2::ZERO, 0.0);
        let hard_left = ContinuousControl::new(-4.0, 0.0, 0.0);
        car = step_dynamics(&car, &hard_left, false, &params, 0.02);
        assert_eq!(car.steer_angle, -params.steer_rate * 0.02);
        // hold the command until the lock stops it
        for _ in 0..100 {
            car = step_dynamics(&car, &hard_left, false, &params, 0.02);
        }
        assert_eq!(car.steer_angle, -params.max_steer);
        // releasing the wheel re-centers it at the same rate
        let release = ContinuousControl::new(0.0, 0.0, 0.0);
        car = step_dynamics(&car, &release, false, &params, 0.02);
        assert_eq!(car.steer_angle, -params.max_steer + params.steer_rate * 0.02);
    }

    #[test]
    fn default_steer_rate_reaches_lock_in_one_tick() {
        let params = DynamicsParams::default();
        let car = CarState::at(Vec2::ZERO, 0.0);
        let next = step_dynamics(&car, &ContinuousControl::new(1.0, 0.0, 0.0), false, &params, 0.02);
        assert_eq!(next.steer_angle, params.max_steer);
    }
}
