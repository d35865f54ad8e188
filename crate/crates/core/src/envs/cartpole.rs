use rand::Rng as _;

use super::State;
use crate::rng::Rng;

pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const DT: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const HORIZON: usize = 200;

/// Cart-pole with a configurable gravitational acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPole {
    pub gravity: f64,
}

impl CartPole {
    pub fn new(gravity: f64) -> Self {
        Self { gravity }
    }

    pub fn reset(&self, rng: &mut Rng) -> State {
        State((0..4).map(|_| rng.random_range(-0.05..=0.05)).collect())
    }

    /// One Euler step under an arbitrary horizontal force. Returns the next
    /// state and whether it violates the position or angle limits.
    pub fn step_force(&self, s: &State, force: f64) -> (State, bool) {
        let [x, x_dot, theta, theta_dot] = [s.0[0], s.0[1], s.0[2], s.0[3]];
        let total_mass = CART_MASS + POLE_MASS;
        let pole_moment = POLE_MASS * HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

        let next = State(vec![
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ]);
        let failed = next.0[0].abs() > X_LIMIT || next.0[2].abs() > ANGLE_LIMIT;
        (next, failed)
    }
}
