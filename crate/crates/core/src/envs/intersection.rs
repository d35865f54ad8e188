use rand::Rng as _;

use super::State;
use crate::rng::Rng;

pub const DT: f64 = 0.1;
pub const HORIZON: usize = 100;
pub const MAX_SPEED: f64 = 15.0;
pub const START_DISTANCE: f64 = 40.0;
pub const START_JITTER: f64 = 10.0;
/// Both vehicles within this distance of the conflict point is a collision.
pub const CONFLICT_HALF_WIDTH: f64 = 2.0;
/// Vehicle 1 has cleared the intersection once this far past it.
pub const CLEAR_DISTANCE: f64 = 5.0;
pub const COLLISION_REWARD: f64 = -100.0;
pub const CROSSING_BONUS: f64 = 50.0;
/// Observation scale applied before the policy sees the state.
pub const OBS_SCALE: f64 = 1.0 / 20.0;

/// Two vehicles approaching a crossing on perpendicular lanes. Vehicle 1 is
/// controlled through its speed; vehicle 2 drives at a fixed speed.
///
/// State is `(Δx, Δy)`: each vehicle's signed distance to the conflict point,
/// negative while approaching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intersection {
    pub other_speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Collision,
    Crossed,
}

impl Intersection {
    pub fn new(other_speed: f64) -> Self {
        Self { other_speed }
    }

    pub fn reset(&self, rng: &mut Rng) -> State {
        let jitter = rng.random_range(0.0..=START_JITTER);
        State(vec![-START_DISTANCE, -(START_DISTANCE + jitter)])
    }

    pub fn is_collision(s: &State) -> bool {
        s.0[0].abs() < CONFLICT_HALF_WIDTH && s.0[1].abs() < CONFLICT_HALF_WIDTH
    }

    /// Deterministic transition for a speed command already checked to lie
    /// in `[0, MAX_SPEED]`.
    pub fn transition(&self, s: &State, speed: f64) -> (State, f64, Outcome) {
        let next = State(vec![s.0[0] + speed * DT, s.0[1] + self.other_speed * DT]);
        if Self::is_collision(&next) {
            (next, COLLISION_REWARD, Outcome::Collision)
        } else if next.0[0] >= CLEAR_DISTANCE {
            (next, speed / MAX_SPEED + CROSSING_BONUS, Outcome::Crossed)
        } else {
            (next, speed / MAX_SPEED, Outcome::Running)
        }
    }
}
