//! Parameterized environment families and the uniform task distribution.

pub mod cartpole;
pub mod intersection;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

pub use cartpole::CartPole;
pub use intersection::{Intersection, Outcome};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    CartPole,
    Intersection,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::CartPole => "cartpole",
            Family::Intersection => "intersection",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" | "cartpole-v1" => Ok(Family::CartPole),
            "intersection" => Ok(Family::Intersection),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// One member of a family: the family plus its scalar parameter
/// (gravity in m/s² for cart-pole, vehicle-2 speed in m/s for the crossing).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Task {
    pub family: Family,
    pub phi: f64,
}

impl Task {
    pub fn new(family: Family, phi: f64) -> Result<Self> {
        if !phi.is_finite() || phi <= 0.0 {
            return Err(Error::validation("phi", format!("{phi} is not a positive finite parameter")));
        }
        Ok(Self { family, phi })
    }
}

/// Uniform distribution of the family parameter over `[phi_lo, phi_hi]`.
/// A zero-width interval is allowed and yields a single task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskDistribution {
    family: Family,
    phi_lo: f64,
    phi_hi: f64,
}

impl TaskDistribution {
    pub fn new(family: Family, phi_lo: f64, phi_hi: f64) -> Result<Self> {
        if !(phi_lo.is_finite() && phi_hi.is_finite()) || phi_lo <= 0.0 {
            return Err(Error::validation("phi_lo", "bounds must be positive and finite"));
        }
        if phi_lo > phi_hi {
            return Err(Error::validation("phi_hi", format!("{phi_hi} is below phi_lo {phi_lo}")));
        }
        Ok(Self {
            family,
            phi_lo,
            phi_hi,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.phi_lo, self.phi_hi)
    }

    pub fn contains(&self, phi: f64) -> bool {
        (self.phi_lo..=self.phi_hi).contains(&phi)
    }

    pub fn sample(&self, rng: &mut Rng) -> Task {
        let phi = if self.phi_lo == self.phi_hi {
            self.phi_lo
        } else {
            rng.random_range(self.phi_lo..=self.phi_hi)
        };
        Task {
            family: self.family,
            phi,
        }
    }
}

/// The task at the mean of the uniform parameter interval.
pub fn medium_task(dist: &TaskDistribution) -> Task {
    Task {
        family: dist.family,
        phi: 0.5 * (dist.phi_lo + dist.phi_hi),
    }
}

/// Sample-mean estimate of the medium task.
pub fn empirical_medium(tasks: &[Task]) -> Result<Task> {
    let first = tasks.first().ok_or(Error::EmptyTaskSet)?;
    if tasks.iter().any(|t| t.family != first.family) {
        return Err(Error::MixedFamilies);
    }
    let phi = tasks.iter().map(|t| t.phi).sum::<f64>() / tasks.len() as f64;
    Ok(Task {
        family: first.family,
        phi,
    })
}

/// `m` independent draws from `dist`.
pub fn sample_tasks(dist: &TaskDistribution, m: usize, rng: &mut Rng) -> Vec<Task> {
    (0..m).map(|_| dist.sample(rng)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct State(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Discrete(a) => write!(f, "discrete {a}"),
            Action::Continuous(a) => write!(f, "continuous {a}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionSpec {
    Discrete(usize),
    Continuous { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next: State,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dynamics {
    CartPole(CartPole),
    Intersection(Intersection),
}

/// An environment instance for one task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Environment {
    task: Task,
    dynamics: Dynamics,
    horizon: usize,
}

pub fn make_env(task: Task) -> Environment {
    let dynamics = match task.family {
        Family::CartPole => Dynamics::CartPole(CartPole::new(task.phi)),
        Family::Intersection => Dynamics::Intersection(Intersection::new(task.phi)),
    };
    let horizon = match task.family {
        Family::CartPole => cartpole::HORIZON,
        Family::Intersection => intersection::HORIZON,
    };
    Environment {
        task,
        dynamics,
        horizon,
    }
}

impl Environment {
    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Same dynamics with episodes truncated after `horizon` steps.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::CartPole(_) => 4,
            Dynamics::Intersection(_) => 2,
        }
    }

    pub fn action_spec(&self) -> ActionSpec {
        match self.dynamics {
            Dynamics::CartPole(_) => ActionSpec::Discrete(2),
            Dynamics::Intersection(_) => ActionSpec::Continuous {
                lo: 0.0,
                hi: intersection::MAX_SPEED,
            },
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> State {
        match &self.dynamics {
            Dynamics::CartPole(c) => c.reset(rng),
            Dynamics::Intersection(i) => i.reset(rng),
        }
    }

    /// Policy input features for a state.
    pub fn observe(&self, s: &State) -> Vec<f64> {
        match self.dynamics {
            Dynamics::CartPole(_) => s.0.clone(),
            Dynamics::Intersection(_) => s.0.iter().map(|v| v * intersection::OBS_SCALE).collect(),
        }
    }

    /// One transition. Horizon truncation is the caller's concern.
    pub fn step(&self, s: &State, a: &Action) -> Result<Step> {
        let step = match (&self.dynamics, *a) {
            (Dynamics::CartPole(c), Action::Discrete(i @ (0 | 1))) => {
                let force = if i == 1 {
                    cartpole::FORCE_MAG
                } else {
                    -cartpole::FORCE_MAG
                };
                let (next, failed) = c.step_force(s, force);
                Step {
                    next,
                    reward: 1.0,
                    done: failed,
                }
            }
            (Dynamics::Intersection(x), Action::Continuous(speed))
                if (0.0..=intersection::MAX_SPEED).contains(&speed) =>
            {
                let (next, reward, outcome) = x.transition(s, speed);
                Step {
                    next,
                    reward,
                    done: outcome != Outcome::Running,
                }
            }
            (Dynamics::CartPole(_), a) => {
                return Err(Error::InvalidAction {
                    env: "cartpole",
                    action: a.to_string(),
                })
            }
            (Dynamics::Intersection(_), a) => {
                return Err(Error::InvalidAction {
                    env: "intersection",
                    action: a.to_string(),
                })
            }
        };
        if step.next.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("environment state"));
        }
        Ok(step)
    }
}
