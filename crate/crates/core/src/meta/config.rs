use std::fmt;
use std::str::FromStr;

use crate::envs::{cartpole, intersection, Family, TaskDistribution};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Maml,
    Fomaml,
    Reptile,
    MetaSgd,
    DirectedMaml,
    DirectedFomaml,
    DirectedMetaSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Maml,
        Algorithm::Fomaml,
        Algorithm::Reptile,
        Algorithm::MetaSgd,
        Algorithm::DirectedMaml,
        Algorithm::DirectedFomaml,
        Algorithm::DirectedMetaSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Maml => "maml",
            Algorithm::Fomaml => "fomaml",
            Algorithm::Reptile => "reptile",
            Algorithm::MetaSgd => "meta-sgd",
            Algorithm::DirectedMaml => "directed-maml",
            Algorithm::DirectedFomaml => "directed-fomaml",
            Algorithm::DirectedMetaSgd => "directed-meta-sgd",
        }
    }

    pub fn is_directed(self) -> bool {
        matches!(
            self,
            Algorithm::DirectedMaml | Algorithm::DirectedFomaml | Algorithm::DirectedMetaSgd
        )
    }

    /// The algorithm without the medium-task pre-step.
    pub fn base(self) -> Algorithm {
        match self {
            Algorithm::DirectedMaml => Algorithm::Maml,
            Algorithm::DirectedFomaml => Algorithm::Fomaml,
            Algorithm::DirectedMetaSgd => Algorithm::MetaSgd,
            other => other,
        }
    }

    pub fn directed(self) -> Option<Algorithm> {
        match self {
            Algorithm::Maml => Some(Algorithm::DirectedMaml),
            Algorithm::Fomaml => Some(Algorithm::DirectedFomaml),
            Algorithm::MetaSgd => Some(Algorithm::DirectedMetaSgd),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == norm || a.name().replace('-', "") == norm)
            .ok_or_else(|| Error::validation("algorithm", format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Learner {
    /// REINFORCE with standardized returns.
    Pg,
    /// Policy gradient with a learned state-value baseline.
    Ac,
}

impl Learner {
    pub fn name(self) -> &'static str {
        match self {
            Learner::Pg => "pg",
            Learner::Ac => "ac",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pg" => Ok(Learner::Pg),
            "ac" => Ok(Learner::Ac),
            other => Err(Error::validation("learner", format!("unknown learner `{other}`"))),
        }
    }
}

/// Step sizes, batch sizes and selectors for one meta-training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner (adaptation) step size.
    pub alpha: f64,
    /// Outer (meta) step size.
    pub beta: f64,
    /// Medium-task pre-step size, directed algorithms only.
    pub delta: f64,
    pub gamma: f64,
    pub m_tasks: usize,
    pub k_trajs: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub algorithm: Algorithm,
    pub learner: Learner,
    pub seed: u64,
    pub family: Family,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta: 0.001,
            delta: 0.005,
            gamma: 0.99,
            m_tasks: 5,
            k_trajs: 10,
            horizon: cartpole::HORIZON,
            epochs: 500,
            algorithm: Algorithm::DirectedMaml,
            learner: Learner::Pg,
            seed: 1,
            family: Family::CartPole,
            phi_lo: 5.0,
            phi_hi: 15.0,
        }
    }
}

pub fn default_horizon(family: Family) -> usize {
    match family {
        Family::CartPole => cartpole::HORIZON,
        Family::Intersection => intersection::HORIZON,
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(name, format!("{v} must be positive and finite")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::validation("delta", format!("{} must be non-negative", self.delta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation("gamma", format!("{} outside (0, 1]", self.gamma)));
        }
        for (name, v) in [
            ("m_tasks", self.m_tasks),
            ("k_trajs", self.k_trajs),
            ("horizon", self.horizon),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if self.algorithm.is_directed() && self.delta > self.outer_step() {
            return Err(Error::validation(
                "delta",
                format!(
                    "pre-step size {} exceeds the outer step {} (beta {} over {} summed tasks)",
                    self.delta,
                    self.outer_step(),
                    self.beta,
                    self.m_tasks
                ),
            ));
        }
        self.distribution().map(|_| ())
    }

    /// Total weight the outer update gives the sampled tasks: `beta` applied
    /// to a plain sum over `m_tasks` task gradients.
    pub fn outer_step(&self) -> f64 {
        self.beta * self.m_tasks as f64
    }

    pub fn distribution(&self) -> Result<TaskDistribution> {
        TaskDistribution::new(self.family, self.phi_lo, self.phi_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_hyperparameters() {
        let c = MetaConfig::default();
        assert_eq!(
            (c.delta, c.alpha, c.beta, c.gamma, c.m_tasks, c.k_trajs),
            (0.005, 0.001, 0.001, 0.99, 5, 10)
        );
    }

    #[test]
    fn prestep_bounded_by_outer_step() {
        MetaConfig::default().validate().unwrap();
        let c = MetaConfig {
            delta: 0.01,
            beta: 0.001,
            ..MetaConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Validation { ref field, .. }) if field == "delta"));
        let c = MetaConfig {
            algorithm: Algorithm::Maml,
            ..c
        };
        c.validate().unwrap();
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("Directed_MAML".parse::<Algorithm>().unwrap(), Algorithm::DirectedMaml);
        assert_eq!("metasgd".parse::<Algorithm>().unwrap(), Algorithm::MetaSgd);
        assert!("pearl".parse::<Algorithm>().is_err());
    }
}
