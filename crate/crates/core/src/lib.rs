//! Gradient-based meta-reinforcement learning: MAML and its first-order,
//! Reptile, Meta-SGD and task-directed variants, on a small reverse-mode
//! autodiff engine, with parameterized CartPole and intersection tasks and
//! a reproducible experiment harness.

pub mod autodiff;
pub mod envs;
pub mod error;
pub mod harness;
pub mod meta;
pub mod policy;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
