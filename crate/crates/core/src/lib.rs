//! Consensus-based multi-agent actor-critic learning on networked MDPs, with a
//! single adversarial agent that refuses to mix inbound parameters.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`] holds finite networked MDPs and the exact quantities derived from
//!   them (induced chains, stationary distributions, averaged reward vectors).
//! * [`approx`] provides linear features, softmax policies and a small MLP.
//! * [`consensus`] builds and analyses row-stochastic mixing matrices.
//! * [`algorithm`] runs the actor-critic training loop with a consensus step.
//! * [`oracle`] solves the fixed-point equations the training loop should
//!   converge to, independently of the training code.
//! * [`envs`] contains the grid-world and a seeded random small-MDP generator.
//! * [`harness`] ties everything into seeded, reproducible experiments.

pub mod algorithm;
pub mod approx;
pub mod consensus;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
