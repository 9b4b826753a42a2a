//! Safe primal-dual reinforcement learning for continuing tasks.
//!
//! The learner ([`learner`]) optimizes a policy against a Lagrangian that
//! rewards time spent in a safe set, using estimates gathered along a single
//! trajectory that is never reset. The [`tabular`] module computes the same
//! quantities exactly on finite MDPs and checks the inequalities that make the
//! reset-free estimates useful.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod learner;
pub mod mdp;
pub mod nav;
pub mod par;
pub mod policy;
pub mod report;
pub mod rng;
pub mod safety;
pub mod tabular;

pub use error::{Error, Result};
