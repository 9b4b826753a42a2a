//! Stochastic policies: the Gaussian RBF controller used on the navigation
//! task and a softmax table used by the exact oracles.

mod rbf;
mod tabular;

pub use rbf::{Checkpoint, GaussianRbfPolicy, RbfBasis};
pub use tabular::TabularPolicy;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::mdp::{ActionVec, StateVec};
use crate::rng::StreamRng;

/// Parameter array of a policy. Its shape is fixed at construction.
pub type Params = DMatrix<f64>;

pub trait StochasticPolicy {
    fn sample_action(&self, s: &StateVec, rng: &mut StreamRng) -> Result<ActionVec>;

    /// Gradient of `log pi(a | s)` with respect to [`Self::params`].
    fn log_prob_grad(&self, s: &StateVec, a: &ActionVec) -> Result<Params>;

    fn params(&self) -> &Params;

    fn params_mut(&mut self) -> &mut Params;
}
