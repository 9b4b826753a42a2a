use nalgebra::DMatrix;
use rand::Rng;

use super::{Params, StochasticPolicy};
use crate::error::{domain, Result};
use crate::mdp::{ActionVec, StateVec};
use crate::rng::StreamRng;

/// Softmax policy over a finite action set, one row of logits per state.
/// Probabilities are always re-derived from the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    logits: Params,
}

impl TabularPolicy {
    pub fn new(logits: Params) -> Result<Self> {
        if logits.nrows() == 0 || logits.ncols() == 0 {
            return domain("tabular policy needs at least one state and one action");
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return domain("logits must be finite");
        }
        Ok(Self { logits })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(num_states, num_actions))
    }

    /// Puts almost all mass on `choice[s]` in each state.
    pub fn near_deterministic(num_actions: usize, choice: &[usize], margin: f64) -> Result<Self> {
        let mut logits = DMatrix::zeros(choice.len(), num_actions);
        for (s, &a) in choice.iter().enumerate() {
            if a >= num_actions {
                return domain(format!("action {a} out of range"));
            }
            logits[(s, a)] = margin;
        }
        Self::new(logits)
    }

    pub fn num_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Params {
        &self.logits
    }

    /// `pi(. | s)`; strictly positive, sums to one.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = self.logits.row(s);
        let max = row.max();
        let w: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }

    /// Full matrix of action probabilities.
    pub fn prob_table(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_states(), self.num_actions());
        for s in 0..self.num_states() {
            for (a, p) in self.probs(s).into_iter().enumerate() {
                out[(s, a)] = p;
            }
        }
        out
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states() || a >= self.num_actions() {
            return domain(format!(
                "(state {s}, action {a}) outside {}x{} table",
                self.num_states(),
                self.num_actions()
            ));
        }
        Ok(())
    }

    /// Gradient of `log pi(a | s)` with respect to the logits:
    /// `1(s' = s) (1(a' = a) - pi(a' | s))`.
    pub fn tabular_score(&self, s: usize, a: usize) -> Result<Params> {
        self.check(s, a)?;
        let mut g = DMatrix::zeros(self.num_states(), self.num_actions());
        for (b, p) in self.probs(s).into_iter().enumerate() {
            g[(s, b)] = if b == a { 1.0 - p } else { -p };
        }
        Ok(g)
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        self.check(s, a)?;
        Ok(self.prob(s, a).ln())
    }
}

impl StochasticPolicy for TabularPolicy {
    fn sample_action(&self, s: &StateVec, rng: &mut StreamRng) -> Result<ActionVec> {
        let s = s.index();
        if s >= self.num_states() {
            return domain(format!("state {s} out of range"));
        }
        let u: f64 = rng.random();
        let probs = self.probs(s);
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(ActionVec::from_index(a));
            }
        }
        Ok(ActionVec::from_index(probs.len() - 1))
    }

    fn log_prob_grad(&self, s: &StateVec, a: &ActionVec) -> Result<Params> {
        self.tabular_score(s.index(), a.index())
    }

    fn params(&self) -> &Params {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.logits
    }
}
