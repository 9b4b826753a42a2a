//! Exact computations on finite MDPs.
//!
//! Everything here is a pure function of its inputs and serves as ground truth
//! for the sampling-based learner: occupation measures, value functions, exact
//! policy gradients, mixing and spectral quantities, and the inequality checks
//! built on them.

mod checks;
mod measures;
mod mixing;
mod spectral;
pub mod suites;
mod values;

pub use checks::{lemma_check, sup_two_norm, theorem1_check, LemmaReport, Theorem1Report};
pub use measures::{
    occupancy_measure, occupation_measure, occupation_series, tv_distance, OccupancyMeasure,
    OccupationMeasure, SignedMeasure,
};
pub use mixing::{is_ergodic, mixing_time, prop2_threshold, stationary_distribution};
pub use spectral::{metropolis_chain, prop3_threshold, spectral_info, SpectralInfo};
pub use values::{d_field, exact_lagrangian, value_functions, DField, ValueFunctions};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{domain, Result};
use crate::mdp::{ActionVec, Environment, StateVec, StepOutcome};
use crate::policy::TabularPolicy;
use crate::rng::StreamRng;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor `P[s][a][s']`, rewards `r[s][a]` and a
/// safe-state mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n: usize,
    m: usize,
    transitions: Vec<f64>,
    rewards: DMatrix<f64>,
    safe: Vec<bool>,
}

impl TabularMdp {
    /// `kernels[a]` is the `n x n` transition matrix of action `a`.
    pub fn new(kernels: Vec<DMatrix<f64>>, rewards: DMatrix<f64>, safe: Vec<bool>) -> Result<Self> {
        let m = kernels.len();
        if m == 0 {
            return domain("MDP needs at least one action");
        }
        let n = kernels[0].nrows();
        if n == 0 || kernels.iter().any(|k| k.nrows() != n || k.ncols() != n) {
            return domain("every action kernel must be n x n with n > 0");
        }
        if rewards.nrows() != n || rewards.ncols() != m || safe.len() != n {
            return domain("rewards must be n x m and the safe mask of length n");
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return domain("rewards must be finite");
        }
        let mut transitions = vec![0.0; n * m * n];
        for s in 0..n {
            for (a, k) in kernels.iter().enumerate() {
                let row = k.row(s);
                if row.iter().any(|p| *p < 0.0) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                    return domain(format!("P[{s}][{a}] is not a probability vector"));
                }
                for t in 0..n {
                    transitions[(s * m + a) * n + t] = row[t];
                }
            }
        }
        Ok(Self {
            n,
            m,
            transitions,
            rewards,
            safe,
        })
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    pub fn num_actions(&self) -> usize {
        self.m
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.m + a) * self.n + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.m + a) * self.n;
        &self.transitions[start..start + self.n]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[(s, a)]
    }

    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.rewards
    }

    pub fn is_safe(&self, s: usize) -> bool {
        self.safe[s]
    }

    pub fn safe_mask(&self) -> &[bool] {
        &self.safe
    }

    pub fn with_safe_mask(&self, safe: Vec<bool>) -> Result<Self> {
        if safe.len() != self.n {
            return domain("safe mask length must equal the number of states");
        }
        Ok(Self { safe, ..self.clone() })
    }

    pub fn with_rewards(&self, rewards: DMatrix<f64>) -> Result<Self> {
        if rewards.nrows() != self.n || rewards.ncols() != self.m {
            return domain("rewards must be n x m");
        }
        Ok(Self { rewards, ..self.clone() })
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states() != self.n || policy.num_actions() != self.m {
            return domain(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.num_states(),
                policy.num_actions(),
                self.n,
                self.m
            ));
        }
        Ok(())
    }

    /// Random dense MDP: Dirichlet(1) transition rows, rewards in [-1, 1], and
    /// each state safe with probability `safe_prob` (at least one safe state).
    pub fn random(n: usize, m: usize, safe_prob: f64, rng: &mut StreamRng) -> Self {
        let kernels = (0..m).map(|_| random_stochastic(n, rng)).collect();
        let rewards = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let mut safe: Vec<bool> = (0..n).map(|_| rng.random_bool(safe_prob)).collect();
        if !safe.iter().any(|s| *s) {
            let i = rng.random_range(0..n);
            safe[i] = true;
        }
        Self::new(kernels, rewards, safe).expect("generated rows are stochastic")
    }
}

/// Dense random stochastic matrix with Dirichlet(1) rows.
pub fn random_stochastic(n: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let mut k = DMatrix::from_fn(n, n, |_, _| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln());
    renormalize_rows(&mut k);
    k
}

/// Scales each row to sum to one.
pub(crate) fn renormalize_rows(k: &mut DMatrix<f64>) {
    for mut row in k.row_iter_mut() {
        let z: f64 = row.sum();
        row /= z;
    }
}

/// Row-stochastic kernel of the state process under a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    kernel: DMatrix<f64>,
}

impl InducedChain {
    pub fn new(kernel: DMatrix<f64>) -> Result<Self> {
        if kernel.nrows() != kernel.ncols() || kernel.nrows() == 0 {
            return domain("chain kernel must be square and nonempty");
        }
        for (s, row) in kernel.row_iter().enumerate() {
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return domain(format!("row {s} of the chain is not a probability vector"));
            }
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn num_states(&self) -> usize {
        self.kernel.nrows()
    }

    /// Distribution of `s_t` given `s_0 = z`.
    pub fn distribution_after(&self, z: usize, t: usize) -> Vec<f64> {
        let n = self.num_states();
        let mut p = vec![0.0; n];
        p[z] = 1.0;
        for _ in 0..t {
            p = self.push_forward(&p);
        }
        p
    }

    pub(crate) fn push_forward(&self, p: &[f64]) -> Vec<f64> {
        let n = self.num_states();
        let mut out = vec![0.0; n];
        for (i, pi) in p.iter().enumerate() {
            if *pi != 0.0 {
                for j in 0..n {
                    out[j] += pi * self.kernel[(i, j)];
                }
            }
        }
        out
    }
}

/// `P_pi[z][s] = sum_a pi(a | z) P[z][a][s]`.
pub fn induced_chain(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<InducedChain> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states();
    let mut k = DMatrix::zeros(n, n);
    for z in 0..n {
        for (a, pa) in policy.probs(z).into_iter().enumerate() {
            for (s, p) in mdp.row(z, a).iter().enumerate() {
                k[(z, s)] += pa * p;
            }
        }
    }
    InducedChain::new(k)
}

/// A [`TabularMdp`] behind the [`Environment`] contract. States and actions
/// are carried as their index in a one-element vector.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    initial: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, initial: usize) -> Result<Self> {
        if initial >= mdp.num_states() {
            return domain("initial state out of range");
        }
        Ok(Self { mdp, initial })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }
}

impl Environment for TabularEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> StateVec {
        StateVec::from_index(self.initial)
    }

    fn reward(&self, s: &StateVec, a: &ActionVec) -> f64 {
        self.mdp.reward(s.index(), a.index())
    }

    fn is_safe(&self, s: &StateVec) -> bool {
        self.mdp.is_safe(s.index())
    }

    fn step(&self, s: &StateVec, a: &ActionVec, rng: &mut StreamRng) -> Result<StepOutcome> {
        let (si, ai) = (s.index(), a.index());
        if si >= self.mdp.num_states() || ai >= self.mdp.num_actions() {
            return domain(format!("(state {si}, action {ai}) out of range"));
        }
        let u: f64 = rng.random();
        let row = self.mdp.row(si, ai);
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (t, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = t;
                break;
            }
        }
        Ok(StepOutcome {
            next_state: StateVec::from_index(next),
            reward: self.mdp.reward(si, ai),
            safe: self.mdp.is_safe(next),
        })
    }
}
