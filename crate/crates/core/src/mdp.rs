//! Environment contract, trajectories and the geometric horizon sampler.

use rand_distr::{Distribution, Geometric};

use crate::error::{domain, Result};
use crate::policy::StochasticPolicy;
use crate::rng::StreamRng;

/// A point of the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec(pub Vec<f64>);

/// An action drawn by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVec(pub Vec<f64>);

impl StateVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Index of a tabular state stored in the first coordinate.
    pub fn index(&self) -> usize {
        self.0[0] as usize
    }

    pub fn from_index(i: usize) -> Self {
        StateVec(vec![i as f64])
    }
}

impl ActionVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn index(&self) -> usize {
        self.0[0] as usize
    }

    pub fn from_index(i: usize) -> Self {
        ActionVec(vec![i as f64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateVec,
    /// `r(s, a)` for the state the step started from.
    pub reward: f64,
    /// Safe-set membership of `next_state`.
    pub safe: bool,
}

/// A Markovian environment. `step` may consume randomness only from the
/// generator it is handed.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn initial_state(&self) -> StateVec;
    fn reward(&self, s: &StateVec, a: &ActionVec) -> f64;
    fn is_safe(&self, s: &StateVec) -> bool;
    fn step(&self, s: &StateVec, a: &ActionVec, rng: &mut StreamRng) -> Result<StepOutcome>;
}

/// Discount factor, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discount(f64);

impl Discount {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(Discount(gamma))
        } else {
            domain(format!("discount must lie in (0,1), got {gamma}"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 / (1 - gamma)`, the discounted length of an infinite horizon.
    pub fn horizon_mass(self) -> f64 {
        1.0 / (1.0 - self.0)
    }
}

/// Draws `T` with `P(T = t) = (1 - gamma) gamma^t` on `t >= 0`.
///
/// Then `P(T >= t) = gamma^t`, so an undiscounted sum truncated at `T` is an
/// unbiased estimate of the discounted sum, and the state reached after `T`
/// steps is a draw from the discounted occupation measure.
pub fn sample_geometric(gamma: Discount, rng: &mut StreamRng) -> u64 {
    // Geometric(p) counts failures before the first success: P(k) = (1-p)^k p.
    let law = Geometric::new(1.0 - gamma.value()).expect("success probability in (0,1)");
    law.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub state: StateVec,
    pub action: ActionVec,
    pub reward: f64,
    /// Safety of `state`.
    pub safe: bool,
    pub next_state: StateVec,
}

/// Time-contiguous transitions plus the state they end in.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TransitionRecord>,
    pub final_state: StateVec,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Structural check: the first record starts at `start`, each record's
    /// successor starts at its `next_state`, and the last one ends at
    /// `final_state`.
    pub fn is_contiguous(&self, start: &StateVec) -> bool {
        let mut expect = start;
        for rec in &self.records {
            if &rec.state != expect {
                return false;
            }
            expect = &rec.next_state;
        }
        *expect == self.final_state
    }
}

/// Runs `steps` transitions from `start`, drawing actions from `policy`.
/// The returned final state is the new system state; nothing is reset.
pub fn advance<E, P>(
    env: &E,
    policy: &P,
    start: &StateVec,
    steps: u64,
    rng: &mut StreamRng,
) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    if start.dim() != env.state_dim() || !start.is_finite() {
        return domain(format!(
            "start state must be finite with dimension {}",
            env.state_dim()
        ));
    }
    let mut records = Vec::with_capacity(steps as usize);
    let mut s = start.clone();
    for _ in 0..steps {
        let a = policy.sample_action(&s, rng)?;
        let out = env.step(&s, &a, rng)?;
        records.push(TransitionRecord {
            safe: env.is_safe(&s),
            state: s,
            action: a,
            reward: out.reward,
            next_state: out.next_state.clone(),
        });
        s = out.next_state;
    }
    Ok(Trajectory {
        records,
        final_state: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::{NavConfig, NavEnv};
    use crate::policy::{GaussianRbfPolicy, Params, RbfBasis};
    use crate::rng::{Purpose, RngStream};

    fn draws(gamma: f64, n: usize, seed: u64) -> Vec<u64> {
        let g = Discount::new(gamma).unwrap();
        let mut rng = RngStream::new(seed).substream(0, Purpose::Horizon);
        (0..n).map(|_| sample_geometric(g, &mut rng)).collect()
    }

    #[test]
    fn discount_domain() {
        for bad in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(Discount::new(bad).is_err());
        }
        assert_eq!(Discount::new(0.95).unwrap().horizon_mass(), 1.0 / (1.0 - 0.95));
    }

    /// Chi-square 0.999 quantile with 31 degrees of freedom.
    const CHI2_31_999: f64 = 61.098306081058126;

    #[test]
    fn geometric_law_goodness_of_fit() {
        let n = 100_000;
        for (i, gamma) in [0.3, 0.5, 0.9, 0.95].into_iter().enumerate() {
            let mut counts = [0usize; 32];
            for t in draws(gamma, n, i as u64) {
                counts[(t as usize).min(31)] += 1;
            }
            let mut stat = 0.0;
            for (t, &c) in counts.iter().enumerate() {
                let p = if t < 31 {
                    (1.0 - gamma) * gamma.powi(t as i32)
                } else {
                    gamma.powi(31)
                };
                let e = p * n as f64;
                stat += (c as f64 - e).powi(2) / e;
            }
            assert!(stat < CHI2_31_999, "gamma {gamma}: chi-square {stat}");
        }
    }

    #[test]
    fn geometric_mean_at_095() {
        let d = draws(0.95, 100_000, 42);
        let mean = d.iter().sum::<u64>() as f64 / d.len() as f64;
        // Var = gamma / (1 - gamma)^2 = 380.
        let se = (380.0f64 / d.len() as f64).sqrt();
        assert!((mean - 19.0).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn geometric_head_at_05() {
        let n = 100_000.0;
        let d = draws(0.5, n as usize, 5);
        for (t, p) in [(0u64, 0.5), (1, 0.25)] {
            let freq = d.iter().filter(|x| **x == t).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() <= 3.0 * se, "P(T={t}) = {freq}");
        }
    }

    #[test]
    fn geometric_collapses_as_gamma_vanishes() {
        assert!(draws(1e-12, 10_000, 1).iter().all(|t| *t == 0));
    }

    /// `s' = s` whatever the action.
    struct Frozen;

    impl Environment for Frozen {
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn initial_state(&self) -> StateVec {
            StateVec(vec![0.5, 0.5])
        }
        fn reward(&self, _: &StateVec, _: &ActionVec) -> f64 {
            1.0
        }
        fn is_safe(&self, _: &StateVec) -> bool {
            true
        }
        fn step(&self, s: &StateVec, a: &ActionVec, _: &mut StreamRng) -> Result<StepOutcome> {
            Ok(StepOutcome {
                next_state: s.clone(),
                reward: self.reward(s, a),
                safe: true,
            })
        }
    }

    fn noisy_policy() -> GaussianRbfPolicy {
        let basis = RbfBasis::grid(0.0, 10.0, 2.5, 0.5).unwrap();
        let theta = Params::from_fn(basis.len(), 2, |i, j| ((i * 7 + j) % 5) as f64 - 2.0);
        GaussianRbfPolicy::with_theta(basis, vec![0.5, 0.5], theta).unwrap()
    }

    #[test]
    fn zero_steps_is_the_identity() {
        let env = NavEnv::new(NavConfig::default()).unwrap();
        let mut rng = RngStream::new(0).substream(0, Purpose::Advance);
        let start = env.initial_state();
        let tr = advance(&env, &noisy_policy(), &start, 0, &mut rng).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.final_state, start);
        assert!(tr.is_contiguous(&start));
    }

    #[test]
    fn fixed_point_dynamics_stay_put() {
        let mut rng = RngStream::new(0).substream(0, Purpose::Advance);
        let start = Frozen.initial_state();
        let tr = advance(&Frozen, &noisy_policy(), &start, 5, &mut rng).unwrap();
        assert_eq!(tr.len(), 5);
        assert!(tr.records.iter().all(|r| r.state == start));
    }

    /// Always returns the zero action.
    struct Idle;

    impl StochasticPolicy for Idle {
        fn sample_action(&self, _: &StateVec, _: &mut StreamRng) -> Result<ActionVec> {
            Ok(ActionVec(vec![0.0, 0.0]))
        }
        fn log_prob_grad(&self, _: &StateVec, _: &ActionVec) -> Result<Params> {
            Ok(Params::zeros(1, 1))
        }
        fn params(&self) -> &Params {
            unimplemented!()
        }
        fn params_mut(&mut self) -> &mut Params {
            unimplemented!()
        }
    }

    #[test]
    fn idle_navigation_keeps_the_start_reward() {
        let env = NavEnv::new(NavConfig::default()).unwrap();
        let mut rng = RngStream::new(0).substream(0, Purpose::Advance);
        let start = env.initial_state();
        let tr = advance(&env, &Idle, &start, 10, &mut rng).unwrap();
        // |(1, 8.5) - (9, 1.5)|^2 = 64 + 49.
        assert!(tr.records.iter().all(|r| r.state == start && r.reward == -113.0));
    }

    #[test]
    fn advance_is_deterministic_and_contiguous() {
        let env = NavEnv::new(NavConfig::default()).unwrap();
        let start = env.initial_state();
        let run = |seed| {
            let mut rng = RngStream::new(seed).substream(3, Purpose::Advance);
            advance(&env, &noisy_policy(), &start, 200, &mut rng).unwrap()
        };
        let (a, b) = (run(8), run(8));
        assert_eq!(a, b);
        assert!(a.is_contiguous(&start));
        assert_ne!(a, run(9));
    }

    #[test]
    fn rejects_bad_start_states() {
        let env = NavEnv::new(NavConfig::default()).unwrap();
        let mut rng = RngStream::new(0).substream(0, Purpose::Advance);
        assert!(advance(&env, &Idle, &StateVec(vec![1.0]), 1, &mut rng).is_err());
        assert!(advance(&env, &Idle, &StateVec(vec![f64::NAN, 1.0]), 1, &mut rng).is_err());
    }
}
