//! Randomized verification suites over generated tabular instances.
//!
//! Every trial draws its instance from its own child stream of the suite seed,
//! so a trial's outcome depends only on `(seed, trial)` and trials can run in
//! any order. Reports are merged by trial id.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;

use super::{
    d_field, induced_chain, lemma_check, metropolis_chain, mixing_time, occupation_measure,
    occupation_series, prop2_threshold, prop3_threshold, spectral_info, theorem1_check,
    tv_distance, value_functions, InducedChain, TabularEnv, TabularMdp,
};
use crate::error::{domain, Error, Result};
use crate::learner::{estimate_with_horizons, rollout, DualVariable, NoSink};
use crate::mdp::{sample_geometric, ActionVec, Discount, StateVec};
use crate::par::Execution;
use crate::policy::{Params, TabularPolicy};
use crate::rng::{Purpose, RngStream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Occupation,
    Gradients,
    Theorem1,
    Lemma,
    Prop2,
    Prop3,
    Estimators,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Occupation,
        Suite::Gradients,
        Suite::Theorem1,
        Suite::Lemma,
        Suite::Prop2,
        Suite::Prop3,
        Suite::Estimators,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Occupation => "occupation",
            Suite::Gradients => "gradients",
            Suite::Theorem1 => "theorem1",
            Suite::Lemma => "lemma",
            Suite::Prop2 => "prop2",
            Suite::Prop3 => "prop3",
            Suite::Estimators => "estimators",
        }
    }

    /// Trial count used when none is given.
    pub fn default_trials(self) -> usize {
        match self {
            Suite::Occupation | Suite::Gradients | Suite::Prop2 => 100,
            Suite::Theorem1 => 500,
            Suite::Lemma => 1000,
            Suite::Prop3 => 200,
            Suite::Estimators => 1,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown suite `{s}`")))
    }
}

/// One trial's quantities and verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub quantities: Vec<(&'static str, f64)>,
    pub pass: bool,
    /// Margin by which the checked inequality holds; negative on failure.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub records: Vec<TrialRecord>,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| !r.pass).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    /// Smallest slack over all trials, `+inf` for an empty report.
    pub fn worst_slack(&self) -> f64 {
        self.records.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
    }

    /// Line-oriented CSV: `suite,trial,pass,slack,quantities`, the last
    /// column holding `name=value` pairs separated by `;`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["suite", "trial", "pass", "slack", "quantities"])?;
        for r in &self.records {
            let q = r
                .quantities
                .iter()
                .map(|(k, v)| format!("{k}={v:?}"))
                .collect::<Vec<_>>()
                .join(";");
            out.write_record([
                self.suite.name().to_string(),
                r.trial.to_string(),
                r.pass.to_string(),
                format!("{:?}", r.slack),
                q,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    /// Tolerances for the implication suites.
    pub epsilons: Vec<f64>,
    /// Monte Carlo samples per check in the estimator suite.
    pub samples: usize,
    pub execution: Execution,
}

impl SuiteOptions {
    pub fn for_suite(suite: Suite, seed: u64) -> Self {
        Self {
            trials: suite.default_trials(),
            seed,
            epsilons: match suite {
                Suite::Prop3 => vec![0.3, 0.5],
                _ => vec![0.5],
            },
            samples: 100_000,
            execution: Execution::Parallel,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport> {
    if matches!(suite, Suite::Prop2) {
        for &e in &opts.epsilons {
            if !(e > 0.25) {
                return domain(format!("prop2 needs epsilon > 1/4, got {e}"));
            }
        }
    }
    if matches!(suite, Suite::Prop3) && opts.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return domain("prop3 needs epsilon in (0, 1]");
    }
    let root = RngStream::new(opts.seed);
    let trial = |i: usize| -> Result<TrialRecord> {
        let mut rng = root.child(i as u64).substream(0, Purpose::Aux);
        let mut rec = match suite {
            Suite::Occupation => occupation_trial(&mut rng)?,
            Suite::Gradients => gradient_trial(&mut rng)?,
            Suite::Theorem1 => theorem1_trial(i, &mut rng)?,
            Suite::Lemma => lemma_trial(&mut rng)?,
            Suite::Prop2 => implication_trial(Bound::Mixing, &opts.epsilons, &mut rng)?,
            Suite::Prop3 => implication_trial(Bound::Spectral, &opts.epsilons, &mut rng)?,
            Suite::Estimators => {
                estimator_trial(&root.child(i as u64), opts.samples, opts.execution)?
            }
        };
        rec.trial = i;
        Ok(rec)
    };
    let records = opts
        .execution
        .map(opts.trials, trial)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport { suite, records })
}

fn record(quantities: Vec<(&'static str, f64)>, slack: f64) -> TrialRecord {
    TrialRecord {
        trial: 0,
        quantities,
        pass: slack >= 0.0,
        slack,
    }
}

fn random_policy(n: usize, m: usize, scale: f64, rng: &mut StreamRng) -> TabularPolicy {
    TabularPolicy::new(DMatrix::from_fn(n, m, |_, _| rng.random_range(-scale..scale)))
        .expect("finite logits")
}

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.95];

/// Closed-form occupation measures against the series truncated at 10^4
/// terms, every start state, each discount in {0.5, 0.9, 0.95}.
fn occupation_trial(rng: &mut StreamRng) -> Result<TrialRecord> {
    let n = rng.random_range(2..=10);
    let chain = InducedChain::new(super::random_stochastic(n, rng))?;
    let mut worst = 0.0f64;
    for g in GAMMAS {
        let gamma = Discount::new(g)?;
        for z in 0..n {
            let a = occupation_measure(&chain, z, gamma)?;
            let b = occupation_series(&chain, z, gamma, 10_000)?;
            for (x, y) in a.probs.iter().zip(&b.probs) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(record(vec![("n", n as f64), ("max_abs_diff", worst)], 1e-8 - worst))
}

/// Central-difference gradient of `V_z` with respect to the logits.
pub fn finite_difference_value_grad(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    z: usize,
    gamma: Discount,
    lambda: f64,
    h: f64,
) -> Result<Params> {
    let base = policy.logits().clone();
    let mut grad = DMatrix::zeros(base.nrows(), base.ncols());
    for i in 0..base.nrows() {
        for j in 0..base.ncols() {
            let mut up = base.clone();
            up[(i, j)] += h;
            let mut dn = base.clone();
            dn[(i, j)] -= h;
            let vu = value_functions(mdp, &TabularPolicy::new(up)?, gamma, lambda)?.v[z];
            let vd = value_functions(mdp, &TabularPolicy::new(dn)?, gamma, lambda)?.v[z];
            grad[(i, j)] = (vu - vd) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// `sum_s D(s) rho_z(s)` against `(1 - gamma)` times the finite-difference
/// gradient of `V_z`, relative tolerance 1e-4.
fn gradient_trial(rng: &mut StreamRng) -> Result<TrialRecord> {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(2..=3);
    let mdp = TabularMdp::random(n, m, 0.6, rng);
    let policy = random_policy(n, m, 1.5, rng);
    let g = GAMMAS[rng.random_range(0..GAMMAS.len())];
    let lambda = [0.0, 1.0, 20.0][rng.random_range(0..3)];
    let z = rng.random_range(0..n);
    let gamma = Discount::new(g)?;
    let chain = induced_chain(&mdp, &policy)?;
    let rho = occupation_measure(&chain, z, gamma)?;
    let exact = d_field(&mdp, &policy, gamma, lambda)?.weighted_sum(&rho.probs);
    let fd = finite_difference_value_grad(&mdp, &policy, z, gamma, lambda, 1e-5)? * (1.0 - g);
    let rel = (&exact - &fd).norm() / fd.norm().max(f64::MIN_POSITIVE);
    Ok(record(
        vec![
            ("n", n as f64),
            ("m", m as f64),
            ("gamma", g),
            ("lambda", lambda),
            ("grad_norm", fd.norm()),
            ("rel_err", rel),
        ],
        1e-4 - rel,
    ))
}

/// Both inner-product bounds on a random instance with `n <= 6`, `m <= 3`,
/// `lambda` cycling through {0, 1, 20}.
fn theorem1_trial(i: usize, rng: &mut StreamRng) -> Result<TrialRecord> {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(1..=3);
    let mdp = TabularMdp::random(n, m, 0.6, rng);
    let policy = random_policy(n, m, 2.0, rng);
    let g = rng.random_range(0.3..0.99);
    let lambda = [0.0, 1.0, 20.0][i % 3];
    let (z, zp) = (rng.random_range(0..n), rng.random_range(0..n));
    let rep = theorem1_check(&mdp, &policy, z, zp, Discount::new(g)?, lambda)?;
    let slack = rep.worst_slack() + super::checks::INEQUALITY_SLACK;
    Ok(TrialRecord {
        pass: rep.holds,
        ..record(
            vec![
                ("n", n as f64),
                ("m", m as f64),
                ("gamma", g),
                ("lambda", lambda),
                ("tv", rep.tv),
                ("d_norm", rep.d_norm),
                ("lhs_grad", rep.lhs_grad),
                ("rhs_grad", rep.rhs_grad),
                ("lhs_u", rep.lhs_u),
                ("rhs_u", rep.rhs_u),
            ],
            slack,
        )
    })
}

/// Random vector fields `R` against occupation measures of a random chain.
fn lemma_trial(rng: &mut StreamRng) -> Result<TrialRecord> {
    let n = rng.random_range(2..=8);
    let d = rng.random_range(1..=4);
    let r: Vec<Params> = (0..n)
        .map(|_| DMatrix::from_fn(d, 1, |_, _| rng.random_range(-5.0..5.0)))
        .collect();
    let chain = InducedChain::new(super::random_stochastic(n, rng))?;
    let gamma = Discount::new(rng.random_range(0.1..0.99))?;
    let z = rng.random_range(0..n);
    let zp = rng.random_range(0..n);
    let a = occupation_measure(&chain, z, gamma)?;
    let b = occupation_measure(&chain, zp, gamma)?;
    let rep = lemma_check(&r, &a.probs, &b.probs)?;
    Ok(TrialRecord {
        pass: rep.holds,
        ..record(
            vec![
                ("n", n as f64),
                ("d", d as f64),
                ("q", rep.q),
                ("h", rep.h),
                ("r_norm", rep.r_norm),
                ("tv", rep.tv),
                ("bound", rep.bound),
            ],
            rep.slack + super::checks::INEQUALITY_SLACK,
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// Discount from the measured mixing time.
    Mixing,
    /// Discount from the second eigenvalue and the smallest stationary mass.
    Spectral,
}

/// Sparse random ergodic chain: random support with a self-loop and a cycle
/// edge in every row, Dirichlet weights on the support.
pub fn random_ergodic_chain(n: usize, rng: &mut StreamRng) -> Result<InducedChain> {
    let density = rng.random_range(0.1..0.9);
    let mut k = DMatrix::from_fn(n, n, |i, j| {
        let forced = i == j || j == (i + 1) % n;
        if forced || rng.random_bool(density) {
            -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()
        } else {
            0.0
        }
    });
    super::renormalize_rows(&mut k);
    InducedChain::new(k)
}

/// Metropolis chain on `n` states with a random target and a random
/// symmetric proposal.
pub fn random_reversible_chain(n: usize, rng: &mut StreamRng) -> Result<InducedChain> {
    let target: Vec<f64> = {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    };
    let mut prop = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = rng.random_range(0.0..1.0);
            prop[(i, j)] = w;
            prop[(j, i)] = w;
        }
    }
    let max_row = prop.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    prop /= max_row * rng.random_range(1.0..2.0);
    metropolis_chain(&target, &prop)
}

/// Largest total variation between occupation measures over all start pairs.
pub fn max_pairwise_tv(chain: &InducedChain, gamma: Discount) -> Result<f64> {
    let n = chain.num_states();
    let rhos = (0..n)
        .map(|z| occupation_measure(chain, z, gamma))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for a in &rhos {
        for b in &rhos {
            worst = worst.max(tv_distance(&a.probs, &b.probs)?);
        }
    }
    Ok(worst)
}

/// Generates a chain, sets the discount to the bound's threshold for each
/// epsilon and checks `max TV(rho_z - rho_z') <= epsilon + 1e-9`.
fn implication_trial(bound: Bound, epsilons: &[f64], rng: &mut StreamRng) -> Result<TrialRecord> {
    let mut quantities = Vec::new();
    let mut slack = f64::INFINITY;
    match bound {
        Bound::Mixing => {
            let n = rng.random_range(2..=10);
            let chain = random_ergodic_chain(n, rng)?;
            let tau = mixing_time(std::slice::from_ref(&chain))?;
            quantities.push(("n", n as f64));
            quantities.push(("tau", tau as f64));
            for &eps in epsilons {
                let g = prop2_threshold(tau, eps)?;
                let tv = max_pairwise_tv(&chain, Discount::new(g)?)?;
                quantities.push(("gamma", g));
                quantities.push(("max_tv", tv));
                slack = slack.min(eps + 1e-9 - tv);
            }
        }
        Bound::Spectral => {
            let n = rng.random_range(4..=8);
            let chain = random_reversible_chain(n, rng)?;
            let info = spectral_info(&chain)?;
            // Structural invariants of the decomposition.
            let mut pt = DMatrix::identity(n, n);
            let mut recon = 0.0f64;
            for t in 0..=20 {
                recon = recon.max((info.reconstruct(t) - &pt).amax());
                pt *= chain.kernel();
            }
            let mut ortho = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    ortho = ortho.max((info.inner(i, j) - want).abs());
                }
            }
            quantities.extend([
                ("n", n as f64),
                ("lambda_2", info.lambda_star),
                ("p_min", info.p_min),
                ("reconstruction_err", recon),
                ("orthonormality_err", ortho),
            ]);
            slack = slack.min(1e-8 - recon).min(1e-8 - ortho);
            // A negative second eigenvalue is bounded above by zero.
            let lambda_star = info.lambda_star.max(0.0);
            for &eps in epsilons {
                let g = prop3_threshold(lambda_star, info.p_min, eps)?;
                let tv = max_pairwise_tv(&chain, Discount::new(g)?)?;
                quantities.push(("gamma", g));
                quantities.push(("max_tv", tv));
                slack = slack.min(eps + 1e-9 - tv);
            }
        }
    }
    Ok(record(quantities, slack))
}

/// The fixed instance used by the estimator suite: 5 states, 2 actions.
pub fn estimator_fixture() -> (TabularMdp, TabularPolicy) {
    let mut rng = RngStream::new(0x5AFE).substream(0, Purpose::Aux);
    let mdp = TabularMdp::random(5, 2, 0.6, &mut rng);
    let policy = random_policy(5, 2, 1.0, &mut rng);
    (mdp, policy)
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sq += x * x;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sq: self.sq + o.sq,
        }
    }

    fn estimate(self) -> MeanEstimate {
        let mean = self.sum / self.n;
        let var = (self.sq / self.n - mean * mean).max(0.0) * self.n / (self.n - 1.0);
        MeanEstimate {
            mean,
            se: (var / self.n).sqrt(),
        }
    }
}

const ESTIMATOR_CHUNKS: usize = 64;

/// Mean of `u_hat` over `samples` geometric-horizon rollouts starting at `s`,
/// generated through the learner's own estimation path.
pub fn sample_u_hat(
    env: &TabularEnv,
    policy: &TabularPolicy,
    s: usize,
    gamma: Discount,
    samples: usize,
    streams: &RngStream,
    exec: Execution,
) -> Result<MeanEstimate> {
    let chunk = |c: usize| -> Result<Moments> {
        let sub = streams.child(c as u64);
        let mut hor = sub.substream(0, Purpose::Horizon);
        let mut act = sub.substream(0, Purpose::Action);
        let mut m = Moments::default();
        let start = StateVec::from_index(s);
        for _ in 0..chunk_len(samples, c) {
            let t_q = sample_geometric(gamma, &mut hor);
            let (est, _, _) = estimate_with_horizons(
                env,
                policy,
                &start,
                DualVariable::new(0.0)?,
                0,
                t_q,
                &mut act,
                &mut NoSink,
            )?;
            m.push(est.u_hat);
        }
        Ok(m)
    };
    merge_chunks(exec.map(ESTIMATOR_CHUNKS, chunk))
}

/// Mean of `q_hat` over `samples` rollouts from the pair `(s, a)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_q_hat(
    env: &TabularEnv,
    policy: &TabularPolicy,
    s: usize,
    a: usize,
    gamma: Discount,
    lambda: DualVariable,
    samples: usize,
    streams: &RngStream,
    exec: Execution,
) -> Result<MeanEstimate> {
    let chunk = |c: usize| -> Result<Moments> {
        let sub = streams.child(c as u64);
        let mut hor = sub.substream(1, Purpose::Horizon);
        let mut act = sub.substream(1, Purpose::Action);
        let mut m = Moments::default();
        let (start, action) = (StateVec::from_index(s), ActionVec::from_index(a));
        for _ in 0..chunk_len(samples, c) {
            let t_q = sample_geometric(gamma, &mut hor);
            let ro = rollout(env, policy, &start, &action, t_q, lambda, &mut act, &mut NoSink)?;
            m.push(ro.q_hat);
        }
        Ok(m)
    };
    merge_chunks(exec.map(ESTIMATOR_CHUNKS, chunk))
}

fn chunk_len(samples: usize, c: usize) -> usize {
    samples / ESTIMATOR_CHUNKS + usize::from(c < samples % ESTIMATOR_CHUNKS)
}

fn merge_chunks(chunks: Vec<Result<Moments>>) -> Result<MeanEstimate> {
    let total = chunks
        .into_iter()
        .try_fold(Moments::default(), |acc, m| m.map(|m| acc.merge(m)))?;
    if total.n < 2.0 {
        return domain("need at least two samples");
    }
    Ok(total.estimate())
}

/// `|mean u_hat - U_s| <= 3 SE` and `|mean q_hat - Q(s,a)| <= 3 SE` on the
/// fixture, for a start state and action picked by the trial stream.
fn estimator_trial(streams: &RngStream, samples: usize, exec: Execution) -> Result<TrialRecord> {
    let (mdp, policy) = estimator_fixture();
    let gamma = Discount::new(0.9)?;
    let lambda = DualVariable::new(2.0)?;
    let mut pick = streams.substream(0, Purpose::Aux);
    let s = pick.random_range(0..mdp.num_states());
    let a = pick.random_range(0..mdp.num_actions());
    let exact = value_functions(&mdp, &policy, gamma, lambda.value())?;
    let env = TabularEnv::new(mdp, s)?;
    let u = sample_u_hat(&env, &policy, s, gamma, samples, streams, exec)?;
    let q = sample_q_hat(&env, &policy, s, a, gamma, lambda, samples, streams, exec)?;
    let u_slack = 3.0 * u.se - (u.mean - exact.u[s]).abs();
    let q_slack = 3.0 * q.se - (q.mean - exact.q[(s, a)]).abs();
    Ok(record(
        vec![
            ("state", s as f64),
            ("action", a as f64),
            ("u_exact", exact.u[s]),
            ("u_mean", u.mean),
            ("u_se", u.se),
            ("q_exact", exact.q[(s, a)]),
            ("q_mean", q.mean),
            ("q_se", q.se),
        ],
        u_slack.min(q_slack),
    ))
}
