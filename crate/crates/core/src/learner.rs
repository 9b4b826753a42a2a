//! Primal-dual learning without resets.
//!
//! Each iteration advances the live system a geometric number of steps,
//! samples an action there, and follows it with a second geometric rollout
//! whose undiscounted sums are unbiased estimates of the shaped action value
//! and of the discounted safe-visit count. The policy takes an ascent step on
//! the score-function gradient and the multiplier a projected descent step on
//! the constraint residual.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mdp::{sample_geometric, ActionVec, Discount, Environment, StateVec};
use crate::policy::{Params, StochasticPolicy};
use crate::rng::{Purpose, RngStream, StreamRng};
use crate::safety::SafetyLedger;

/// Lagrange multiplier of the safety constraint; never negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DualVariable(f64);

impl DualVariable {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda >= 0.0 && lambda.is_finite() {
            Ok(Self(lambda))
        } else {
            domain(format!("multiplier must be finite and nonnegative, got {lambda}"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `r + lambda 1(safe)`.
pub fn shaped_reward(r: f64, safe: bool, lambda: DualVariable) -> f64 {
    if safe {
        r + lambda.0
    } else {
        r
    }
}

/// Constraint level that certifies `(1 - delta)`-safety up to `horizon`:
/// `(1 - delta [1 - gamma^T (1 - gamma)]) / (1 - gamma)`.
pub fn compute_threshold(delta: f64, horizon: u32, gamma: Discount) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    if horizon == 0 {
        return domain("safety horizon must be positive");
    }
    let g = gamma.value();
    Ok((1.0 - delta * (1.0 - g.powi(horizon as i32) * (1.0 - g))) / (1.0 - g))
}

/// Where the constraint level comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetySpec {
    /// Derived from a safety level `1 - delta` over `horizon` steps.
    Derived { delta: f64, horizon: u32, c: f64 },
    Explicit { c: f64 },
}

impl SafetySpec {
    pub fn derived(delta: f64, horizon: u32, gamma: Discount) -> Result<Self> {
        let c = compute_threshold(delta, horizon, gamma)?;
        Ok(SafetySpec::Derived { delta, horizon, c })
    }

    pub fn explicit(c: f64, gamma: Discount) -> Result<Self> {
        if !c.is_finite() || c > gamma.horizon_mass() {
            return domain(format!(
                "threshold must be finite and at most 1/(1-gamma) = {}",
                gamma.horizon_mass()
            ));
        }
        Ok(SafetySpec::Explicit { c })
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            SafetySpec::Derived { c, .. } | SafetySpec::Explicit { c } => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub eta_theta: f64,
    pub eta_lambda: f64,
    pub gamma: Discount,
    pub lambda_init: DualVariable,
    pub safety: SafetySpec,
    /// Subtract a running mean of past `q_hat` from each new one.
    pub baseline: bool,
    /// Independent `(s_k, a_k)` samples averaged per iteration.
    pub batch_size: usize,
}

impl LearnerConfig {
    /// Defaults of the navigation experiment.
    pub fn navigation() -> Self {
        let gamma = Discount::new(0.95).expect("valid discount");
        LearnerConfig {
            eta_theta: 0.01,
            eta_lambda: 0.005,
            gamma,
            lambda_init: DualVariable(20.0),
            safety: SafetySpec::derived(0.01, 100, gamma).expect("valid safety level"),
            baseline: false,
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return bad("learner.eta_theta", format!("must be positive, got {}", self.eta_theta));
        }
        if !(self.eta_lambda > 0.0 && self.eta_lambda.is_finite()) {
            return bad("learner.eta_lambda", format!("must be positive, got {}", self.eta_lambda));
        }
        if self.batch_size == 0 {
            return bad("learner.batch_size", "must be at least 1".into());
        }
        Ok(())
    }
}

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    /// Stop after the iteration during which the step count reaches this value.
    Steps(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One unbroken trajectory.
    Continuing,
    /// The system is put back at its initial state before every iteration.
    Episodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub lambda: DualVariable,
    pub system_state: StateVec,
    pub iteration: u64,
    pub env_steps: u64,
    /// Running mean of `q_hat`, used only with a baseline.
    pub q_mean: f64,
}

impl LearnerState {
    pub fn initial<E: Environment + ?Sized>(env: &E, config: &LearnerConfig) -> Self {
        Self {
            lambda: config.lambda_init,
            system_state: env.initial_state(),
            iteration: 0,
            env_steps: 0,
            q_mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationEstimates {
    pub q_hat: f64,
    pub u_hat: f64,
    /// `q_hat` times the score at `(state, action)`.
    pub grad: Params,
    pub state: StateVec,
    pub action: ActionVec,
}

/// Receives every state the system visits, in order.
pub trait StepSink {
    fn visit(&mut self, state: &StateVec, safe: bool) -> Result<()>;
}

/// Discards everything.
pub struct NoSink;

impl StepSink for NoSink {
    fn visit(&mut self, _: &StateVec, _: bool) -> Result<()> {
        Ok(())
    }
}

/// Runtime-safety ledger plus an optional copy of every visited state.
#[derive(Debug, Clone, Default)]
pub struct StepLog {
    pub ledger: SafetyLedger,
    /// `(state, safe)` per visited state; filled only when enabled.
    pub states: Option<Vec<(StateVec, bool)>>,
}

impl StepLog {
    pub fn new(keep_states: bool) -> Self {
        Self {
            ledger: SafetyLedger::new(),
            states: keep_states.then(Vec::new),
        }
    }
}

impl StepSink for StepLog {
    fn visit(&mut self, state: &StateVec, safe: bool) -> Result<()> {
        let t = self.ledger.total_steps();
        self.ledger.record(t, safe)?;
        if let Some(states) = self.states.as_mut() {
            states.push((state.clone(), safe));
        }
        Ok(())
    }
}

/// Sums collected along one estimator rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub q_hat: f64,
    pub u_hat: f64,
    pub final_state: StateVec,
    pub steps: u64,
}

/// Moves the system `steps` transitions under the policy, keeping only the
/// end state.
pub fn walk<E, P, S>(
    env: &E,
    policy: &P,
    start: &StateVec,
    steps: u64,
    rng: &mut StreamRng,
    sink: &mut S,
) -> Result<StateVec>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
    S: StepSink + ?Sized,
{
    let mut s = start.clone();
    for _ in 0..steps {
        let a = policy.sample_action(&s, rng)?;
        let out = env.step(&s, &a, rng)?;
        sink.visit(&out.next_state, out.safe)?;
        s = out.next_state;
    }
    Ok(s)
}

/// Executes `action` at `start` and then `horizon` further policy actions,
/// summing the shaped rewards and safe indicators of the `horizon + 1`
/// visited state-action pairs, `t = 0` included.
#[allow(clippy::too_many_arguments)]
pub fn rollout<E, P, S>(
    env: &E,
    policy: &P,
    start: &StateVec,
    action: &ActionVec,
    horizon: u64,
    lambda: DualVariable,
    rng: &mut StreamRng,
    sink: &mut S,
) -> Result<Rollout>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
    S: StepSink + ?Sized,
{
    let mut s = start.clone();
    let mut a = action.clone();
    let (mut q_hat, mut u_hat) = (0.0, 0.0);
    for t in 0..=horizon {
        let safe = env.is_safe(&s);
        q_hat += shaped_reward(env.reward(&s, &a), safe, lambda);
        if safe {
            u_hat += 1.0;
        }
        let out = env.step(&s, &a, rng)?;
        sink.visit(&out.next_state, out.safe)?;
        s = out.next_state;
        if t < horizon {
            a = policy.sample_action(&s, rng)?;
        }
    }
    Ok(Rollout {
        q_hat,
        u_hat,
        final_state: s,
        steps: horizon + 1,
    })
}

/// One estimator sample with given horizons: advance `advance_steps`, draw
/// `a_k`, roll out `rollout_steps` more. Returns the estimates, the new system
/// state and the number of transitions taken.
#[allow(clippy::too_many_arguments)]
pub fn estimate_with_horizons<E, P, S>(
    env: &E,
    policy: &P,
    state: &StateVec,
    lambda: DualVariable,
    advance_steps: u64,
    rollout_steps: u64,
    rng: &mut StreamRng,
    sink: &mut S,
) -> Result<(IterationEstimates, StateVec, u64)>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
    S: StepSink + ?Sized,
{
    let s_k = walk(env, policy, state, advance_steps, rng, sink)?;
    let a_k = policy.sample_action(&s_k, rng)?;
    let ro = rollout(env, policy, &s_k, &a_k, rollout_steps, lambda, rng, sink)?;
    let grad = policy.log_prob_grad(&s_k, &a_k)? * ro.q_hat;
    Ok((
        IterationEstimates {
            q_hat: ro.q_hat,
            u_hat: ro.u_hat,
            grad,
            state: s_k,
            action: a_k,
        },
        ro.final_state,
        advance_steps + ro.steps,
    ))
}

/// Draws both horizons from their iteration sub-streams and estimates.
pub fn estimate_iteration<E, P, S>(
    env: &E,
    policy: &P,
    state: &LearnerState,
    gamma: Discount,
    streams: &RngStream,
    sink: &mut S,
) -> Result<(IterationEstimates, StateVec, u64)>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
    S: StepSink + ?Sized,
{
    let k = state.iteration;
    let t = sample_geometric(gamma, &mut streams.substream(k, Purpose::Advance));
    let t_q = sample_geometric(gamma, &mut streams.substream(k, Purpose::Horizon));
    let mut rng = streams.substream(k, Purpose::Action);
    estimate_with_horizons(env, policy, &state.system_state, state.lambda, t, t_q, &mut rng, sink)
}

/// `theta + eta grad`.
pub fn primal_step(theta: &mut Params, grad: &Params, eta_theta: f64) -> Result<()> {
    if theta.shape() != grad.shape() {
        return domain(format!(
            "gradient shape {:?} does not match parameters {:?}",
            grad.shape(),
            theta.shape()
        ));
    }
    theta.zip_apply(grad, |t, g| *t += eta_theta * g);
    Ok(())
}

/// `max(0, lambda - eta (u_hat - c))`.
pub fn dual_step(lambda: DualVariable, u_hat: f64, c: f64, eta_lambda: f64) -> DualVariable {
    let next = lambda.0 - eta_lambda * (u_hat - c);
    DualVariable(if next > 0.0 { next } else { 0.0 })
}

/// Per-iteration telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Transitions taken so far, this iteration included.
    pub env_steps: u64,
    /// System state at the end of the iteration.
    pub state: Vec<f64>,
    /// Multiplier after this iteration's update.
    pub lambda: f64,
    pub q_hat: f64,
    pub u_hat: f64,
    pub grad_norm: f64,
    pub runtime_safety: f64,
    pub unsafe_events: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: RunLog,
    pub state: LearnerState,
    pub steps: StepLog,
}

/// One learner iteration: estimate, primal step, dual step.
fn iterate<E, P>(
    env: &E,
    policy: &mut P,
    config: &LearnerConfig,
    state: &mut LearnerState,
    streams: &RngStream,
    steps: &mut StepLog,
) -> Result<IterationRecord>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let k = state.iteration;
    let unsafe_before = steps.ledger.unsafe_events().len();
    let mut adv = streams.substream(k, Purpose::Advance);
    let mut hor = streams.substream(k, Purpose::Horizon);
    let mut act = streams.substream(k, Purpose::Action);

    let batch = config.batch_size as f64;
    let mut grad = Params::zeros(policy.params().nrows(), policy.params().ncols());
    let (mut q_sum, mut u_sum) = (0.0, 0.0);
    for _ in 0..config.batch_size {
        let t = sample_geometric(config.gamma, &mut adv);
        let t_q = sample_geometric(config.gamma, &mut hor);
        let (est, next, taken) = estimate_with_horizons(
            env,
            &*policy,
            &state.system_state,
            state.lambda,
            t,
            t_q,
            &mut act,
            steps,
        )?;
        state.system_state = next;
        state.env_steps += taken;
        if config.baseline {
            let score = policy.log_prob_grad(&est.state, &est.action)?;
            grad += score * (est.q_hat - state.q_mean);
        } else {
            grad += est.grad;
        }
        q_sum += est.q_hat;
        u_sum += est.u_hat;
    }
    grad /= batch;
    let (q_hat, u_hat) = (q_sum / batch, u_sum / batch);
    if config.baseline {
        state.q_mean += (q_hat - state.q_mean) / (k + 1) as f64;
    }

    primal_step(policy.params_mut(), &grad, config.eta_theta)?;
    state.lambda = dual_step(state.lambda, u_hat, config.safety.threshold(), config.eta_lambda);
    state.iteration += 1;

    Ok(IterationRecord {
        iteration: k,
        env_steps: state.env_steps,
        state: state.system_state.0.clone(),
        lambda: state.lambda.value(),
        q_hat,
        u_hat,
        grad_norm: grad.norm(),
        runtime_safety: steps.ledger.runtime_safety(),
        unsafe_events: (steps.ledger.unsafe_events().len() - unsafe_before) as u64,
    })
}

/// Runs the learner from `state` until `budget` is spent.
#[allow(clippy::too_many_arguments)]
pub fn run_from<E, P>(
    env: &E,
    policy: &mut P,
    config: &LearnerConfig,
    mut state: LearnerState,
    budget: Budget,
    mode: Mode,
    streams: &RngStream,
    mut steps: StepLog,
) -> Result<RunOutput>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    config.validate()?;
    if steps.ledger.total_steps() == 0 {
        let s = state.system_state.clone();
        steps.visit(&s, env.is_safe(&s))?;
    }
    let mut log = RunLog::default();
    let done = |state: &LearnerState, log: &RunLog| match budget {
        Budget::Iterations(n) => log.records.len() as u64 >= n,
        Budget::Steps(n) => state.env_steps >= n,
    };
    while !done(&state, &log) {
        if mode == Mode::Episodic && state.iteration > 0 {
            state.system_state = env.initial_state();
            let s = state.system_state.clone();
            steps.visit(&s, env.is_safe(&s))?;
        }
        log.records.push(iterate(env, policy, config, &mut state, streams, &mut steps)?);
    }
    Ok(RunOutput { log, state, steps })
}

/// The continuing-task loop: the system state threads through every
/// iteration and is never reset.
pub fn run_continuing<E, P>(
    env: &E,
    policy: &mut P,
    config: &LearnerConfig,
    budget: Budget,
    streams: &RngStream,
    keep_states: bool,
) -> Result<RunOutput>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let state = LearnerState::initial(env, config);
    run_from(env, policy, config, state, budget, Mode::Continuing, streams, StepLog::new(keep_states))
}

/// Restart baseline: identical to [`run_continuing`] except that every
/// iteration begins from the environment's initial state.
pub fn run_episodic<E, P>(
    env: &E,
    policy: &mut P,
    config: &LearnerConfig,
    budget: Budget,
    streams: &RngStream,
    keep_states: bool,
) -> Result<RunOutput>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let state = LearnerState::initial(env, config);
    run_from(env, policy, config, state, budget, Mode::Episodic, streams, StepLog::new(keep_states))
}
