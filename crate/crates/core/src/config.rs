//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! out = "runs/nav"
//!
//! [env]                # planar navigation; use [tabular] for a finite MDP
//! ts = 0.05
//! goal = [9.0, 1.5]
//! start = [1.0, 8.5]
//! obstacles = [[3.0, 7.0, 1.0], [5.5, 4.5, 1.0]]
//!
//! [policy]
//! spacing = 0.25
//! bandwidth = 0.5
//! covariance = [0.5, 0.5]
//!
//! [learner]
//! gamma = 0.95
//! eta_theta = 0.01
//! eta_lambda = 0.005
//! lambda0 = 20.0
//! delta = 0.01         # or give `c` directly
//! horizon = 100
//! steps = 2000         # or `iterations`
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Budget, DualVariable, LearnerConfig, SafetySpec};
use crate::mdp::Discount;
use crate::nav::{NavConfig, NavEnv};
use crate::policy::{GaussianRbfPolicy, RbfBasis, TabularPolicy};
use crate::rng::{Purpose, RngStream};
use crate::tabular::{TabularEnv, TabularMdp};

fn bad<T>(key: &str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    })
}

/// A randomly generated finite MDP, fixed by its own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSection {
    pub states: usize,
    pub actions: usize,
    pub seed: u64,
    #[serde(default = "default_safe_prob")]
    pub safe_prob: f64,
    #[serde(default)]
    pub initial: usize,
}

fn default_safe_prob() -> f64 {
    0.7
}

impl TabularSection {
    pub fn build(&self) -> Result<TabularEnv> {
        let mut rng = RngStream::new(self.seed).substream(0, Purpose::Aux);
        let mdp = TabularMdp::random(self.states, self.actions, self.safe_prob, &mut rng);
        TabularEnv::new(mdp, self.initial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_covariance")]
    pub covariance: Vec<f64>,
}

fn default_spacing() -> f64 {
    0.25
}
fn default_bandwidth() -> f64 {
    0.5
}
fn default_covariance() -> Vec<f64> {
    vec![0.5, 0.5]
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            spacing: default_spacing(),
            bandwidth: default_bandwidth(),
            covariance: default_covariance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub gamma: f64,
    pub eta_theta: f64,
    pub eta_lambda: f64,
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default = "one")]
    pub batch_size: usize,
}

fn one() -> usize {
    1
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            eta_theta: 0.01,
            eta_lambda: 0.005,
            lambda0: 20.0,
            delta: Some(0.01),
            horizon: Some(100),
            c: None,
            iterations: None,
            steps: Some(2000),
            baseline: false,
            batch_size: 1,
        }
    }
}

impl LearnerSection {
    pub fn learner_config(&self) -> Result<LearnerConfig> {
        let gamma = Discount::new(self.gamma).or_else(|e| bad("learner.gamma", e.to_string()))?;
        let lambda_init =
            DualVariable::new(self.lambda0).or_else(|e| bad("learner.lambda0", e.to_string()))?;
        let safety = match (self.c, self.delta) {
            (Some(_), Some(_)) => return bad("learner.c", "give either `c` or `delta`, not both"),
            (Some(c), None) => {
                if self.horizon.is_some() {
                    return bad("learner.horizon", "only used together with `delta`");
                }
                SafetySpec::explicit(c, gamma).or_else(|e| bad("learner.c", e.to_string()))?
            }
            (None, Some(delta)) => {
                let horizon = self.horizon.unwrap_or(100);
                if horizon == 0 {
                    return bad("learner.horizon", "must be positive");
                }
                SafetySpec::derived(delta, horizon, gamma)
                    .or_else(|e| bad("learner.delta", e.to_string()))?
            }
            (None, None) => return bad("learner.delta", "one of `delta` or `c` is required"),
        };
        let cfg = LearnerConfig {
            eta_theta: self.eta_theta,
            eta_lambda: self.eta_lambda,
            gamma,
            lambda_init,
            safety,
            baseline: self.baseline,
            batch_size: self.batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn budget(&self) -> Result<Budget> {
        match (self.iterations, self.steps) {
            (Some(n), None) => Ok(Budget::Iterations(n)),
            (None, Some(n)) => Ok(Budget::Steps(n)),
            (Some(_), Some(_)) => bad("learner.steps", "give either `steps` or `iterations`"),
            (None, None) => bad("learner.steps", "one of `steps` or `iterations` is required"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<NavConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<TabularSection>,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub learner: LearnerSection,
}

/// The environment a configuration describes.
#[derive(Debug, Clone)]
pub enum EnvKind<'a> {
    Nav(&'a NavConfig),
    Tabular(&'a TabularSection),
}

impl Default for RunConfig {
    /// The navigation reproduction setup.
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            env: Some(NavConfig::default()),
            tabular: None,
            policy: PolicySection::default(),
            learner: LearnerSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|span| key_at(text, span.start))
                .unwrap_or_else(|| "<config>".to_string());
            Error::Config {
                key,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn env_kind(&self) -> Result<EnvKind<'_>> {
        match (&self.env, &self.tabular) {
            (Some(nav), None) => Ok(EnvKind::Nav(nav)),
            (None, Some(tab)) => Ok(EnvKind::Tabular(tab)),
            (Some(_), Some(_)) => bad("env", "give exactly one of [env] and [tabular]"),
            (None, None) => bad("env", "an [env] or [tabular] section is required"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.env_kind()? {
            EnvKind::Nav(nav) => {
                nav.validate()?;
                let p = &self.policy;
                if !(p.spacing > 0.0 && p.spacing.is_finite()) {
                    return bad("policy.spacing", "must be positive");
                }
                if !(p.bandwidth > 0.0 && p.bandwidth.is_finite()) {
                    return bad("policy.bandwidth", "must be positive");
                }
                if p.covariance.len() != 2 || p.covariance.iter().any(|v| !(*v > 0.0)) {
                    return bad("policy.covariance", "needs two positive entries");
                }
            }
            EnvKind::Tabular(t) => {
                if t.states == 0 || t.actions == 0 {
                    return bad("tabular.states", "needs at least one state and one action");
                }
                if !(0.0..=1.0).contains(&t.safe_prob) {
                    return bad("tabular.safe_prob", "must lie in [0, 1]");
                }
                if t.initial >= t.states {
                    return bad("tabular.initial", "must index a state");
                }
            }
        }
        self.learner.learner_config()?;
        self.learner.budget()?;
        Ok(())
    }

    /// Navigation environment and zero-initialised policy.
    pub fn build_nav(&self) -> Result<(NavEnv, GaussianRbfPolicy)> {
        let EnvKind::Nav(nav) = self.env_kind()? else {
            return bad("env", "not a navigation config");
        };
        let env = NavEnv::new(nav.clone())?;
        let [lo, hi] = nav.bounds;
        let basis = RbfBasis::grid(lo, hi, self.policy.spacing, self.policy.bandwidth)
            .or_else(|e| bad("policy.spacing", e.to_string()))?;
        let policy = GaussianRbfPolicy::new(basis, self.policy.covariance.clone())?;
        Ok((env, policy))
    }

    /// Tabular environment and uniform softmax policy.
    pub fn build_tabular(&self) -> Result<(TabularEnv, TabularPolicy)> {
        let EnvKind::Tabular(t) = self.env_kind()? else {
            return bad("tabular", "not a tabular config");
        };
        Ok((t.build()?, TabularPolicy::uniform(t.states, t.actions)?))
    }
}

/// Dotted key path of the table entry enclosing byte `pos`, best effort.
fn key_at(text: &str, pos: usize) -> String {
    let before = &text[..pos.min(text.len())];
    let mut section = String::new();
    let mut key = String::new();
    for line in before.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
    }
    // The offending line itself may start at `pos`.
    if let Some(line) = text[pos.min(text.len())..].lines().next() {
        if let Some((k, _)) = line.trim().split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NAV: &str = r#"
seed = 3

[env]
ts = 0.05
goal = [9.0, 1.5]
start = [1.0, 8.5]
obstacles = [[5.5, 4.5, 1.0]]

[learner]
gamma = 0.95
eta_theta = 0.01
eta_lambda = 0.005
lambda0 = 20.0
delta = 0.01
horizon = 100
steps = 2000
"#;

    #[test]
    fn parses_the_navigation_layout() {
        let cfg = RunConfig::from_toml(NAV).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.policy, PolicySection::default());
        assert_eq!(cfg.learner.budget().unwrap(), Budget::Steps(2000));
        let lc = cfg.learner.learner_config().unwrap();
        assert!((lc.safety.threshold() - 19.800059205292204).abs() < 1e-12);
        let (_, policy) = cfg.build_nav().unwrap();
        assert_eq!(policy.basis().len(), 41 * 41);
    }

    fn key_of(text: &str) -> String {
        match RunConfig::from_toml(text).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(key_of(&NAV.replace("gamma = 0.95", "gamma = 1.5")), "learner.gamma");
        assert_eq!(key_of(&NAV.replace("ts = 0.05", "ts = -1.0")), "env.ts");
        assert_eq!(key_of(&NAV.replace("start = [1.0, 8.5]", "start = [5.5, 4.5]")), "env.start");
        assert_eq!(key_of(&NAV.replace("steps = 2000", "")), "learner.steps");
        assert_eq!(key_of(&NAV.replace("lambda0 = 20.0", "lambda0 = -1.0")), "learner.lambda0");
        assert_eq!(key_of(&NAV.replace("eta_theta = 0.01", "eta_theta = 0.0")), "learner.eta_theta");
        assert_eq!(key_of(&format!("{NAV}\nbogus = 1\n")), "learner.bogus");
        assert_eq!(key_of(&NAV.replace("ts = 0.05", "ts = \"fast\"")), "env.ts");
        let both = format!("{NAV}\n[tabular]\nstates = 3\nactions = 2\nseed = 1\n");
        assert_eq!(key_of(&both), "env");
    }

    #[test]
    fn explicit_threshold_and_iteration_budget() {
        let text = NAV
            .replace("delta = 0.01\nhorizon = 100\n", "c = 15.0\n")
            .replace("steps = 2000", "iterations = 7");
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.learner.learner_config().unwrap().safety.threshold(), 15.0);
        assert_eq!(cfg.learner.budget().unwrap(), Budget::Iterations(7));
        // Above the largest attainable discounted safe count.
        assert!(RunConfig::from_toml(&text.replace("c = 15.0", "c = 25.0")).is_err());
    }

    #[test]
    fn tabular_section_builds_a_fixed_instance() {
        let text = "[tabular]\nstates = 5\nactions = 2\nseed = 11\n\n[learner]\ngamma = 0.9\neta_theta = 0.1\neta_lambda = 0.1\nlambda0 = 1.0\nc = 5.0\niterations = 10\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let (a, _) = cfg.build_tabular().unwrap();
        let (b, _) = cfg.build_tabular().unwrap();
        assert_eq!(a.mdp(), b.mdp());
        assert!(cfg.build_nav().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), gamma in 0.5f64..0.99, ts in 0.01f64..0.2,
                      x in 0.5f64..2.0, steps in 0u64..10_000, baseline in any::<bool>()) {
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.out = Some(PathBuf::from("runs/x"));
            cfg.learner.gamma = gamma;
            cfg.learner.steps = Some(steps);
            cfg.learner.baseline = baseline;
            cfg.env.as_mut().unwrap().ts = ts;
            cfg.env.as_mut().unwrap().start = [x, 8.5];
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
