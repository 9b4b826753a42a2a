//! Planar navigation with a single-integrator model, clamped to a square
//! domain, a quadratic goal reward and closed circular obstacles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionVec, Environment, StateVec, StepOutcome};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl From<[f64; 3]> for Obstacle {
    fn from(v: [f64; 3]) -> Self {
        Obstacle {
            center: [v[0], v[1]],
            radius: v[2],
        }
    }
}

impl From<Obstacle> for [f64; 3] {
    fn from(o: Obstacle) -> Self {
        [o.center[0], o.center[1], o.radius]
    }
}

impl Obstacle {
    /// Closed disc: the boundary circle is unsafe.
    pub fn contains(&self, s: &[f64]) -> bool {
        let dx = s[0] - self.center[0];
        let dy = s[1] - self.center[1];
        (dx * dx + dy * dy).sqrt() <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavConfig {
    /// Lower and upper edge of the square domain.
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    pub ts: f64,
    pub goal: [f64; 2],
    pub start: [f64; 2],
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

fn default_bounds() -> [f64; 2] {
    [0.0, 10.0]
}

impl Default for NavConfig {
    /// The reproduction layout: three unit discs on the start-goal diagonal.
    fn default() -> Self {
        NavConfig {
            bounds: default_bounds(),
            ts: 0.05,
            goal: [9.0, 1.5],
            start: [1.0, 8.5],
            obstacles: vec![
                Obstacle { center: [3.0, 7.0], radius: 1.0 },
                Obstacle { center: [5.5, 4.5], radius: 1.0 },
                Obstacle { center: [7.5, 2.5], radius: 1.0 },
            ],
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.to_string(),
                msg: msg.to_string(),
            })
        };
        let [lo, hi] = self.bounds;
        if !(lo < hi) {
            return bad("env.bounds", "lower bound must be below upper bound");
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("env.ts", "sampling time must be positive");
        }
        let inside = |p: &[f64; 2]| p.iter().all(|x| (lo..=hi).contains(x));
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !inside(&o.center) {
                return bad(
                    &format!("env.obstacles[{i}]"),
                    "radius must be positive and the center inside the domain",
                );
            }
        }
        for (key, p) in [("env.start", &self.start), ("env.goal", &self.goal)] {
            if !inside(p) {
                return bad(key, "must lie inside the domain");
            }
            if self.obstacles.iter().any(|o| o.contains(p)) {
                return bad(key, "must lie outside every obstacle");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavEnv {
    cfg: NavConfig,
}

impl NavEnv {
    pub fn new(cfg: NavConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }

    /// Distance from `s` to the goal.
    pub fn goal_distance(&self, s: &StateVec) -> f64 {
        (-self.nav_reward(s)).sqrt()
    }

    /// `-|s - goal|^2`; independent of the action.
    pub fn nav_reward(&self, s: &StateVec) -> f64 {
        let dx = s.0[0] - self.cfg.goal[0];
        let dy = s.0[1] - self.cfg.goal[1];
        -(dx * dx + dy * dy)
    }

    pub fn nav_safe(&self, s: &StateVec) -> bool {
        !self.cfg.obstacles.iter().any(|o| o.contains(&s.0))
    }

    /// `clamp(s + ts a)` componentwise to the domain.
    pub fn nav_step(&self, s: &StateVec, a: &ActionVec) -> StepOutcome {
        let [lo, hi] = self.cfg.bounds;
        let next = StateVec(
            s.0.iter()
                .zip(&a.0)
                .map(|(x, u)| (x + self.cfg.ts * u).clamp(lo, hi))
                .collect(),
        );
        StepOutcome {
            reward: self.nav_reward(s),
            safe: self.nav_safe(&next),
            next_state: next,
        }
    }
}

impl Environment for NavEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> StateVec {
        StateVec(self.cfg.start.to_vec())
    }

    fn reward(&self, s: &StateVec, _a: &ActionVec) -> f64 {
        self.nav_reward(s)
    }

    fn is_safe(&self, s: &StateVec) -> bool {
        self.nav_safe(s)
    }

    fn step(&self, s: &StateVec, a: &ActionVec, _rng: &mut StreamRng) -> Result<StepOutcome> {
        if s.dim() != 2 || a.dim() != 2 || !a.0.iter().all(|u| u.is_finite()) {
            return Err(Error::Domain("navigation expects finite 2-D states and actions".into()));
        }
        Ok(self.nav_step(s, a))
    }
}
