//! Training orchestration: builds the configured environment and policy,
//! runs the learner, and writes the run's artifacts.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::config::{EnvKind, RunConfig};
use crate::error::Result;
use crate::io;
use crate::learner::{run_continuing, run_episodic, Mode, RunLog, RunOutput};
use crate::mdp::{sample_geometric, Discount, Environment};
use crate::par::Execution;
use crate::policy::{Checkpoint, StochasticPolicy};
use crate::report::{safety_series, summarize_trajectory, ReportOptions, Summary};
use crate::rng::{Purpose, RngStream};

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub log: RunLog,
    pub output: RunOutput,
    pub checkpoint: Checkpoint,
    pub report_options: ReportOptions,
}

impl TrainResult {
    pub fn trajectory(&self) -> &[(crate::mdp::StateVec, bool)] {
        self.output.steps.states.as_deref().unwrap_or(&[])
    }

    /// Summary computed from the in-memory trajectory and log.
    pub fn summary(&self) -> Summary {
        let rows: Vec<io::TrajectoryRow> = self
            .trajectory()
            .iter()
            .enumerate()
            .map(|(t, (s, safe))| io::TrajectoryRow {
                t: t as u64,
                x: s.0[0],
                y: s.0.get(1).copied().unwrap_or(0.0),
                safe: *safe,
            })
            .collect();
        summarize_trajectory(&rows, Some(&self.log), &self.report_options)
    }

    /// Writes `trajectory.csv`, `run.csv`, `theta.ckpt`, `report.txt` and
    /// `safety.csv` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        io::save_trajectory(&dir.join("trajectory.csv"), self.trajectory())?;
        io::save_run(&dir.join("run.csv"), &self.log)?;
        io::save_checkpoint(&dir.join("theta.ckpt"), &self.checkpoint)?;
        fs::write(dir.join("report.txt"), self.summary().render(&self.report_options))?;
        let series = safety_series(self.trajectory().iter().map(|(_, s)| *s));
        crate::report::write_series(fs::File::create(dir.join("safety.csv"))?, &series)?;
        Ok(())
    }
}

fn run<E, P>(env: &E, policy: &mut P, cfg: &RunConfig, mode: Mode, seed: u64) -> Result<RunOutput>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let learner = cfg.learner.learner_config()?;
    let budget = cfg.learner.budget()?;
    let streams = RngStream::new(seed);
    match mode {
        Mode::Continuing => run_continuing(env, policy, &learner, budget, &streams, true),
        Mode::Episodic => run_episodic(env, policy, &learner, budget, &streams, true),
    }
}

/// Trains once with the given seed (the config's own seed is ignored).
pub fn train(cfg: &RunConfig, mode: Mode, seed: u64) -> Result<TrainResult> {
    cfg.validate()?;
    let (output, checkpoint, report_options) = match cfg.env_kind()? {
        EnvKind::Nav(nav) => {
            let (env, mut policy) = cfg.build_nav()?;
            let out = run(&env, &mut policy, cfg, mode, seed)?;
            let opts = ReportOptions {
                goal: nav.goal,
                ..ReportOptions::default()
            };
            (out, policy.checkpoint(), opts)
        }
        EnvKind::Tabular(_) => {
            let (env, mut policy) = cfg.build_tabular()?;
            let out = run(&env, &mut policy, cfg, mode, seed)?;
            let ckpt = Checkpoint {
                theta: policy.params().clone(),
                sigma: f64::NAN,
                spacing: f64::NAN,
            };
            let opts = ReportOptions {
                goal: [f64::NAN, f64::NAN],
                ..ReportOptions::default()
            };
            (out, ckpt, opts)
        }
    };
    Ok(TrainResult {
        log: output.log.clone(),
        output,
        checkpoint,
        report_options,
    })
}

/// Independent runs, one per seed, fanned out across workers. Each run is
/// sequential; results come back in seed order.
pub fn train_seeds(
    cfg: &RunConfig,
    mode: Mode,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<TrainResult>> {
    exec.map(seeds.len(), |i| train(cfg, mode, seeds[i]))
        .into_iter()
        .collect()
}

/// Monte Carlo discounted return of `policy` from the environment's initial
/// state, over `episodes` rollouts truncated at a geometric horizon.
pub fn estimate_return<E, P>(
    env: &E,
    policy: &P,
    gamma: Discount,
    episodes: usize,
    streams: &RngStream,
) -> Result<f64>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let mut total = 0.0;
    for e in 0..episodes as u64 {
        let horizon = sample_geometric(gamma, &mut streams.substream(e, Purpose::Horizon));
        let mut rng = streams.substream(e, Purpose::Action);
        let mut s = env.initial_state();
        // Sum of rewards up to a Geometric(1 - gamma) horizon is unbiased
        // for the discounted return.
        for _ in 0..=horizon {
            let a = policy.sample_action(&s, &mut rng)?;
            let out = env.step(&s, &a, &mut rng)?;
            total += out.reward;
            s = out.next_state;
        }
    }
    Ok(total / episodes as f64)
}

/// Zero-parameter copy of a checkpoint, i.e. the initial policy.
pub fn initial_checkpoint(ckpt: &Checkpoint) -> Checkpoint {
    Checkpoint {
        theta: DMatrix::zeros(ckpt.theta.nrows(), ckpt.theta.ncols()),
        ..ckpt.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Budget;

    fn small_nav(iterations: u64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.learner.steps = None;
        cfg.learner.iterations = Some(iterations);
        cfg
    }

    #[test]
    fn zero_iterations_give_headers_only_and_initial_theta() {
        let cfg = small_nav(0);
        assert_eq!(cfg.learner.budget().unwrap(), Budget::Iterations(0));
        let res = train(&cfg, Mode::Continuing, 1).unwrap();
        assert!(res.log.records.is_empty());
        assert_eq!(res.checkpoint, initial_checkpoint(&res.checkpoint));
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path()).unwrap();
        let run = fs::read_to_string(dir.path().join("run.csv")).unwrap();
        assert_eq!(run.lines().count(), 1);
        // Only the initial state is on record.
        let traj = io::load_trajectory(&dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!((traj[0].x, traj[0].y), (1.0, 8.5));
    }

    #[test]
    fn trajectory_length_matches_step_count() {
        let res = train(&small_nav(5), Mode::Continuing, 2).unwrap();
        let last = res.log.records.last().unwrap();
        assert_eq!(res.trajectory().len() as u64, last.env_steps + 1);
        assert_eq!(res.output.steps.ledger.total_steps(), last.env_steps + 1);
    }

    #[test]
    fn recount_from_disk_matches_online_summary() {
        let res = train(&small_nav(20), Mode::Continuing, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path()).unwrap();
        let rows = io::load_trajectory(&dir.path().join("trajectory.csv")).unwrap();
        let log = io::load_run(&dir.path().join("run.csv")).unwrap();
        assert_eq!(log, res.log);
        let from_disk = summarize_trajectory(&rows, Some(&log), &res.report_options);
        assert_eq!(from_disk, res.summary());
        assert_eq!(
            from_disk.final_runtime_safety,
            res.output.steps.ledger.runtime_safety()
        );
        assert_eq!(
            from_disk.unsafe_events,
            res.output.steps.ledger.unsafe_events().len() as u64
        );
        let ckpt = io::load_checkpoint(&dir.path().join("theta.ckpt")).unwrap();
        assert_eq!(ckpt, res.checkpoint);
    }

    #[test]
    fn seeds_fan_out_deterministically() {
        let cfg = small_nav(3);
        let par = train_seeds(&cfg, Mode::Continuing, &[1, 2, 3], Execution::Parallel).unwrap();
        let seq = train_seeds(&cfg, Mode::Continuing, &[1, 2, 3], Execution::Sequential).unwrap();
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.log, b.log);
        }
        assert_ne!(par[0].log, par[1].log);
    }
}
