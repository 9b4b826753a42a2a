//! Run summaries and plot-ready runtime-safety series.
//!
//! Step `t` (1-based) of the series covers the first `t` visited states, so
//! its runtime safety is `(1/t) sum_{l<t} 1(s_l safe)` and its unsafe flag
//! marks `s_{t-1}`.

use std::fmt;
use std::io::Write;

use crate::error::Result;
use crate::io::TrajectoryRow;
use crate::learner::RunLog;
use crate::safety::SafetyLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Steps before this one are ignored by the minimum.
    pub burnin: u64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            burnin: 200,
            goal: [9.0, 1.5],
            goal_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub step: u64,
    pub runtime_safety: f64,
    pub unsafe_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// States visited, the initial one included.
    pub steps: u64,
    pub final_runtime_safety: f64,
    /// `None` when the run ends before the burn-in.
    pub min_runtime_safety: Option<f64>,
    /// Index of the first visited state within the goal radius.
    pub first_goal_step: Option<u64>,
    pub unsafe_events: u64,
    pub final_lambda: Option<f64>,
}

/// Runtime-safety series of a sequence of safe flags.
pub fn safety_series(flags: impl IntoIterator<Item = bool>) -> Vec<SeriesPoint> {
    let mut ledger = SafetyLedger::new();
    flags
        .into_iter()
        .map(|safe| {
            ledger
                .record(ledger.total_steps(), safe)
                .expect("contiguous by construction");
            SeriesPoint {
                step: ledger.total_steps(),
                runtime_safety: ledger.runtime_safety(),
                unsafe_flag: !safe,
            }
        })
        .collect()
}

fn min_after(series: &[SeriesPoint], burnin: u64) -> Option<f64> {
    series
        .iter()
        .filter(|p| p.step >= burnin)
        .map(|p| p.runtime_safety)
        .reduce(f64::min)
}

pub fn summarize_trajectory(
    rows: &[TrajectoryRow],
    run: Option<&RunLog>,
    opts: &ReportOptions,
) -> Summary {
    let series = safety_series(rows.iter().map(|r| r.safe));
    let within = |r: &TrajectoryRow| {
        (r.x - opts.goal[0]).hypot(r.y - opts.goal[1]) <= opts.goal_radius
    };
    Summary {
        steps: rows.len() as u64,
        final_runtime_safety: series.last().map_or(1.0, |p| p.runtime_safety),
        min_runtime_safety: min_after(&series, opts.burnin),
        first_goal_step: rows.iter().find(|r| within(r)).map(|r| r.t),
        unsafe_events: series.iter().filter(|p| p.unsafe_flag).count() as u64,
        final_lambda: run.and_then(|l| l.records.last()).map(|r| r.lambda),
    }
}

/// Coarser summary from the per-iteration log alone: runtime safety is only
/// seen at iteration ends and positions only at iteration ends.
pub fn summarize_run(log: &RunLog, opts: &ReportOptions) -> Summary {
    let within = |s: &[f64]| {
        (s[0] - opts.goal[0]).hypot(s.get(1).copied().unwrap_or(0.0) - opts.goal[1])
            <= opts.goal_radius
    };
    Summary {
        steps: log.records.last().map_or(0, |r| r.env_steps),
        final_runtime_safety: log.records.last().map_or(1.0, |r| r.runtime_safety),
        min_runtime_safety: log
            .records
            .iter()
            .filter(|r| r.env_steps >= opts.burnin)
            .map(|r| r.runtime_safety)
            .reduce(f64::min),
        first_goal_step: log.records.iter().find(|r| within(&r.state)).map(|r| r.env_steps),
        unsafe_events: log.records.iter().map(|r| r.unsafe_events).sum(),
        final_lambda: log.records.last().map(|r| r.lambda),
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

impl Summary {
    pub fn render(&self, opts: &ReportOptions) -> String {
        format!(
            "steps: {}\n\
             final_runtime_safety: {}\n\
             min_runtime_safety_after_{}: {}\n\
             first_step_within_{}_of_goal: {}\n\
             unsafe_events: {}\n\
             final_lambda: {}\n",
            self.steps,
            self.final_runtime_safety,
            opts.burnin,
            opt(self.min_runtime_safety),
            opts.goal_radius,
            opt(self.first_goal_step),
            self.unsafe_events,
            opt(self.final_lambda),
        )
    }
}

/// `step,runtime_safety,unsafe_flag`.
pub fn write_series<W: Write>(w: W, series: &[SeriesPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "runtime_safety", "unsafe_flag"])?;
    for p in series {
        out.write_record([
            p.step.to_string(),
            format!("{:?}", p.runtime_safety),
            u8::from(p.unsafe_flag).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(flags: &[bool]) -> Vec<TrajectoryRow> {
        flags
            .iter()
            .enumerate()
            .map(|(t, &safe)| TrajectoryRow {
                t: t as u64,
                x: t as f64 * 0.01,
                y: 0.0,
                safe,
            })
            .collect()
    }

    #[test]
    fn all_safe_log() {
        let s = summarize_trajectory(&rows(&[true; 500]), None, &ReportOptions::default());
        assert_eq!(s.min_runtime_safety, Some(1.0));
        assert_eq!(s.unsafe_events, 0);
        assert_eq!(s.final_runtime_safety, 1.0);
    }

    #[test]
    fn ten_unsafe_rows_of_2000() {
        let mut flags = vec![true; 2000];
        for i in 0..10 {
            flags[300 + 100 * i] = false;
        }
        let s = summarize_trajectory(&rows(&flags), None, &ReportOptions::default());
        assert_eq!(s.final_runtime_safety, 0.995);
        assert_eq!(s.unsafe_events, 10);
    }

    #[test]
    fn burnin_and_goal_radius() {
        let mut flags = vec![true; 20];
        flags[0] = false;
        let opts = ReportOptions {
            burnin: 10,
            goal: [0.1, 0.0],
            goal_radius: 0.025,
        };
        let s = summarize_trajectory(&rows(&flags), None, &opts);
        assert_eq!(s.min_runtime_safety, Some(0.9));
        assert_eq!(s.first_goal_step, Some(8));
        let late = ReportOptions { burnin: 21, ..opts };
        assert_eq!(summarize_trajectory(&rows(&flags), None, &late).min_runtime_safety, None);
    }

    #[test]
    fn series_steps_are_one_based() {
        let s = safety_series([true, false, true]);
        assert_eq!(s.iter().map(|p| p.step).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(s[1].runtime_safety, 0.5);
        assert!(s[1].unsafe_flag);
        let mut buf = Vec::new();
        write_series(&mut buf, &s).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,runtime_safety,unsafe_flag\n1,1.0,0\n2,0.5,1\n3,0.6666666666666666,0\n"
        );
    }
}
