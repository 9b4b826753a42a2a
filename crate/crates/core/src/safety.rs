//! Runtime safety accounting over every environment step of a run.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SafetyLedger {
    total_steps: u64,
    safe_steps: u64,
    unsafe_event_times: Vec<u64>,
}

impl SafetyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the safety of the state at time `step_index`, which must be the
    /// next unrecorded index.
    pub fn record(&mut self, step_index: u64, safe: bool) -> Result<()> {
        if step_index != self.total_steps {
            return Err(Error::Contract(format!(
                "expected step {}, got {step_index}",
                self.total_steps
            )));
        }
        self.total_steps += 1;
        if safe {
            self.safe_steps += 1;
        } else {
            self.unsafe_event_times.push(step_index);
        }
        Ok(())
    }

    /// Fraction of recorded steps that were safe; 1.0 before any step.
    pub fn runtime_safety(&self) -> f64 {
        if self.total_steps == 0 {
            1.0
        } else {
            self.safe_steps as f64 / self.total_steps as f64
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn safe_steps(&self) -> u64 {
        self.safe_steps
    }

    pub fn unsafe_events(&self) -> &[u64] {
        &self.unsafe_event_times
    }

    /// Rebuilds a ledger from a per-step safety sequence.
    pub fn from_flags<I: IntoIterator<Item = bool>>(flags: I) -> Self {
        let mut ledger = Self::new();
        for (t, safe) in flags.into_iter().enumerate() {
            ledger.record(t as u64, safe).expect("indices are contiguous");
        }
        ledger
    }
}
