//! CSV and checkpoint persistence.
//!
//! `trajectory.csv` has one row per visited state, `t,x,y,safe`, where `t`
//! counts every state the system occupied (the initial one is `t = 0`) and
//! `safe` is 0 or 1. One-dimensional states leave `y` at 0.
//!
//! `run.csv` has one row per learner iteration with the columns of
//! [`RUN_HEADER`]; `x,y` hold the system state at the end of the iteration.
//!
//! Floats are written in shortest round-trip form so files re-read exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{IterationRecord, RunLog};
use crate::mdp::StateVec;
use crate::policy::Checkpoint;

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "x", "y", "safe"];

pub const RUN_HEADER: [&str; 10] = [
    "iteration",
    "env_steps",
    "x",
    "y",
    "lambda",
    "q_hat",
    "u_hat",
    "grad_norm",
    "runtime_safety",
    "unsafe_events",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub safe: bool,
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn coords(s: &[f64]) -> (f64, f64) {
    (s.first().copied().unwrap_or(0.0), s.get(1).copied().unwrap_or(0.0))
}

pub fn write_trajectory<W: Write>(w: W, states: &[(StateVec, bool)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER)?;
    for (t, (s, safe)) in states.iter().enumerate() {
        let (x, y) = coords(&s.0);
        out.write_record([t.to_string(), num(x), num(y), u8::from(*safe).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got = rdr.headers()?;
    if got.iter().ne(want.iter().copied()) {
        return Err(Error::Parse(format!(
            "expected columns `{}`, found `{}`",
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Parse(format!("row {line}: missing column {i}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {line}: cannot parse `{raw}`")))
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &TRAJECTORY_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t: u64 = field(&rec, 0, i)?;
        if t != i as u64 {
            return Err(Error::Parse(format!("row {i}: step index {t} is not contiguous")));
        }
        let safe = match field::<u8>(&rec, 3, i)? {
            0 => false,
            1 => true,
            v => return Err(Error::Parse(format!("row {i}: safe flag {v} is not 0 or 1"))),
        };
        rows.push(TrajectoryRow {
            t,
            x: field(&rec, 1, i)?,
            y: field(&rec, 2, i)?,
            safe,
        });
    }
    Ok(rows)
}

pub fn write_run<W: Write>(w: W, log: &RunLog) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RUN_HEADER)?;
    for r in &log.records {
        let (x, y) = coords(&r.state);
        out.write_record([
            r.iteration.to_string(),
            r.env_steps.to_string(),
            num(x),
            num(y),
            num(r.lambda),
            num(r.q_hat),
            num(r.u_hat),
            num(r.grad_norm),
            num(r.runtime_safety),
            r.unsafe_events.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_run<R: Read>(r: R) -> Result<RunLog> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &RUN_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        records.push(IterationRecord {
            iteration: field(&rec, 0, i)?,
            env_steps: field(&rec, 1, i)?,
            state: vec![field(&rec, 2, i)?, field(&rec, 3, i)?],
            lambda: field(&rec, 4, i)?,
            q_hat: field(&rec, 5, i)?,
            u_hat: field(&rec, 6, i)?,
            grad_norm: field(&rec, 7, i)?,
            runtime_safety: field(&rec, 8, i)?,
            unsafe_events: field(&rec, 9, i)?,
        });
    }
    Ok(RunLog { records })
}

/// Which of the two CSV layouts a header line belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Trajectory,
    Run,
}

pub fn sniff_kind(header_line: &str) -> Option<CsvKind> {
    let cols: Vec<&str> = header_line.trim().split(',').map(str::trim).collect();
    if cols == TRAJECTORY_HEADER {
        Some(CsvKind::Trajectory)
    } else if cols == RUN_HEADER {
        Some(CsvKind::Run)
    } else {
        None
    }
}

pub fn save_trajectory(path: &Path, states: &[(StateVec, bool)]) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), states)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    read_trajectory(BufReader::new(File::open(path)?))
}

pub fn save_run(path: &Path, log: &RunLog) -> Result<()> {
    write_run(BufWriter::new(File::create(path)?), log)
}

pub fn load_run(path: &Path) -> Result<RunLog> {
    read_run(BufReader::new(File::open(path)?))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read_from(BufReader::new(File::open(path)?))
}
