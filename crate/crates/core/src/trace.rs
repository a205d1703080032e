//! Per-iteration convergence records and the divergence guard.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the exported trace.
pub const TRACE_COLUMNS: [&str; 7] = [
    "iter",
    "objective",
    "fidelity",
    "regularizer",
    "step",
    "rho",
    "time_ms",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub fidelity: f64,
    pub regularizer: f64,
    pub step: f64,
    pub rho: f64,
    pub time_ms: f64,
}

/// Convergence history of one run.
///
/// In deterministic mode the `time_ms` column is written as zero so that
/// repeated runs produce identical files; the measured wall times are still
/// kept and can be exported separately with [`ConvergenceTrace::write_timing_csv`].
#[derive(Clone, Debug)]
pub struct ConvergenceTrace {
    rows: Vec<TraceRow>,
    wall_ms: Vec<f64>,
    deterministic: bool,
    start: Instant,
}

impl ConvergenceTrace {
    pub fn new(deterministic: bool) -> Self {
        ConvergenceTrace {
            rows: Vec::new(),
            wall_ms: Vec::new(),
            deterministic,
            start: Instant::now(),
        }
    }

    pub fn deterministic(&self) -> bool {
        self.deterministic
    }

    /// Milliseconds since the trace was created.
    pub fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    pub fn record(&mut self, iter: usize, fidelity: f64, regularizer: f64, step: f64, rho: f64) -> &TraceRow {
        let wall = self.elapsed_ms();
        self.wall_ms.push(wall);
        self.rows.push(TraceRow {
            iter,
            objective: fidelity + regularizer,
            fidelity,
            regularizer,
            step,
            rho,
            time_ms: if self.deterministic { 0.0 } else { wall },
        });
        self.rows.last().expect("just pushed")
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.last().map(|r| r.objective)
    }

    /// Wall-clock milliseconds at each recorded row, regardless of mode.
    pub fn wall_ms(&self) -> &[f64] {
        &self.wall_ms
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.fidelity),
                format!("{:e}", r.regularizer),
                format!("{:e}", r.step),
                format!("{:e}", r.rho),
                format!("{:e}", r.time_ms),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    /// `iter,wall_ms` pairs.
    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "wall_ms"]).map_err(csv_err)?;
        for (r, t) in self.rows.iter().zip(&self.wall_ms) {
            w.write_record([r.iter.to_string(), format!("{t:e}")]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Aborts a run whose objective grows past `factor` times the first value
/// seen, or becomes non-finite.
#[derive(Clone, Copy, Debug)]
pub struct DivergenceGuard {
    factor: f64,
    reference: Option<f64>,
}

pub const DEFAULT_GUARD_FACTOR: f64 = 1e3;

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self::new(DEFAULT_GUARD_FACTOR)
    }
}

impl DivergenceGuard {
    pub fn new(factor: f64) -> Self {
        DivergenceGuard {
            factor,
            reference: None,
        }
    }

    pub fn limit(&self) -> Option<f64> {
        self.reference.map(|r| self.factor * r.max(f64::MIN_POSITIVE))
    }

    pub fn check(&mut self, iteration: usize, objective: f64) -> Result<()> {
        let limit = match self.reference {
            None if objective.is_finite() => {
                self.reference = Some(objective.abs());
                return Ok(());
            }
            None => f64::INFINITY,
            Some(_) => self.limit().expect("reference set"),
        };
        if !objective.is_finite() || objective > limit {
            return Err(Error::Diverged {
                iteration,
                objective,
                limit,
            });
        }
        Ok(())
    }
}
