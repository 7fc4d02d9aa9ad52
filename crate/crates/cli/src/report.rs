//! Newline-delimited JSON run reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use twinmpm::loss::LossBreakdown;
use twinmpm::{Error, MaterialParams};

pub struct Report {
    out: BufWriter<File>,
    clock: Option<Instant>,
    error: Option<std::io::Error>,
}

impl Report {
    pub fn create(path: &Path, clock: Option<Instant>) -> Result<Self, Error> {
        Ok(Report {
            out: BufWriter::new(File::create(path)?),
            clock,
            error: None,
        })
    }

    /// Appends one record, stamping elapsed wall time unless running
    /// deterministically. Write errors surface in [`Report::finish`].
    pub fn line(&mut self, mut record: Value) {
        if let Some(start) = self.clock {
            record["wall_time_s"] = json!(start.elapsed().as_secs_f64());
        }
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{record}").and_then(|_| self.out.flush()) {
                self.error = Some(e);
            }
        }
    }

    pub fn finish(mut self) -> Result<(), Error> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Parameters as a record; an infinite yield stress is written as `"inf"`.
pub fn theta_json(t: &MaterialParams) -> Value {
    let y = if t.yield_stress.is_infinite() {
        json!("inf")
    } else {
        json!(t.yield_stress)
    };
    json!({"E": t.youngs_modulus, "nu": t.poissons_ratio, "rho": t.density, "y": y})
}

pub fn loss_json(l: &LossBreakdown) -> Value {
    json!({
        "dist": l.dist,
        "track": l.track,
        "mask": l.mask,
        "total": finite_or_null(l.total),
        "zero_valid_frames": l.zero_valid_frames,
    })
}
