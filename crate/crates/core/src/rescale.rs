//! Frequency rescaling of snapshot sequences.
//!
//! `(t, x) -> (t_k + t/lambda, x/lambda)`: in Fourier space the integer
//! wavevectors are unchanged while the box stretches to `lambda * L`, so
//! mode xi moves to xi/lambda with identical amplitude. Time is linearly
//! interpolated between stored snapshots.

use crate::error::{EwError, Result};
use crate::grid::{Field, Grid3};

/// A time-stamped field sequence with strictly increasing times.
#[derive(Debug, Clone)]
pub struct SnapshotSeq {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
}

impl SnapshotSeq {
    pub fn new(times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        if times.len() != fields.len() || times.is_empty() {
            return Err(EwError::contract("snapshot sequence shape mismatch"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EwError::contract("snapshot times must strictly increase"));
        }
        Ok(SnapshotSeq { times, fields })
    }

    pub fn coverage(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Linear interpolation in time; errors outside coverage.
    pub fn at_time(&self, t: f64) -> Result<Field> {
        let (t0, t1) = self.coverage();
        let tol = 1e-12 * (1.0 + t1.abs());
        if t < t0 - tol || t > t1 + tol {
            return Err(EwError::OutsideCoverage { time: t, t0, t1 });
        }
        let t = t.clamp(t0, t1);
        let j = match self
            .times
            .iter()
            .position(|&tj| tj >= t)
        {
            Some(0) => return Ok(self.fields[0].clone()),
            Some(j) => j,
            None => return Ok(self.fields.last().unwrap().clone()),
        };
        let (ta, tb) = (self.times[j - 1], self.times[j]);
        let w = (t - ta) / (tb - ta);
        let mut out = self.fields[j - 1].clone();
        out.scale(1.0 - w);
        out.axpy(w, &self.fields[j]);
        Ok(out)
    }
}

/// Reinterprets a field's coefficients on a box stretched by `lambda`.
fn stretch_box(f: &Field, lambda: f64) -> Result<Field> {
    let g = f.grid();
    let target = Grid3::new(g.n(), g.box_len() * lambda)?;
    Field::from_data(target, f.rank(), f.data().to_vec())
}

/// Samples of `f(t_k + t/lambda, x/lambda)` at the requested rescaled times.
pub fn frequency_rescale(
    seq: &SnapshotSeq,
    lambda: f64,
    t_k: f64,
    rescaled_times: &[f64],
) -> Result<SnapshotSeq> {
    if !(lambda >= 1.0) {
        return Err(EwError::contract(format!(
            "rescaling factor must be >= 1, got {lambda}"
        )));
    }
    let mut fields = Vec::with_capacity(rescaled_times.len());
    for &t in rescaled_times {
        let original_t = t_k + t / lambda;
        let snap = seq.at_time(original_t)?;
        fields.push(stretch_box(&snap, lambda)?);
    }
    SnapshotSeq::new(rescaled_times.to_vec(), fields)
}
