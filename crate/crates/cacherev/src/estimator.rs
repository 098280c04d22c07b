//! Expected-demand estimation.
//!
//! Predictions are never fully trusted: the expected request indicator for
//! (user, file, offset) blends the predicted probability with the user's
//! local popularity, weighted by the measured prediction accuracy:
//! `E[i] = i_hat * a + g * (1 - a)`. The SimpEst alternative instead keeps
//! only the argmax prediction scaled by its accuracy. Per-user estimates are
//! summed into per-(offset, file) expected counts before optimization, which
//! is all the revenue objective consumes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::RequestTrace;
use crate::predictor::{argmax, AccuracyProfile};

/// Running per-user request counts; normalizes to local popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPopularity {
    counts: Vec<u64>,
    total: u64,
}

impl LocalPopularity {
    pub fn new(num_files: usize) -> Self {
        Self { counts: vec![0; num_files], total: 0 }
    }

    /// Counts over one user's history before `up_to_mini_slot`.
    pub fn from_trace(trace: &RequestTrace, user: usize, up_to_mini_slot: usize) -> Result<Self> {
        if up_to_mini_slot == 0 {
            return Err(Error::NoHistory { user });
        }
        let mut pop = Self::new(trace.num_files());
        for t in 0..up_to_mini_slot.min(trace.total_minislots()) {
            pop.observe(trace.request(user, t));
        }
        Ok(pop)
    }

    pub fn observe(&mut self, file: u32) {
        self.counts[file as usize] += 1;
        self.total += 1;
    }

    pub fn total_requests(&self) -> u64 {
        self.total
    }

    /// Normalized frequency vector; errors before any request is observed.
    pub fn vector(&self) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(Error::NoHistory { user: usize::MAX });
        }
        Ok(self.counts.iter().map(|&c| c as f64 / self.total as f64).collect())
    }
}

/// One user's local popularity over history before `up_to_mini_slot`.
pub fn local_popularity(
    trace: &RequestTrace,
    user: usize,
    up_to_mini_slot: usize,
) -> Result<Vec<f64>> {
    LocalPopularity::from_trace(trace, user, up_to_mini_slot)?.vector()
}

/// Accuracy-weighted mixture of prediction and local popularity, entrywise
/// over a horizon of prediction rows.
pub fn estimate_demand(
    predictions: &[Vec<f64>],
    accuracy: &AccuracyProfile,
    popularity: &[f64],
    user: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(predictions.len());
    for (h, row) in predictions.iter().enumerate() {
        if row.len() != popularity.len() {
            return Err(Error::Shape(format!(
                "prediction row has {} files, popularity has {}",
                row.len(),
                popularity.len()
            )));
        }
        let mixed: Vec<f64> = row
            .iter()
            .zip(popularity)
            .enumerate()
            .map(|(f, (&i_hat, &g))| {
                let a = accuracy.lookup(user, f, h);
                i_hat * a + g * (1.0 - a)
            })
            .collect();
        debug_assert!(mixed.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        out.push(mixed);
    }
    Ok(out)
}

/// Prediction-only estimate: per offset, the accuracy of the argmax file at
/// that file's position, zero elsewhere. Argmax ties resolve to the lowest
/// file id.
pub fn simp_estimate(
    predictions: &[Vec<f64>],
    accuracy: &AccuracyProfile,
    user: usize,
) -> Vec<Vec<f64>> {
    predictions
        .iter()
        .enumerate()
        .map(|(h, row)| {
            let best = argmax(row);
            let mut out = vec![0.0; row.len()];
            out[best] = accuracy.lookup(user, best, h);
            out
        })
        .collect()
}

/// Per-(offset, file) expected request counts summed over users.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDemand {
    /// `rows[offset][file]`.
    pub rows: Vec<Vec<f64>>,
}

impl AggregatedDemand {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn num_files(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Sums per-user estimate rows in iteration order.
    pub fn from_users<'a, I>(per_user: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vec<Vec<f64>>>,
    {
        let mut rows: Option<Vec<Vec<f64>>> = None;
        for user_rows in per_user {
            match &mut rows {
                None => rows = Some(user_rows.clone()),
                Some(acc) => {
                    if acc.len() != user_rows.len()
                        || acc.first().map(Vec::len) != user_rows.first().map(Vec::len)
                    {
                        return Err(Error::Shape("user estimate dimensions disagree".into()));
                    }
                    for (a, b) in acc.iter_mut().zip(user_rows) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                }
            }
        }
        rows.map(|rows| Self { rows }).ok_or(Error::EmptyInput("aggregate over zero users"))
    }

    /// Diagnostic dump: `offset,file,expected_count` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "offset,file,expected_count")?;
        for (h, row) in self.rows.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                writeln!(w, "{h},{f},{v}")?;
            }
        }
        Ok(())
    }
}
