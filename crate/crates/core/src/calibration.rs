//! Target series, error metrics, grid search over piecewise-constant
//! infection coefficients, and the cumulative-mean run-count analysis.

use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected symptomatic persons per day starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetRow {
    date: NaiveDate,
    symptomatic_7day_avg: f64,
}

impl TargetSeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Calibration(
                "target values must be non-negative".into(),
            ));
        }
        Ok(TargetSeries { start, values })
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.values.len()).map(|i| self.start + chrono::Days::new(i as u64))
    }

    /// Values for `n` days from `from`; errors if the series does not cover
    /// them.
    pub fn window(&self, from: NaiveDate, n: usize) -> Result<&[f64]> {
        let off = (from - self.start).num_days();
        if off < 0 || off as usize + n > self.values.len() {
            return Err(Error::Calibration(format!(
                "target covers {} days from {}, need {n} days from {from}",
                self.values.len(),
                self.start
            )));
        }
        Ok(&self.values[off as usize..off as usize + n])
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut rows: Vec<TargetRow> = Vec::new();
        for r in rdr.deserialize() {
            rows.push(r?);
        }
        let first = rows
            .first()
            .ok_or_else(|| Error::Calibration(format!("{} has no rows", path.display())))?
            .date;
        for (i, r) in rows.iter().enumerate() {
            if r.date != first + chrono::Days::new(i as u64) {
                return Err(Error::Calibration(format!(
                    "target dates are not contiguous at {}",
                    r.date
                )));
            }
        }
        TargetSeries::new(
            first,
            rows.into_iter().map(|r| r.symptomatic_7day_avg).collect(),
        )
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (date, v) in self.dates().zip(&self.values) {
            wtr.serialize(TargetRow {
                date,
                symptomatic_7day_avg: *v,
            })?;
        }
        wtr.flush().map_err(|e| Error::io("target", e))?;
        Ok(())
    }
}

/// Trailing 7-day mean (current day and the six before); the first days
/// average over the days available.
pub fn seven_day_average(daily: &[f64]) -> Result<Vec<f64>> {
    if daily.is_empty() {
        return Err(Error::Calibration("cannot average an empty series".into()));
    }
    Ok((0..daily.len())
        .map(|i| {
            let w = &daily[i.saturating_sub(6)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

pub fn mean_absolute_error(sim: &[f64], target: &[f64]) -> Result<f64> {
    if sim.len() != target.len() {
        return Err(Error::Calibration(format!(
            "series lengths differ: {} simulated vs {} target days",
            sim.len(),
            target.len()
        )));
    }
    if sim.is_empty() {
        return Err(Error::Calibration("empty series".into()));
    }
    Ok(sim
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / sim.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub candidates1: Vec<f64>,
    pub candidates2: Vec<f64>,
    /// `mean_error[i][j]` for `(candidates1[i], candidates2[j])`.
    pub mean_error: Vec<Vec<f64>>,
    pub best: (f64, f64),
}

impl GridResult {
    /// Rows are first-interval candidates, columns second-interval ones.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("beta_interval1");
        for c in &self.candidates2 {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c1, row) in self.candidates1.iter().zip(&self.mean_error) {
            s.push_str(&c1.to_string());
            for e in row {
                s.push_str(&format!(",{e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Mean of `error(β₁, β₂, seed)` over `seeds` for every candidate pair;
/// the argmin with ties going to the lexicographically smaller pair.
pub fn grid_search<F>(
    candidates1: &[f64],
    candidates2: &[f64],
    seeds: &[u64],
    error: F,
) -> Result<GridResult>
where
    F: Fn(f64, f64, u64) -> Result<f64> + Sync,
{
    if candidates1.is_empty() || candidates2.is_empty() {
        return Err(Error::Calibration("empty candidate list".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Calibration("need at least one run per cell".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..candidates1.len())
        .flat_map(|i| {
            (0..candidates2.len()).flat_map(move |j| seeds.iter().map(move |s| (i, j, *s)))
        })
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, j, s)| error(candidates1[i], candidates2[j], s))
        .collect::<Result<_>>()?;
    let n = seeds.len();
    let mut mean_error = vec![vec![0.0; candidates2.len()]; candidates1.len()];
    for (k, chunk) in errors.chunks(n).enumerate() {
        mean_error[k / candidates2.len()][k % candidates2.len()] =
            chunk.iter().sum::<f64>() / n as f64;
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for (i, row) in mean_error.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let cand = (candidates1[i], candidates2[j], *e);
            best = match best {
                None => Some(cand),
                Some(b) => {
                    let better = e
                        .total_cmp(&b.2)
                        .then(cand.0.total_cmp(&b.0))
                        .then(cand.1.total_cmp(&b.1));
                    Some(if better.is_lt() { cand } else { b })
                }
            };
        }
    }
    let (b1, b2, _) = best.expect("non-empty grid");
    Ok(GridResult {
        candidates1: candidates1.to_vec(),
        candidates2: candidates2.to_vec(),
        mean_error,
        best: (b1, b2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunCount {
    pub runs: usize,
    /// False when the criterion only holds vacuously at the end of the
    /// sequence.
    pub converged: bool,
}

/// Smallest `K` such that the cumulative means `c_k` satisfy
/// `|c_{k+1} − c_k| / c_k < threshold_pct/100` for every `k ≥ K`.
pub fn runs_to_threshold(metrics: &[f64], threshold_pct: f64) -> Result<RunCount> {
    if metrics.len() < 2 {
        return Err(Error::Calibration("need at least two runs".into()));
    }
    if !(threshold_pct >= 0.0) {
        return Err(Error::Calibration("threshold must be non-negative".into()));
    }
    let thr = threshold_pct / 100.0;
    let mut cum = Vec::with_capacity(metrics.len());
    let mut acc = 0.0;
    for (k, m) in metrics.iter().enumerate() {
        acc += m;
        cum.push(acc / (k + 1) as f64);
    }
    let ok = |k: usize| {
        let (a, b) = (cum[k], cum[k + 1]);
        let d = (b - a).abs();
        if a == 0.0 {
            d == 0.0
        } else {
            d / a.abs() < thr
        }
    };
    // Positions are 1-based: the pair (c_k, c_{k+1}) is index k − 1.
    let mut runs = metrics.len();
    for k in (0..metrics.len() - 1).rev() {
        if ok(k) {
            runs = k + 1;
        } else {
            break;
        }
    }
    Ok(RunCount {
        runs,
        converged: runs < metrics.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetric {
    pub run: u32,
    pub seed: u64,
    pub mae: f64,
}

pub fn write_run_metrics<W: std::io::Write>(rows: &[RunMetric], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(["run", "seed", "mae"])?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("run metrics", e))?;
    Ok(())
}

/// Reads one numeric column of a metrics CSV in row order.
pub fn read_metric_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| {
            Error::Calibration(format!("{} has no column '{column}'", path.display()))
        })?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v: f64 = rec
            .get(idx)
            .and_then(|s| s.trim().parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| {
                Error::Calibration(format!(
                    "row {}: '{column}' is not a finite number",
                    line + 2
                ))
            })?;
        out.push(v);
    }
    Ok(out)
}
