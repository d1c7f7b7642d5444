//! Cycle segmentation, percent-cycle normalization, ensemble statistics and
//! steady-state extraction by minimum coefficient of variation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::check_uniform;
use crate::model::TimeSeries;

/// Regularizer in the CoV denominator, Pa.
pub const COV_EPSILON: f64 = 1e-9;
pub const MIN_CYCLE_SAMPLES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("cycle boundary ({0} s, {1} s) outside the series or overlapping its neighbour")]
    BoundaryOutOfRange(f64, f64),
    #[error("cycle {index} has {samples} samples, need at least {min}")]
    TooShortCycle { index: usize, samples: usize, min: usize },
    #[error("no cycles to summarize")]
    EmptyCycleSet,
    #[error("series spans {samples} samples but the window needs {window}")]
    SeriesTooShort { samples: usize, window: usize },
    #[error("cycle set is not normalized")]
    NotNormalized,
    #[error("sampling is not uniform")]
    NonUniform,
    #[error("n_points must be >= 2")]
    BadPointCount,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleSet {
    pub cycles: Vec<TimeSeries>,
    pub boundaries: Vec<(f64, f64)>,
    /// `n_cycles x n_points` once normalized, empty before.
    pub normalized: Vec<Vec<f64>>,
    /// Percent-cycle positions, 0..=100.
    pub grid: Vec<f64>,
}

impl CycleSet {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        !self.grid.is_empty() && self.normalized.len() == self.cycles.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub value: f64,
    pub window_start: f64,
    pub window_len: f64,
    pub cov: f64,
}

/// Slices `x` into `[start, end)` windows. Boundaries must be increasing and
/// disjoint and lie inside the series span.
pub fn segment_cycles(x: &TimeSeries, boundaries: &[(f64, f64)]) -> Result<CycleSet, CycleError> {
    let (lo, hi) = match (x.start_s(), x.end_s()) {
        (Some(a), Some(b)) => (a, b),
        _ if boundaries.is_empty() => (0.0, 0.0),
        _ => return Err(CycleError::BoundaryOutOfRange(boundaries[0].0, boundaries[0].1)),
    };
    let tol = 1e-9;
    // half-open windows may end one sample period past the last timestamp
    let period = x.sample_rate().map_or(0.0, |fs| 1.0 / fs);
    let mut cycles = Vec::with_capacity(boundaries.len());
    let mut prev_end = f64::NEG_INFINITY;
    for (i, &(s, e)) in boundaries.iter().enumerate() {
        if !(s < e) || s < lo - tol || e > hi + period + tol || s < prev_end - tol {
            return Err(CycleError::BoundaryOutOfRange(s, e));
        }
        prev_end = e;
        let c = x.slice_time(s, e);
        if c.len() < MIN_CYCLE_SAMPLES {
            return Err(CycleError::TooShortCycle { index: i, samples: c.len(), min: MIN_CYCLE_SAMPLES });
        }
        cycles.push(c);
    }
    Ok(CycleSet { cycles, boundaries: boundaries.to_vec(), normalized: Vec::new(), grid: Vec::new() })
}

/// Percent grid of `n` points including both endpoints.
pub fn percent_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 100.0 * k as f64 / (n - 1) as f64).collect()
}

/// Linear interpolation of `v` (samples equally spaced in index) onto `n` points.
pub fn resample_row(v: &[f64], n: usize) -> Vec<f64> {
    let m = v.len();
    (0..n)
        .map(|k| {
            if k == n - 1 {
                return v[m - 1];
            }
            let pos = k as f64 * (m - 1) as f64 / (n - 1) as f64;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if frac == 0.0 || i + 1 >= m {
                v[i.min(m - 1)]
            } else {
                v[i] + (v[i + 1] - v[i]) * frac
            }
        })
        .collect()
}

/// Maps every cycle onto `n_points` percent-cycle positions by linear
/// interpolation in sample index.
pub fn normalize_cycles(mut cs: CycleSet, n_points: usize) -> Result<CycleSet, CycleError> {
    if n_points < 2 {
        return Err(CycleError::BadPointCount);
    }
    let mut rows = Vec::with_capacity(cs.cycles.len());
    for (i, c) in cs.cycles.iter().enumerate() {
        if c.len() < 2 {
            return Err(CycleError::TooShortCycle { index: i, samples: c.len(), min: 2 });
        }
        rows.push(resample_row(c.values(), n_points));
    }
    cs.normalized = rows;
    cs.grid = percent_grid(n_points);
    Ok(cs)
}

/// Pointwise mean and sample SD (n - 1 denominator, 0 for a single cycle).
pub fn ensemble_stats(cs: &CycleSet) -> Result<(Vec<f64>, Vec<f64>), CycleError> {
    if cs.normalized.is_empty() {
        return Err(if cs.cycles.is_empty() { CycleError::EmptyCycleSet } else { CycleError::NotNormalized });
    }
    let n = cs.normalized.len();
    let p = cs.normalized[0].len();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        let first = cs.normalized[0][j];
        if cs.normalized.iter().all(|r| r[j] == first) {
            mean[j] = first;
            continue;
        }
        let m = cs.normalized.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        mean[j] = m;
        if n > 1 {
            let ss: f64 = cs.normalized.iter().map(|r| (r[j] - m).powi(2)).sum();
            sd[j] = (ss / (n - 1) as f64).sqrt();
        }
    }
    Ok((mean, sd))
}

/// Writes `pct,mean,sd,cycle_1..cycle_n`.
pub fn write_ensemble_csv<W: Write>(cs: &CycleSet, mut w: W) -> Result<(), CycleError> {
    let (mean, sd) = ensemble_stats(cs)?;
    let io = |e: std::io::Error| CycleError::Io(e.to_string());
    let mut header = String::from("pct,mean,sd");
    for k in 1..=cs.normalized.len() {
        header.push_str(&format!(",cycle_{k}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for j in 0..cs.grid.len() {
        let mut line = format!("{},{},{}", cs.grid[j], mean[j], sd[j]);
        for r in &cs.normalized {
            line.push_str(&format!(",{}", r[j]));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    Ok(())
}

fn uniform_rate(x: &TimeSeries) -> Result<f64, CycleError> {
    let fs = x.sample_rate().ok_or(CycleError::NonUniform)?;
    check_uniform(x, fs).map_err(|_| CycleError::NonUniform)?;
    Ok(fs)
}

fn window_secs(w: usize, fs: f64) -> f64 {
    (w as f64 * (1e6 / fs).round()) / 1e6
}

fn window_cov(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt() / (mean.abs() + COV_EPSILON))
}

/// Window of `round(window_len * fs)` samples with the lowest
/// `sd / (|mean| + eps)` (sample SD), earliest on ties.
pub fn steady_state_cov(x: &TimeSeries, window_len: f64) -> Result<SteadyState, CycleError> {
    let v = x.values();
    let fs = match x.len() {
        0 | 1 => return Err(CycleError::SeriesTooShort { samples: x.len(), window: 2 }),
        _ => uniform_rate(x)?,
    };
    let w = ((window_len * fs).round() as usize).max(2);
    if w > v.len() {
        return Err(CycleError::SeriesTooShort { samples: v.len(), window: w });
    }
    // prefix sums on mean-shifted data
    let shift = v.iter().sum::<f64>() / v.len() as f64;
    let mut s1 = vec![0.0; v.len() + 1];
    let mut s2 = vec![0.0; v.len() + 1];
    for (i, &y) in v.iter().enumerate() {
        let d = y - shift;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    let wf = w as f64;
    let covs: Vec<f64> = (0..=v.len() - w)
        .map(|i| {
            let a = s1[i + w] - s1[i];
            let b = s2[i + w] - s2[i];
            let var = ((b - a * a / wf) / (wf - 1.0)).max(0.0);
            var.sqrt() / ((a / wf + shift).abs() + COV_EPSILON)
        })
        .collect();
    let min = covs.iter().cloned().fold(f64::INFINITY, f64::min);
    // candidates within rounding of the minimum are re-scored exactly
    let slack = 1e-9 * min.max(1e-12);
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &c) in covs.iter().enumerate() {
        if c <= min + slack {
            let (mean, cov) = window_cov(&v[i..i + w]);
            if best.is_none_or(|b| cov < b.2) {
                best = Some((i, mean, cov));
            }
        }
    }
    let (i, value, cov) = best.expect("at least one window");
    Ok(SteadyState { value, window_start: x.times_s()[i], window_len: window_secs(w, fs), cov })
}

/// Brute-force reference scan, O(n w).
pub fn steady_state_cov_exhaustive(x: &TimeSeries, window_len: f64) -> Result<SteadyState, CycleError> {
    let v = x.values();
    let fs = uniform_rate(x)?;
    let w = ((window_len * fs).round() as usize).max(2);
    if w > v.len() {
        return Err(CycleError::SeriesTooShort { samples: v.len(), window: w });
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 0..=v.len() - w {
        let (mean, cov) = window_cov(&v[i..i + w]);
        if best.is_none_or(|b| cov < b.2) {
            best = Some((i, mean, cov));
        }
    }
    let (i, value, cov) = best.unwrap();
    Ok(SteadyState { value, window_start: x.times_s()[i], window_len: window_secs(w, fs), cov })
}
