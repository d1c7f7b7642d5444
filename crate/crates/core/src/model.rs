//! Unit-tagged domain types shared by the rest of the crate.
//!
//! Time is held as integer microseconds so that long sessions at 50 Hz or
//! 1000 Hz never accumulate float drift; the public API speaks seconds.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pascals per ADC count.
pub const PA_PER_COUNT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("length mismatch: {t} timestamps vs {v} values")]
    LengthMismatch { t: usize, v: usize },
    #[error("timestamps not strictly increasing at index {0}")]
    NonMonotonic(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("unit mismatch: {0} vs {1}")]
    UnitMismatch(Unit, Unit),
    #[error("time bases differ")]
    TimebaseMismatch,
    #[error("pressure {0} Pa outside the representable ADC range")]
    Range(f64),
    #[error("grid time {t_s} s outside series span [{start_s}, {end_s}] s")]
    GridOutOfRange { t_s: f64, start_s: f64, end_s: f64 },
    #[error("series is empty")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "Pa")]
    Pascal,
    #[serde(rename = "N")]
    Newton,
    #[serde(rename = "Nm")]
    NewtonMetre,
    #[serde(rename = "mm")]
    Millimetre,
    #[serde(rename = "deg")]
    Degree,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Pascal => "Pa",
            Unit::Newton => "N",
            Unit::NewtonMetre => "Nm",
            Unit::Millimetre => "mm",
            Unit::Degree => "deg",
            Unit::Dimensionless => "dimensionless",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "Pa" => Unit::Pascal,
            "N" => Unit::Newton,
            "Nm" | "N.m" | "N·m" => Unit::NewtonMetre,
            "mm" => Unit::Millimetre,
            "deg" => Unit::Degree,
            "dimensionless" | "1" => Unit::Dimensionless,
            other => return Err(ModelError::Csv(format!("unknown unit '{other}'"))),
        })
    }
}

pub fn secs_to_micros(t_s: f64) -> i64 {
    (t_s * 1e6).round() as i64
}

pub fn micros_to_secs(t_us: i64) -> f64 {
    t_us as f64 * 1e-6
}

/// Signed 16-bit transducer reading at a fixed 0.1 Pa/count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdcCode(pub i16);

impl AdcCode {
    pub fn counts(self) -> i16 {
        self.0
    }

    pub fn pascals(self) -> f64 {
        counts_to_pascals(self)
    }
}

pub fn counts_to_pascals(code: AdcCode) -> f64 {
    code.0 as f64 * PA_PER_COUNT
}

/// Rounds to the nearest count; values that would leave the i16 range are rejected.
pub fn pascals_to_counts(p: f64) -> Result<AdcCode> {
    if !p.is_finite() {
        return Err(ModelError::Range(p));
    }
    let c = (p / PA_PER_COUNT).round();
    if c < i16::MIN as f64 || c > i16::MAX as f64 {
        return Err(ModelError::Range(p));
    }
    Ok(AdcCode(c as i16))
}

/// Like [`pascals_to_counts`] but clamps to the representable range.
pub fn pascals_to_counts_saturating(p: f64) -> AdcCode {
    if p.is_nan() {
        return AdcCode(0);
    }
    let c = (p / PA_PER_COUNT).round().clamp(i16::MIN as f64, i16::MAX as f64);
    AdcCode(c as i16)
}

/// One host-side sample: device timestamp, per-channel pressure, wire sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureSample {
    pub timestamp_us: u64,
    pub channels: Vec<f64>,
    pub seq: u16,
}

impl PressureSample {
    pub fn t_s(&self) -> f64 {
        self.timestamp_us as f64 * 1e-6
    }

    /// First (and for this pad, only) channel.
    pub fn pa(&self) -> f64 {
        self.channels.first().copied().unwrap_or(f64::NAN)
    }
}

/// Linear interpolation on a sorted abscissa. Exact hits return the stored
/// ordinate unchanged. Returns `None` outside `[xs[0], xs[last]]`.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let i = xs.partition_point(|&xi| xi <= x);
    // i >= 1 because xs[0] <= x
    let lo = i - 1;
    if xs[lo] == x || lo == n - 1 {
        return Some(ys[lo]);
    }
    let frac = (x - xs[lo]) / (xs[lo + 1] - xs[lo]);
    Some(ys[lo] + (ys[lo + 1] - ys[lo]) * frac)
}

/// A uniformly-typed scalar channel over time. Equality ignores the rate hint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    t_us: Vec<i64>,
    v: Vec<f64>,
    unit: Unit,
    rate_hint: Option<f64>,
}

impl PartialEq for TimeSeries {
    fn eq(&self, other: &Self) -> bool {
        self.unit == other.unit && self.t_us == other.t_us && self.v == other.v
    }
}

impl TimeSeries {
    pub fn from_micros(t_us: Vec<i64>, v: Vec<f64>, unit: Unit) -> Result<Self> {
        if t_us.len() != v.len() {
            return Err(ModelError::LengthMismatch { t: t_us.len(), v: v.len() });
        }
        if let Some(i) = t_us.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ModelError::NonMonotonic(i + 1));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(Self { t_us, v, unit, rate_hint: None })
    }

    pub fn new(t_s: &[f64], v: Vec<f64>, unit: Unit) -> Result<Self> {
        Self::from_micros(t_s.iter().map(|&t| secs_to_micros(t)).collect(), v, unit)
    }

    /// Samples `value(t)` on `n` points starting at `start_s` with spacing `1/rate` s.
    pub fn uniform(start_s: f64, rate: f64, v: Vec<f64>, unit: Unit) -> Result<Self> {
        let t0 = secs_to_micros(start_s);
        let t_us = (0..v.len())
            .map(|k| t0 + (k as f64 * 1e6 / rate).round() as i64)
            .collect();
        Ok(Self::from_micros(t_us, v, unit)?.with_rate_hint(rate))
    }

    /// Builds a series from raw (possibly repeated or out-of-order) arrivals.
    /// Sorts by time and keeps the first value seen for each timestamp.
    pub fn ingest(mut samples: Vec<(i64, f64)>, unit: Unit) -> Result<Self> {
        samples.sort_by_key(|s| s.0);
        samples.dedup_by_key(|s| s.0);
        let (t, v) = samples.into_iter().unzip();
        Self::from_micros(t, v, unit)
    }

    pub fn with_rate_hint(mut self, rate: f64) -> Self {
        self.rate_hint = Some(rate);
        self
    }

    pub fn rate_hint(&self) -> Option<f64> {
        self.rate_hint
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn times_us(&self) -> &[i64] {
        &self.t_us
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn times_s(&self) -> Vec<f64> {
        self.t_us.iter().map(|&t| micros_to_secs(t)).collect()
    }

    pub fn start_s(&self) -> Option<f64> {
        self.t_us.first().map(|&t| micros_to_secs(t))
    }

    pub fn end_s(&self) -> Option<f64> {
        self.t_us.last().map(|&t| micros_to_secs(t))
    }

    pub fn duration_s(&self) -> f64 {
        match (self.t_us.first(), self.t_us.last()) {
            (Some(a), Some(b)) => micros_to_secs(b - a),
            _ => 0.0,
        }
    }

    /// Mean sampling rate estimated from the span; falls back to the hint.
    pub fn sample_rate(&self) -> Option<f64> {
        if self.len() >= 2 {
            Some((self.len() - 1) as f64 / self.duration_s())
        } else {
            self.rate_hint
        }
    }

    /// Linear interpolation at a time given in microseconds (may be fractional).
    pub fn value_at_us(&self, t_us: f64) -> Option<f64> {
        let n = self.t_us.len();
        if n == 0 || t_us < self.t_us[0] as f64 || t_us > self.t_us[n - 1] as f64 {
            return None;
        }
        let i = self.t_us.partition_point(|&ti| (ti as f64) <= t_us);
        let lo = i - 1;
        if self.t_us[lo] as f64 == t_us || lo == n - 1 {
            return Some(self.v[lo]);
        }
        let (t0, t1) = (self.t_us[lo] as f64, self.t_us[lo + 1] as f64);
        let frac = (t_us - t0) / (t1 - t0);
        Some(self.v[lo] + (self.v[lo + 1] - self.v[lo]) * frac)
    }

    pub fn value_at(&self, t_s: f64) -> Option<f64> {
        self.value_at_us(t_s * 1e6)
    }

    /// Samples with `start_s <= t < end_s`.
    pub fn slice_time(&self, start_s: f64, end_s: f64) -> TimeSeries {
        let a = secs_to_micros(start_s);
        let b = secs_to_micros(end_s);
        let lo = self.t_us.partition_point(|&t| t < a);
        let hi = self.t_us.partition_point(|&t| t < b);
        TimeSeries {
            t_us: self.t_us[lo..hi].to_vec(),
            v: self.v[lo..hi].to_vec(),
            unit: self.unit,
            rate_hint: self.rate_hint,
        }
    }

    /// Same timebase and unit, new values.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries {
            t_us: self.t_us.clone(),
            v: self.v.iter().map(|&x| f(x)).collect(),
            unit: self.unit,
            rate_hint: self.rate_hint,
        }
    }

    pub(crate) fn with_values(&self, v: Vec<f64>) -> TimeSeries {
        debug_assert_eq!(v.len(), self.v.len());
        TimeSeries { t_us: self.t_us.clone(), v, unit: self.unit, rate_hint: self.rate_hint }
    }

    /// `slope * v + intercept`, relabelled with `unit`. Used for calibration maps.
    pub fn affine(&self, slope: f64, intercept: f64, unit: Unit) -> TimeSeries {
        let mut out = self.map_values(|x| slope * x + intercept);
        out.unit = unit;
        out
    }

    pub fn reversed(&self) -> TimeSeries {
        let end = *self.t_us.last().unwrap_or(&0);
        let start = *self.t_us.first().unwrap_or(&0);
        TimeSeries {
            t_us: self.t_us.iter().rev().map(|&t| start + end - t).collect(),
            v: self.v.iter().rev().copied().collect(),
            unit: self.unit,
            rate_hint: self.rate_hint,
        }
    }

    fn check_compatible(&self, other: &TimeSeries) -> Result<()> {
        if self.unit != other.unit {
            return Err(ModelError::UnitMismatch(self.unit, other.unit));
        }
        if self.t_us != other.t_us {
            return Err(ModelError::TimebaseMismatch);
        }
        Ok(())
    }

    pub fn try_add(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.check_compatible(other)?;
        Ok(self.with_values(self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.check_compatible(other)?;
        Ok(self.with_values(self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect()))
    }

    /// Writes `t_s,<unit>` CSV. Times are exact decimal microseconds; values
    /// use the shortest representation that parses back to the same f64.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_s,{}", self.unit)?;
        for (&t, &v) in self.t_us.iter().zip(&self.v) {
            writeln!(w, "{},{}", format_micros(t), v)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(ModelError::Empty)??;
        let (t_col, unit_col) = header
            .split_once(',')
            .ok_or_else(|| ModelError::Csv(format!("bad header '{header}'")))?;
        if t_col.trim() != "t_s" {
            return Err(ModelError::Csv(format!("bad header '{header}'")));
        }
        let unit: Unit = unit_col.parse()?;
        let mut t = Vec::new();
        let mut v = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| ModelError::Csv(format!("line {}: '{line}'", lineno + 2)))?;
            let ts: f64 = a.trim().parse().map_err(|_| ModelError::Csv(format!("line {}: bad time", lineno + 2)))?;
            let vs: f64 = b.trim().parse().map_err(|_| ModelError::Csv(format!("line {}: bad value", lineno + 2)))?;
            t.push(secs_to_micros(ts));
            v.push(vs);
        }
        Self::from_micros(t, v, unit)
    }
}

fn format_micros(t_us: i64) -> String {
    let sign = if t_us < 0 { "-" } else { "" };
    let a = t_us.unsigned_abs();
    format!("{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
}

/// Several series interpolated onto a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTable {
    pub grid_s: Vec<f64>,
    pub units: Vec<Unit>,
    pub columns: Vec<Vec<f64>>,
}

impl AlignedTable {
    pub fn column_series(&self, i: usize) -> Result<TimeSeries> {
        TimeSeries::new(&self.grid_s, self.columns[i].clone(), self.units[i])
    }
}

/// Interpolates every series at every grid time; never extrapolates.
pub fn merge_on_grid(series: &[&TimeSeries], grid_s: &[f64]) -> Result<AlignedTable> {
    let mut columns = Vec::with_capacity(series.len());
    for s in series {
        let (start_s, end_s) = match (s.start_s(), s.end_s()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ModelError::Empty),
        };
        let col = grid_s
            .iter()
            .map(|&t| {
                s.value_at_us((t * 1e6).round())
                    .ok_or(ModelError::GridOutOfRange { t_s: t, start_s, end_s })
            })
            .collect::<Result<Vec<_>>>()?;
        columns.push(col);
    }
    Ok(AlignedTable {
        grid_s: grid_s.to_vec(),
        units: series.iter().map(|s| s.unit()).collect(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adc_examples() {
        assert_eq!(counts_to_pascals(AdcCode(0)), 0.0);
        assert_eq!(counts_to_pascals(AdcCode(31140)), 3114.0);
        assert_eq!(counts_to_pascals(AdcCode(-250)), -25.0);
    }

    #[test]
    fn adc_round_trip_all_codes() {
        for c in i16::MIN..=i16::MAX {
            assert_eq!(pascals_to_counts(counts_to_pascals(AdcCode(c))).unwrap(), AdcCode(c));
        }
    }

    #[test]
    fn adc_range_error() {
        assert!(matches!(pascals_to_counts(3276.9), Err(ModelError::Range(_))));
        assert!(matches!(pascals_to_counts(-3277.0), Err(ModelError::Range(_))));
        assert!(pascals_to_counts(3276.7).is_ok());
        assert_eq!(pascals_to_counts_saturating(1e9), AdcCode(i16::MAX));
    }

    #[test]
    fn identical_ramps_give_identical_columns() {
        let t: Vec<f64> = (0..101).map(|k| k as f64 * 0.01).collect();
        let a = TimeSeries::new(&t, t.clone(), Unit::Newton).unwrap();
        let b = a.clone();
        let grid: Vec<f64> = (0..51).map(|k| k as f64 * 0.02).collect();
        let tab = merge_on_grid(&[&a, &b], &grid).unwrap();
        assert_eq!(tab.columns[0], tab.columns[1]);
    }

    #[test]
    fn sine_1khz_onto_50hz_grid() {
        let n = 2001;
        let t: Vec<f64> = (0..n).map(|k| k as f64 / 1000.0).collect();
        let v = t.iter().map(|&t| (2.0 * std::f64::consts::PI * 2.0 * t).sin()).collect();
        let s = TimeSeries::new(&t, v, Unit::NewtonMetre).unwrap();
        let grid: Vec<f64> = (0..101).map(|k| k as f64 / 50.0).collect();
        let tab = merge_on_grid(&[&s], &grid).unwrap();
        let err = grid
            .iter()
            .zip(&tab.columns[0])
            .map(|(&t, &y)| (y - (2.0 * std::f64::consts::PI * 2.0 * t).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn grid_before_first_sample_is_rejected() {
        let s = TimeSeries::new(&[1.0, 2.0], vec![0.0, 1.0], Unit::Pascal).unwrap();
        assert!(matches!(merge_on_grid(&[&s], &[0.5]), Err(ModelError::GridOutOfRange { .. })));
    }

    #[test]
    fn exact_at_sample_times() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.013).collect();
        let v: Vec<f64> = (0..50).map(|k| (k as f64).sqrt() * 1.7).collect();
        let s = TimeSeries::new(&t, v.clone(), Unit::Pascal).unwrap();
        for (i, &tu) in s.times_us().iter().enumerate() {
            assert_eq!(s.value_at_us(tu as f64).unwrap(), v[i]);
        }
    }

    #[test]
    fn unit_mismatch_is_an_error() {
        let a = TimeSeries::new(&[0.0, 1.0], vec![1.0, 2.0], Unit::Pascal).unwrap();
        let b = TimeSeries::new(&[0.0, 1.0], vec![1.0, 2.0], Unit::Newton).unwrap();
        assert!(matches!(a.try_sub(&b), Err(ModelError::UnitMismatch(Unit::Pascal, Unit::Newton))));
        assert_eq!(a.try_sub(&a).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn ingest_dedups_and_sorts() {
        let s = TimeSeries::ingest(vec![(20, 2.0), (0, 0.0), (20, 9.0), (10, 1.0)], Unit::Pascal).unwrap();
        assert_eq!(s.times_us(), &[0, 10, 20]);
        assert_eq!(s.values(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn non_monotonic_rejected() {
        assert!(matches!(
            TimeSeries::from_micros(vec![0, 5, 5], vec![0.0; 3], Unit::Pascal),
            Err(ModelError::NonMonotonic(2))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = TimeSeries::new(&[-0.5, 0.0, 1.25, 1234.567891], vec![1.0 / 3.0, -2e-9, 3114.0, 7.0], Unit::NewtonMetre)
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,Nm\n-0.500000,"));
        let back = TimeSeries::read_csv(&buf[..]).unwrap();
        assert_eq!(back.times_us(), s.times_us());
        assert_eq!(back.values(), s.values());
    }
}
