//! Signal conditioning applied before every analysis: zero-phase lowpass,
//! rest-window offset removal and linear-interpolation rate conversion.

use thiserror::Error;

use crate::model::{secs_to_micros, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("sampling is not uniform at {expected_hz} Hz (interval {bad_interval_s} s at index {index})")]
    NonUniformSampling { expected_hz: f64, bad_interval_s: f64, index: usize },
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },
    #[error("series of {len} samples is too short (need at least {min})")]
    TooShort { len: usize, min: usize },
    #[error("window [{t0}, {t1}] s not inside the series span")]
    WindowOutOfRange { t0: f64, t1: f64 },
    #[error("only {found} samples inside the rest window (need {min})")]
    TooFewSamples { found: usize, min: usize },
    #[error("series is empty")]
    EmptySeries,
    #[error("target rate must be positive, got {0}")]
    BadRate(f64),
}

pub type Result<T> = std::result::Result<T, DspError>;

const ORDER: usize = 2;
const MIN_OFFSET_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn new(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(DspError::CutoffOutOfRange { cutoff: cutoff_hz, nyquist });
        }
        Ok(Self { cutoff_hz, sample_rate_hz })
    }
}

/// Direct-form-II-transposed second-order section, normalised so `a0 == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Second-order Butterworth lowpass via the bilinear transform with the
    /// cutoff prewarped, so the single-pass -3 dB point sits at `cutoff_hz`.
    pub fn butterworth_lowpass(spec: FilterSpec) -> Self {
        let k = (std::f64::consts::PI * spec.cutoff_hz / spec.sample_rate_hz).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        }
    }

    /// State that makes a constant input of 1.0 produce a constant output
    /// from the first sample.
    fn steady_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z1 = dc - b0;
        let z0 = b2 - a2 * dc;
        [z1, z0]
    }

    fn run(&self, x: &mut [f64]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let zi = self.steady_state();
        let mut s1 = zi[0] * x[0];
        let mut s2 = zi[1] * x[0];
        for xi in x.iter_mut() {
            let inp = *xi;
            let y = b0 * inp + s1;
            s1 = b1 * inp - a1 * y + s2;
            s2 = b2 * inp - a2 * y;
            *xi = y;
        }
    }

    fn forward_backward(&self, buf: &mut [f64]) {
        self.run(buf);
        buf.reverse();
        self.run(buf);
        buf.reverse();
    }
}

/// Verifies spacing against the nominal rate within 1%.
pub fn check_uniform(x: &TimeSeries, rate_hz: f64) -> Result<()> {
    let expected = 1e6 / rate_hz;
    for (i, w) in x.times_us().windows(2).enumerate() {
        let dt = (w[1] - w[0]) as f64;
        if (dt - expected).abs() > 0.01 * expected {
            return Err(DspError::NonUniformSampling {
                expected_hz: rate_hz,
                bad_interval_s: dt * 1e-6,
                index: i + 1,
            });
        }
    }
    Ok(())
}

fn odd_reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    out
}

/// Zero-phase second-order Butterworth lowpass.
///
/// The signal is extended at both ends by odd reflection (`3 * (order + 1)`
/// samples, clipped to `len - 1`), filters start from their steady state, and
/// the forward-backward and backward-forward passes are averaged so the
/// result commutes exactly with time reversal. Magnitude response is the
/// single-pass response squared (-6 dB at the cutoff).
pub fn lowpass_zero_phase(x: &TimeSeries, spec: FilterSpec) -> Result<TimeSeries> {
    FilterSpec::new(spec.cutoff_hz, spec.sample_rate_hz)?;
    let min = 3 * ORDER;
    if x.len() < min {
        return Err(DspError::TooShort { len: x.len(), min });
    }
    check_uniform(x, spec.sample_rate_hz)?;
    Ok(x.with_values(filtfilt(&Biquad::butterworth_lowpass(spec), x.values())))
}

/// Raw-slice version of [`lowpass_zero_phase`] without the timebase checks.
pub fn filtfilt(bq: &Biquad, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * (ORDER + 1)).min(n - 1);
    let mut fb = odd_reflect_pad(x, pad);
    let mut bf: Vec<f64> = fb.iter().rev().copied().collect();
    bq.forward_backward(&mut fb);
    bq.forward_backward(&mut bf);
    bf.reverse();
    (0..n).map(|i| 0.5 * (fb[pad + i] + bf[pad + i])).collect()
}

/// Subtracts the mean over `t0 <= t <= t1`.
pub fn offset_by_rest(x: &TimeSeries, t0: f64, t1: f64) -> Result<TimeSeries> {
    let (start, end) = match (x.start_s(), x.end_s()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(DspError::EmptySeries),
    };
    let (a, b) = (secs_to_micros(t0), secs_to_micros(t1));
    if !(t0 <= t1) || a < secs_to_micros(start) || b > secs_to_micros(end) {
        return Err(DspError::WindowOutOfRange { t0, t1 });
    }
    let inside: Vec<f64> = x
        .times_us()
        .iter()
        .zip(x.values())
        .filter(|(&t, _)| t >= a && t <= b)
        .map(|(_, &v)| v)
        .collect();
    if inside.len() < MIN_OFFSET_SAMPLES {
        return Err(DspError::TooFewSamples { found: inside.len(), min: MIN_OFFSET_SAMPLES });
    }
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    Ok(x.map_values(|v| v - mean))
}

/// Resamples onto `t_first + k / target_rate` for every grid point not past
/// the last sample, by linear interpolation.
pub fn resample(x: &TimeSeries, target_rate: f64) -> Result<TimeSeries> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(DspError::BadRate(target_rate));
    }
    let t = x.times_us();
    let (&t0, &t_last) = match (t.first(), t.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(DspError::EmptySeries),
    };
    let step = 1e6 / target_rate;
    let mut grid = Vec::new();
    let mut vals = Vec::new();
    let mut k: u64 = 0;
    loop {
        let tk = t0 + (k as f64 * step).round() as i64;
        if tk > t_last {
            break;
        }
        // inside the span by construction
        vals.push(x.value_at_us(tk as f64).expect("grid inside span"));
        grid.push(tk);
        k += 1;
    }
    let out = TimeSeries::from_micros(grid, vals, x.unit()).expect("grid strictly increasing");
    Ok(out.with_rate_hint(target_rate))
}
