//! Least-squares calibration, exponential relaxation fitting and the
//! torque/pressure condition correlation pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, DspError, FilterSpec};
use crate::model::{merge_on_grid, ModelError, TimeSeries, Unit};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("x has zero variance")]
    DegenerateX,
    #[error("time stamps must be strictly increasing")]
    NonIncreasingTime,
    #[error("signal is flat; decay constant is unidentifiable")]
    FlatSignal,
    #[error("no exponential decay component found")]
    NoDecay,
    #[error("non-finite input")]
    NonFinite,
    #[error("expected {expected} series, got {got}")]
    WrongUnit { expected: Unit, got: Unit },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, FitError>;

/// Ordinary least-squares line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
    pub residual_sd: f64,
    /// Set when `y` has zero variance; `r2` is then reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_y: bool,
}

impl LinFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Fits `y = slope * x + intercept` on centered data.
pub fn linfit(x: &[f64], y: &[f64]) -> Result<LinFit> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(FitError::TooFewPoints { need: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - my - slope * (xi - mx);
            r * r
        })
        .sum();
    let degenerate_y = syy == 0.0;
    let r2 = if degenerate_y { 0.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LinFit {
        slope,
        intercept,
        r2,
        n,
        residual_sd: (ss_res / (nf - 2.0)).sqrt(),
        degenerate_y,
    })
}

/// `y_inf + amplitude * exp(-t / tau)` fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub y_inf: f64,
    pub amplitude: f64,
    pub tau: f64,
    pub rmse: f64,
    pub iterations: usize,
}

impl ExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.y_inf + self.amplitude * (-t / self.tau).exp()
    }
}

const EXP_GRID_POINTS: usize = 200;
const EXP_MAX_ITER: usize = 100;
const EXP_STEP_TOL: f64 = 1e-10;

/// Sum of squared residuals of the shifted model `c + a * exp(-s / tau)`.
fn exp_sse(s: &[f64], y: &[f64], c: f64, a: f64, tau: f64) -> f64 {
    s.iter()
        .zip(y)
        .map(|(&si, &yi)| {
            let r = yi - c - a * (-si / tau).exp();
            r * r
        })
        .sum()
}

/// Best `(c, a)` for a fixed tau, and the resulting SSE.
fn exp_linear_part(s: &[f64], y: &[f64], tau: f64) -> Option<(f64, f64, f64)> {
    let n = s.len() as f64;
    let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
    for (&si, &yi) in s.iter().zip(y) {
        let e = (-si / tau).exp();
        se += e;
        see += e * e;
        sy += yi;
        sey += e * yi;
    }
    let det = n * see - se * se;
    if det.abs() <= f64::EPSILON * n * see {
        return None;
    }
    let a = (n * sey - se * sy) / det;
    let c = (sy - a * se) / n;
    Some((c, a, exp_sse(s, y, c, a, tau)))
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)] // row/column indices read clearer here
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * out[k];
        }
        out[row] = acc / m[row][row];
    }
    Some(out)
}

/// Gradient of the SSE objective w.r.t. `(y_inf, amplitude, tau)` for the
/// unshifted model. Exposed for convergence checks.
pub fn exp_objective_gradient(t: &[f64], y: &[f64], fit: &ExpFit) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-ti / fit.tau).exp();
        let r = yi - fit.y_inf - fit.amplitude * e;
        g[0] += -2.0 * r;
        g[1] += -2.0 * r * e;
        g[2] += -2.0 * r * fit.amplitude * e * ti / (fit.tau * fit.tau);
    }
    g
}

/// Fits a single decaying exponential with a free asymptote.
///
/// A log-spaced scan over tau in `[0.1, 10] x span` (with the two linear
/// parameters solved exactly at each tau) seeds a damped Gauss-Newton
/// refinement of all three parameters. Internally times are shifted to start
/// at zero; the reported amplitude refers to the caller's time origin.
#[allow(clippy::needless_range_loop)]
pub fn expfit(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    if t.len() != y.len() {
        return Err(FitError::LengthMismatch(t.len(), y.len()));
    }
    let n = t.len();
    if n < 10 {
        return Err(FitError::TooFewPoints { need: 10, got: n });
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitError::NonIncreasingTime);
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var < 1e-12 * mean * mean || var == 0.0 {
        return Err(FitError::FlatSignal);
    }

    let t0 = t[0];
    let s: Vec<f64> = t.iter().map(|&ti| ti - t0).collect();
    let span = s[n - 1];

    let (lo, hi) = ((0.1 * span).ln(), (10.0 * span).ln());
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for k in 0..EXP_GRID_POINTS {
        let tau = (lo + (hi - lo) * k as f64 / (EXP_GRID_POINTS - 1) as f64).exp();
        if let Some((c, a, sse)) = exp_linear_part(&s, y, tau) {
            if best.is_none_or(|b| sse < b.3) {
                best = Some((c, a, tau, sse));
            }
        }
    }
    let (mut c, mut a, mut tau, mut sse) = best.ok_or(FitError::NoDecay)?;

    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(var.sqrt());
    if a.abs() < 1e-9 * y_scale {
        return Err(FitError::NoDecay);
    }

    let mut iterations = 0;
    let mut lambda = 0.0;
    while iterations < EXP_MAX_ITER {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&si, &yi) in s.iter().zip(y) {
            let e = (-si / tau).exp();
            let r = yi - c - a * e;
            let j = [1.0, e, a * e * si / (tau * tau)];
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        // Damped step; lambda stays zero (pure Gauss-Newton) unless a step fails.
        let mut accepted = false;
        let mut step = [0.0; 3];
        for _ in 0..30 {
            let mut m = jtj;
            for p in 0..3 {
                m[p][p] *= 1.0 + lambda;
            }
            let Some(d) = solve3(m, jtr) else {
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
                continue;
            };
            let (nc, na, ntau) = (c + d[0], a + d[1], tau + d[2]);
            if ntau > 0.0 {
                let nsse = exp_sse(&s, y, nc, na, ntau);
                if nsse <= sse {
                    c = nc;
                    a = na;
                    tau = ntau;
                    sse = nsse;
                    step = d;
                    accepted = true;
                    lambda /= 10.0;
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }
        if !accepted {
            break;
        }
        let rel = [
            step[0].abs() / c.abs().max(y_scale),
            step[1].abs() / a.abs().max(y_scale),
            step[2].abs() / tau,
        ];
        if rel.iter().all(|&r| r < EXP_STEP_TOL) {
            break;
        }
    }

    if !(tau > 0.0) || !tau.is_finite() {
        return Err(FitError::NoDecay);
    }
    Ok(ExpFit {
        y_inf: c,
        amplitude: a * (t0 / tau).exp(),
        tau,
        rmse: (sse / nf).sqrt(),
        iterations,
    })
}

/// Torque-pressure linear association for one experimental condition.
///
/// Both channels are brought to a common 50 Hz grid, offset by their mean
/// over `rest_window`, zero-phase lowpassed at `cutoff_hz`, and regressed
/// (pressure on torque) over the whole pooled record.
pub fn condition_correlation(
    torque: &TimeSeries,
    pressure: &TimeSeries,
    rest_window: (f64, f64),
    cutoff_hz: f64,
) -> Result<LinFit> {
    const RATE: f64 = 50.0;
    if torque.unit() != Unit::NewtonMetre {
        return Err(FitError::WrongUnit { expected: Unit::NewtonMetre, got: torque.unit() });
    }
    if pressure.unit() != Unit::Pascal {
        return Err(FitError::WrongUnit { expected: Unit::Pascal, got: pressure.unit() });
    }
    let (start, end) = match (torque.start_s(), pressure.start_s(), torque.end_s(), pressure.end_s()) {
        (Some(a0), Some(b0), Some(a1), Some(b1)) => (a0.max(b0), a1.min(b1)),
        _ => return Err(DspError::EmptySeries.into()),
    };
    let n = ((end - start) * RATE + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|k| start + k as f64 / RATE).collect();
    let table = merge_on_grid(&[torque, pressure], &grid)?;
    let spec = FilterSpec::new(cutoff_hz, RATE)?;
    let prep = |i: usize| -> Result<TimeSeries> {
        let s = table.column_series(i)?.with_rate_hint(RATE);
        let s = dsp::offset_by_rest(&s, rest_window.0, rest_window.1)?;
        Ok(dsp::lowpass_zero_phase(&s, spec)?)
    };
    let tq = prep(0)?;
    let pa = prep(1)?;
    linfit(tq.values(), pa.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = linfit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert_eq!(f.r2, 1.0);
        assert_eq!(f.n, 10);
    }

    #[test]
    fn constant_y_gives_zero_r2() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let f = linfit(&x, &[5.0; 4]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r2, 0.0);
        assert!(f.degenerate_y);
    }

    #[test]
    fn linfit_errors() {
        assert!(matches!(linfit(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(FitError::DegenerateX)));
        assert!(matches!(linfit(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(FitError::LengthMismatch(3, 2))));
        assert!(matches!(linfit(&[1.0, 2.0], &[1.0, 2.0]), Err(FitError::TooFewPoints { .. })));
    }

    #[test]
    fn linfit_stable_with_large_offset() {
        let x: Vec<f64> = (0..100).map(|k| 1e8 + k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * (v - 1e8) + 3.0).collect();
        let f = linfit(&x, &y).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
    }

    fn decay(tau: f64, y_inf: f64, amp: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..=6000).map(|k| k as f64 / 50.0).collect();
        let y = t.iter().map(|&t| y_inf + amp * (-t / tau).exp()).collect();
        (t, y)
    }

    #[test]
    fn expfit_noiseless_recovers_tau() {
        let (t, y) = decay(26.6, 100.0, 50.0);
        let f = expfit(&t, &y).unwrap();
        assert!((f.tau - 26.6).abs() < 0.01, "{f:?}");
        assert!((f.y_inf - 100.0).abs() < 1e-6);
        assert!((f.amplitude - 50.0).abs() < 1e-6);
    }

    #[test]
    fn expfit_reports_amplitude_at_caller_origin() {
        let t: Vec<f64> = (0..500).map(|k| 10.0 + k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|&t| 3.0 + 40.0 * (-t / 7.0).exp()).collect();
        let f = expfit(&t, &y).unwrap();
        assert!((f.amplitude - 40.0).abs() < 1e-6 * 40.0, "{f:?}");
        assert!((f.eval(12.0) - y[40]).abs() < 1e-9);
    }

    #[test]
    fn expfit_errors() {
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        assert!(matches!(expfit(&t, &[5.0; 20]), Err(FitError::FlatSignal)));
        assert!(matches!(expfit(&t[..5], &[1.0; 5]), Err(FitError::TooFewPoints { .. })));
        let mut bad = t.clone();
        bad[3] = bad[2];
        assert!(matches!(expfit(&bad, &t), Err(FitError::NonIncreasingTime)));
    }

    #[test]
    fn solve3_matches_known_solution() {
        let m = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = [1.0, -2.0, 0.5];
        let rhs = [
            2.0 * x[0] + x[1],
            x[0] + 3.0 * x[1] + x[2],
            x[1] + 4.0 * x[2],
        ];
        let got = solve3(m, rhs).unwrap();
        for i in 0..3 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_proportional_to_torque() {
        let n = 1000;
        let v: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 / 50.0;
                if (5.0..10.0).contains(&(t % 15.0)) { 10.0 } else { 0.0 }
            })
            .collect();
        let torque = TimeSeries::uniform(0.0, 50.0, v.clone(), Unit::NewtonMetre).unwrap();
        let pressure = TimeSeries::uniform(0.0, 50.0, v.iter().map(|x| 20.0 * x).collect(), Unit::Pascal).unwrap();
        let f = condition_correlation(&torque, &pressure, (0.5, 2.0), 6.0).unwrap();
        assert!((f.slope - 20.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }
}
