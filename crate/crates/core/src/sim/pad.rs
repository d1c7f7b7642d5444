//! Forward model of the pad: nonlinear elastic stack with a rate term and a
//! single relaxation mode, read out through a linear force-to-pressure map
//! that saturates at the transducer ceiling.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PadParams {
    /// Pa per N.
    pub a: f64,
    /// Pa at zero force.
    pub b: f64,
    /// Relaxation time constant, s.
    pub tau: f64,
    /// Force fraction retained once relaxation completes.
    pub r: f64,
    /// Transducer ceiling, Pa.
    pub p_sat: f64,
    /// Linear stiffness, N/mm.
    pub k1: f64,
    /// Cubic stiffness, N/mm^3.
    pub k3: f64,
    /// Rate (damping) coefficient, N s/mm.
    pub c_h: f64,
    /// Pressure drop per degree of bending, Pa/deg.
    pub kappa_bend: f64,
    /// Additive Gaussian pressure noise, Pa.
    pub noise_sigma: f64,
}

impl Default for PadParams {
    fn default() -> Self {
        Self {
            a: 30.7,
            b: 13.9,
            tau: 26.6,
            r: 0.5,
            p_sat: 3114.0,
            // about 100 N at 7 mm
            k1: 5.0,
            k3: 0.19,
            c_h: 2.0,
            kappa_bend: 2.0,
            noise_sigma: 5.0,
        }
    }
}

impl PadParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadParams(m.to_string()));
        let all = [self.a, self.b, self.tau, self.r, self.p_sat, self.k1, self.k3, self.c_h, self.kappa_bend, self.noise_sigma];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("pad parameters must be finite");
        }
        if self.a <= 0.0 {
            return bad("a must be > 0");
        }
        if self.tau <= 0.0 {
            return bad("tau must be > 0");
        }
        if !(0.0..=1.0).contains(&self.r) {
            return bad("r must lie in [0, 1]");
        }
        if self.p_sat <= 0.0 {
            return bad("p_sat must be > 0");
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be >= 0");
        }
        if self.k1 < 0.0 || self.k3 < 0.0 || self.k1 + self.k3 == 0.0 || self.c_h < 0.0 {
            return bad("stiffness terms must be >= 0 and not both zero; c_h >= 0");
        }
        Ok(())
    }

    pub fn elastic_force(&self, d_mm: f64) -> f64 {
        self.k1 * d_mm + self.k3 * d_mm.powi(3)
    }

    /// Displacement producing `force_n` on the elastic curve (Newton on the cubic).
    pub fn displacement_for_force(&self, force_n: f64) -> f64 {
        if force_n <= 0.0 {
            return 0.0;
        }
        let mut d = if self.k1 > 0.0 { force_n / self.k1 } else { (force_n / self.k3).cbrt() };
        for _ in 0..60 {
            let f = self.elastic_force(d) - force_n;
            let df = self.k1 + 3.0 * self.k3 * d * d;
            let step = f / df;
            d -= step;
            if step.abs() <= 1e-14 * d.abs().max(1.0) {
                break;
            }
        }
        d.max(0.0)
    }

    /// Pressure before noise and saturation.
    pub fn raw_pressure(&self, force_n: f64, bend_deg: f64) -> f64 {
        self.a * force_n + self.b - self.kappa_bend * bend_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PadState {
    /// Compression, mm.
    pub d: f64,
    /// Force lost to relaxation so far, N.
    pub f_relax: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadInput {
    pub d_next: f64,
    pub bend: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadReading {
    pub force: f64,
    pub pressure: f64,
}

/// Adds noise and clips at the transducer ceiling.
pub fn measure(p_raw: f64, params: &PadParams, rng: &mut impl Rng) -> f64 {
    let noisy = if params.noise_sigma > 0.0 {
        let n = Normal::new(0.0, params.noise_sigma).expect("sigma validated");
        p_raw + n.sample(rng)
    } else {
        p_raw
    };
    noisy.min(params.p_sat)
}

/// Advances the pad by `dt` to compression `input.d_next`.
///
/// The relaxed force follows `(1 - r) * f_e(d)` with time constant `tau`,
/// integrated exactly for a piecewise-constant target, so that under held
/// compression the force decays as `r f_e + (f_hold - r f_e) exp(-t / tau)`.
pub fn step_pad(
    state: &PadState,
    input: PadInput,
    dt: f64,
    params: &PadParams,
    rng: &mut impl Rng,
) -> Result<(PadState, PadReading), SimError> {
    if !input.d_next.is_finite() || !input.bend.is_finite() {
        return Err(SimError::NonFiniteInput);
    }
    if !(dt > 0.0) {
        return Err(SimError::BadParams(format!("dt must be > 0, got {dt}")));
    }
    let d_next = input.d_next.max(0.0);
    let f_e = params.elastic_force(d_next);
    let f_c = (params.c_h * (d_next - state.d) / dt).max(-f_e);
    let target = (1.0 - params.r) * f_e;
    let decay = (-dt / params.tau).exp();
    let f_relax = (target + (state.f_relax - target) * decay).max(0.0);
    let force = (f_e + f_c - f_relax).max(0.0);
    let pressure = measure(params.raw_pressure(force, input.bend), params, rng);
    Ok((PadState { d: d_next, f_relax, t: state.t + dt }, PadReading { force, pressure }))
}
