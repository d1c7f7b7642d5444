//! Protocol generators for the bench and on-body experiments. Each run emits
//! a 50 Hz pressure stream, ground truth at the scenario's native rate and
//! event annotations at every phase boundary.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::pad::{measure, step_pad, PadInput, PadParams, PadState};
use super::SimError;
use crate::event::{Event, EventKind};
use crate::model::{secs_to_micros, TimeSeries, Unit};

pub const PRESSURE_RATE_HZ: f64 = 50.0;

/// Masses held in the hand during the curl protocols, kg.
pub const CURL_MASSES_KG: [f64; 5] = [0.0, 0.5, 1.0, 2.27, 4.54];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    RampHoldUnload,
    StepHoldRelax,
    DynamometerTrial,
    BicepFullCycles,
    BicepStepwise,
    Squats,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::RampHoldUnload,
        ScenarioName::StepHoldRelax,
        ScenarioName::DynamometerTrial,
        ScenarioName::BicepFullCycles,
        ScenarioName::BicepStepwise,
        ScenarioName::Squats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::RampHoldUnload => "ramp_hold_unload",
            ScenarioName::StepHoldRelax => "step_hold_relax",
            ScenarioName::DynamometerTrial => "dynamometer_trial",
            ScenarioName::BicepFullCycles => "bicep_full_cycles",
            ScenarioName::BicepStepwise => "bicep_stepwise",
            ScenarioName::Squats => "squats",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

/// Displacement-controlled compression test on the bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionParams {
    pub rate_mm_s: f64,
    pub peak_force_n: f64,
    pub hold_s: f64,
    pub rest_s: f64,
    pub truth_rate_hz: f64,
}

impl CompressionParams {
    pub fn ramp_default() -> Self {
        Self { rate_mm_s: 1.0, peak_force_n: 100.0, hold_s: 10.0, rest_s: 2.0, truth_rate_hz: 100.0 }
    }

    pub fn relax_default() -> Self {
        Self { hold_s: 120.0, peak_force_n: 20.0, ..Self::ramp_default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadLocation {
    AboveKnee,
    BelowKnee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorqueDirection {
    Extension,
    Flexion,
}

/// Default pad-force gain (N per N m) and slow disturbance RMS (Pa) per
/// condition. Flexion with the pad above the knee loads the pad directly;
/// the other three conditions register progressively less of the torque.
pub fn default_condition_coupling(location: PadLocation, direction: TorqueDirection) -> (f64, f64) {
    use PadLocation::*;
    use TorqueDirection::*;
    match (location, direction) {
        // ~200 Pa at 10 N m
        (AboveKnee, Flexion) => (200.0 / (30.7 * 10.0), 0.0),
        // ~60 Pa range
        (BelowKnee, Extension) => (60.0 / (30.7 * 10.0), 10.0),
        (BelowKnee, Flexion) => (30.0 / (30.7 * 10.0), 9.0),
        (AboveKnee, Extension) => (6.0 / (30.7 * 10.0), 9.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamometerParams {
    pub location: PadLocation,
    pub direction: TorqueDirection,
    pub n_trials: u32,
    pub rest_s: f64,
    pub hold_s: f64,
    pub target_nm: f64,
    pub rise_s: f64,
    pub torque_noise_nm: f64,
    pub truth_rate_hz: f64,
    /// Overrides the condition's default gain (N per N m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_n_per_nm: Option<f64>,
    /// Overrides the condition's default disturbance RMS (Pa).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_pa: Option<f64>,
}

impl Default for DynamometerParams {
    fn default() -> Self {
        Self {
            location: PadLocation::AboveKnee,
            direction: TorqueDirection::Flexion,
            n_trials: 4,
            rest_s: 5.0,
            hold_s: 5.0,
            target_nm: 10.0,
            rise_s: 0.5,
            torque_noise_nm: 0.05,
            truth_rate_hz: 1000.0,
            gain_n_per_nm: None,
            disturbance_pa: None,
        }
    }
}

impl DynamometerParams {
    pub fn condition_label(&self) -> String {
        let loc = match self.location {
            PadLocation::AboveKnee => "above_knee",
            PadLocation::BelowKnee => "below_knee",
        };
        let dir = match self.direction {
            TorqueDirection::Extension => "extension",
            TorqueDirection::Flexion => "flexion",
        };
        format!("{loc}_{dir}")
    }

    pub fn coupling(&self) -> (f64, f64) {
        let (g, d) = default_condition_coupling(self.location, self.direction);
        (self.gain_n_per_nm.unwrap_or(g), self.disturbance_pa.unwrap_or(d))
    }
}

/// Steady-state pad force as a function of joint angle (rows per mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleForceTable {
    pub angles_deg: Vec<f64>,
    pub masses_kg: Vec<f64>,
    /// `force_n[mass][angle]`.
    pub force_n: Vec<Vec<f64>>,
}

impl AngleForceTable {
    /// Curl defaults, written as the pressure rise above baseline they should
    /// produce at the default slope. Peak (150 deg) values: 2000 Pa with no
    /// load, 1200 Pa at 1 kg, 600-800 Pa for the other masses.
    pub fn curl_default() -> Self {
        let slope = PadParams::default().a;
        let pressure_pa = [
            [0.0, 700.0, 1250.0, 2000.0],
            [0.0, 320.0, 530.0, 800.0],
            [0.0, 430.0, 760.0, 1200.0],
            [0.0, 250.0, 440.0, 700.0],
            [0.0, 190.0, 370.0, 600.0],
        ];
        Self {
            angles_deg: vec![90.0, 120.0, 135.0, 150.0],
            masses_kg: CURL_MASSES_KG.to_vec(),
            force_n: pressure_pa.iter().map(|row| row.iter().map(|p| p / slope).collect()).collect(),
        }
    }

    /// Isometric holds: near-additive angle and mass effects with a weak
    /// interaction, as pressure rise above baseline (Pa) at the default slope.
    pub fn stepwise_default() -> Self {
        let slope = PadParams::default().a;
        let pressure_pa = [
            [0.0, 578.0, 791.0, 1100.0],
            [0.0, 405.0, 577.0, 825.0],
            [0.0, 463.0, 648.0, 917.0],
            [0.0, 391.0, 559.0, 802.0],
            [0.0, 376.0, 541.0, 779.0],
        ];
        Self {
            angles_deg: vec![90.0, 120.0, 135.0, 150.0],
            masses_kg: CURL_MASSES_KG.to_vec(),
            force_n: pressure_pa.iter().map(|row| row.iter().map(|p| p / slope).collect()).collect(),
        }
    }

    /// Thigh strap during squats: pressure rise grows with knee flexion.
    pub fn squat_default() -> Self {
        let slope = PadParams::default().a;
        Self {
            angles_deg: vec![0.0, 45.0, 90.0],
            masses_kg: vec![0.0],
            force_n: vec![vec![0.0, 150.0 / slope, 450.0 / slope]],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadParams(m.to_string()));
        if self.angles_deg.len() < 2 || self.angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return bad("table angles must be >= 2 and strictly increasing");
        }
        if self.masses_kg.is_empty() || self.force_n.len() != self.masses_kg.len() {
            return bad("table needs one force row per mass");
        }
        if self.force_n.iter().any(|r| r.len() != self.angles_deg.len() || r.iter().any(|f| !f.is_finite() || *f < 0.0)) {
            return bad("table rows must match the angle list and hold finite forces >= 0");
        }
        Ok(())
    }

    fn row(&self, mass_kg: f64) -> Result<&[f64], SimError> {
        self.masses_kg
            .iter()
            .position(|&m| (m - mass_kg).abs() < 1e-9)
            .map(|i| self.force_n[i].as_slice())
            .ok_or_else(|| SimError::BadParams(format!("mass {mass_kg} kg not in table {:?}", self.masses_kg)))
    }

    /// Linear in angle, clamped to the table's angle range.
    pub fn force(&self, angle_deg: f64, mass_kg: f64) -> Result<f64, SimError> {
        let row = self.row(mass_kg)?;
        let a = &self.angles_deg;
        let x = angle_deg.clamp(a[0], a[a.len() - 1]);
        Ok(crate::model::interp_linear(a, row, x).expect("clamped into range"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BicepFullParams {
    pub masses_kg: Vec<f64>,
    pub n_cycles: u32,
    pub cycle_s: f64,
    pub rest_s: f64,
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    /// Cycle-to-cycle multiplicative variability (SD).
    pub cycle_gain_sd: f64,
    pub table: AngleForceTable,
}

impl Default for BicepFullParams {
    fn default() -> Self {
        Self {
            masses_kg: CURL_MASSES_KG.to_vec(),
            n_cycles: 5,
            cycle_s: 4.0,
            rest_s: 3.0,
            min_angle_deg: 90.0,
            max_angle_deg: 150.0,
            cycle_gain_sd: 0.004,
            table: AngleForceTable::curl_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BicepStepParams {
    pub masses_kg: Vec<f64>,
    pub n_cycles: u32,
    pub pause_angles_deg: Vec<f64>,
    pub pause_s: f64,
    pub move_s: f64,
    pub rest_s: f64,
    pub min_angle_deg: f64,
    /// Hold-to-hold multiplicative variability (SD).
    pub rep_gain_sd: f64,
    /// Hold-to-hold additive variability (SD), Pa.
    pub rep_offset_sd_pa: f64,
    pub table: AngleForceTable,
}

impl Default for BicepStepParams {
    fn default() -> Self {
        Self {
            masses_kg: CURL_MASSES_KG.to_vec(),
            n_cycles: 5,
            pause_angles_deg: vec![120.0, 135.0, 150.0],
            pause_s: 4.0,
            move_s: 1.0,
            rest_s: 3.0,
            min_angle_deg: 90.0,
            rep_gain_sd: 0.0,
            rep_offset_sd_pa: 40.0,
            table: AngleForceTable::stepwise_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquatParams {
    pub stand_s: f64,
    pub n_reps: u32,
    pub cycle_s: f64,
    pub max_knee_deg: f64,
    pub rep_gain_sd: f64,
    pub table: AngleForceTable,
}

impl Default for SquatParams {
    fn default() -> Self {
        Self {
            stand_s: 4.0,
            n_reps: 10,
            cycle_s: 2.0,
            max_knee_deg: 90.0,
            rep_gain_sd: 0.03,
            table: AngleForceTable::squat_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", content = "params", rename_all = "snake_case")]
pub enum ScenarioParams {
    RampHoldUnload(CompressionParams),
    StepHoldRelax(CompressionParams),
    DynamometerTrial(DynamometerParams),
    BicepFullCycles(BicepFullParams),
    BicepStepwise(BicepStepParams),
    Squats(SquatParams),
}

impl ScenarioParams {
    pub fn default_for(name: ScenarioName) -> Self {
        match name {
            ScenarioName::RampHoldUnload => Self::RampHoldUnload(CompressionParams::ramp_default()),
            ScenarioName::StepHoldRelax => Self::StepHoldRelax(CompressionParams::relax_default()),
            ScenarioName::DynamometerTrial => Self::DynamometerTrial(DynamometerParams::default()),
            ScenarioName::BicepFullCycles => Self::BicepFullCycles(BicepFullParams::default()),
            ScenarioName::BicepStepwise => Self::BicepStepwise(BicepStepParams::default()),
            ScenarioName::Squats => Self::Squats(SquatParams::default()),
        }
    }

    pub fn name(&self) -> ScenarioName {
        match self {
            Self::RampHoldUnload(_) => ScenarioName::RampHoldUnload,
            Self::StepHoldRelax(_) => ScenarioName::StepHoldRelax,
            Self::DynamometerTrial(_) => ScenarioName::DynamometerTrial,
            Self::BicepFullCycles(_) => ScenarioName::BicepFullCycles,
            Self::BicepStepwise(_) => ScenarioName::BicepStepwise,
            Self::Squats(_) => ScenarioName::Squats,
        }
    }
}

/// A named protocol with its parameters, pad model and noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub params: ScenarioParams,
    pub seed: u64,
    pub pad: PadParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    seed: Option<u64>,
    #[serde(default)]
    params: toml::Table,
    #[serde(default)]
    pad: toml::Table,
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: toml::Table) -> Result<T, SimError> {
    let mut table = toml::Table::try_from(base).map_err(|e| SimError::BadParams(e.to_string()))?;
    for (k, v) in over {
        table.insert(k, v);
    }
    table.try_into().map_err(|e: toml::de::Error| SimError::BadParams(e.message().to_string()))
}

impl Scenario {
    pub fn new(name: ScenarioName, seed: u64) -> Self {
        Self { params: ScenarioParams::default_for(name), seed, pad: PadParams::default() }
    }

    pub fn name(&self) -> ScenarioName {
        self.params.name()
    }

    /// Parses a TOML description:
    ///
    /// ```toml
    /// scenario = "step_hold_relax"
    /// seed = 7
    /// [params]
    /// hold_s = 120.0
    /// [pad]
    /// noise_sigma = 2.0
    /// ```
    ///
    /// Unspecified keys take the scenario's defaults.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SimError::BadParams(e.message().to_string()))?;
        let name: ScenarioName = raw.scenario.parse()?;
        let params = match ScenarioParams::default_for(name) {
            ScenarioParams::RampHoldUnload(p) => ScenarioParams::RampHoldUnload(overlay(&p, raw.params)?),
            ScenarioParams::StepHoldRelax(p) => ScenarioParams::StepHoldRelax(overlay(&p, raw.params)?),
            ScenarioParams::DynamometerTrial(p) => ScenarioParams::DynamometerTrial(overlay(&p, raw.params)?),
            ScenarioParams::BicepFullCycles(p) => ScenarioParams::BicepFullCycles(overlay(&p, raw.params)?),
            ScenarioParams::BicepStepwise(p) => ScenarioParams::BicepStepwise(overlay(&p, raw.params)?),
            ScenarioParams::Squats(p) => ScenarioParams::Squats(overlay(&p, raw.params)?),
        };
        let pad = overlay(&PadParams::default(), raw.pad)?;
        Ok(Self { params, seed: raw.seed.unwrap_or(0), pad })
    }
}

/// Output of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub scenario: Scenario,
    /// 50 Hz measured pad pressure.
    pub pressure: TimeSeries,
    /// Ground-truth channels keyed by name ("force", "displacement", "torque", "angle").
    pub truth: BTreeMap<String, TimeSeries>,
    pub events: Vec<Event>,
}

fn positive(name: &str, v: f64) -> Result<(), SimError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::BadParams(format!("{name} must be > 0, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::BadParams(format!("{name} must be >= 0, got {v}")))
    }
}

fn at_least_one(name: &str, v: u32) -> Result<(), SimError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(SimError::BadParams(format!("{name} must be >= 1")))
    }
}

/// Runs `scenario` with pad model `pad`. Output is a pure function of the
/// inputs (seeded ChaCha8 noise).
pub fn run_scenario(scenario: &Scenario, pad: &PadParams) -> Result<SessionData, SimError> {
    pad.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut out = match &scenario.params {
        ScenarioParams::RampHoldUnload(p) | ScenarioParams::StepHoldRelax(p) => compression(p, pad, &mut rng)?,
        ScenarioParams::DynamometerTrial(p) => dynamometer(p, pad, &mut rng)?,
        ScenarioParams::BicepFullCycles(p) => bicep_full(p, pad, &mut rng)?,
        ScenarioParams::BicepStepwise(p) => bicep_stepwise(p, pad, &mut rng)?,
        ScenarioParams::Squats(p) => squats(p, pad, &mut rng)?,
    };
    for e in &mut out.2 {
        e.source.get_or_insert_with(|| "scenario".to_string());
    }
    out.2.sort_by_key(|e| e.t_us);
    Ok(SessionData {
        scenario: Scenario { pad: pad.clone(), ..scenario.clone() },
        pressure: out.0,
        truth: out.1,
        events: out.2,
    })
}

type Generated = (TimeSeries, BTreeMap<String, TimeSeries>, Vec<Event>);

fn us(t_s: f64) -> i64 {
    secs_to_micros(t_s)
}

fn pressure_series(values: Vec<f64>) -> TimeSeries {
    TimeSeries::uniform(0.0, PRESSURE_RATE_HZ, values, Unit::Pascal).expect("uniform grid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Rest,
    Load,
    Hold { until_s: f64 },
    Unload,
    Tail { until_s: f64 },
}

fn compression(p: &CompressionParams, pad: &PadParams, rng: &mut ChaCha8Rng) -> Result<Generated, SimError> {
    positive("rate_mm_s", p.rate_mm_s)?;
    positive("peak_force_n", p.peak_force_n)?;
    positive("hold_s", p.hold_s)?;
    non_negative("rest_s", p.rest_s)?;
    positive("truth_rate_hz", p.truth_rate_hz)?;
    let decim = p.truth_rate_hz / PRESSURE_RATE_HZ;
    if decim < 1.0 || decim.fract() != 0.0 {
        return Err(SimError::BadParams("truth_rate_hz must be an integer multiple of 50 Hz".into()));
    }
    let decim = decim as usize;
    let dt = 1.0 / p.truth_rate_hz;
    let d_max = pad.displacement_for_force(10.0 * p.peak_force_n) + 50.0;

    let mut events = vec![Event::new(0, EventKind::RestStart)];
    let mut state = PadState::default();
    let mut phase = if p.rest_s > 0.0 { Phase::Rest } else { Phase::Load };
    if phase == Phase::Load {
        events.push(Event::new(0, EventKind::LoadStart));
    }
    let (mut t_us, mut force, mut disp, mut pressure) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut i: usize = 0;
    loop {
        let t = i as f64 * dt;
        let d_next = match phase {
            Phase::Rest => {
                if t >= p.rest_s - 1e-9 {
                    phase = Phase::Load;
                    events.push(Event::new(us(t), EventKind::LoadStart));
                    state.d + p.rate_mm_s * dt
                } else {
                    0.0
                }
            }
            Phase::Load => state.d + p.rate_mm_s * dt,
            Phase::Hold { until_s } => {
                if t >= until_s - 1e-9 {
                    phase = Phase::Unload;
                    events.push(Event::new(us(t), EventKind::HoldEnd));
                    (state.d - p.rate_mm_s * dt).max(0.0)
                } else {
                    state.d
                }
            }
            Phase::Unload => (state.d - p.rate_mm_s * dt).max(0.0),
            Phase::Tail { .. } => 0.0,
        };
        if let Phase::Tail { until_s } = phase {
            if t > until_s + 1e-9 {
                break;
            }
        }
        let (next, reading) = step_pad(&state, PadInput { d_next, bend: 0.0 }, dt, pad, rng)?;
        state = next;
        t_us.push(us(t));
        force.push(reading.force);
        disp.push(state.d);
        if i.is_multiple_of(decim) {
            pressure.push(reading.pressure);
        }
        match phase {
            Phase::Load if reading.force >= p.peak_force_n => {
                let start = (i + 1) as f64 * dt;
                phase = Phase::Hold { until_s: start + p.hold_s };
                events.push(Event::new(us(start), EventKind::HoldStart));
            }
            Phase::Load if state.d > d_max => {
                return Err(SimError::BadParams(format!("peak force {} N not reached", p.peak_force_n)));
            }
            Phase::Unload if state.d == 0.0 => {
                phase = Phase::Tail { until_s: t + p.rest_s };
                events.push(Event::new(us(t), EventKind::UnloadEnd));
            }
            _ => {}
        }
        i += 1;
    }
    let mut truth = BTreeMap::new();
    truth.insert(
        "force".to_string(),
        TimeSeries::from_micros(t_us.clone(), force, Unit::Newton)?.with_rate_hint(p.truth_rate_hz),
    );
    truth.insert(
        "displacement".to_string(),
        TimeSeries::from_micros(t_us, disp, Unit::Millimetre)?.with_rate_hint(p.truth_rate_hz),
    );
    Ok((pressure_series(pressure), truth, events))
}

/// Piecewise profile with raised-cosine transitions between knots.
#[derive(Debug, Clone, Default)]
struct Profile {
    knots: Vec<(f64, f64)>,
}

impl Profile {
    fn start(t: f64, y: f64) -> Self {
        Self { knots: vec![(t, y)] }
    }

    fn end_time(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.0)
    }

    fn last(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.1)
    }

    /// Moves to `y` over `dur` seconds.
    fn to(&mut self, dur: f64, y: f64) -> &mut Self {
        let t = self.end_time() + dur;
        self.knots.push((t, y));
        self
    }

    /// Holds the current value for `dur` seconds.
    fn hold(&mut self, dur: f64) -> &mut Self {
        let y = self.last();
        self.to(dur, y)
    }

    fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let i = k.partition_point(|&(tk, _)| tk <= t);
        if i >= k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, y0) = k[i - 1];
        let (t1, y1) = k[i];
        if y0 == y1 || t1 <= t0 {
            return y0;
        }
        let u = (t - t0) / (t1 - t0);
        y0 + (y1 - y0) * 0.5 * (1.0 - (PI * u).cos())
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd.max(0.0)).expect("finite sd")
}

/// Low-frequency pressure wander: three sinusoids with random frequency and phase.
struct Disturbance {
    comps: Vec<(f64, f64, f64)>,
}

impl Disturbance {
    fn new(rms_pa: f64, rng: &mut ChaCha8Rng) -> Self {
        let amp = rms_pa * (2.0f64 / 3.0).sqrt();
        let comps = (0..3)
            .map(|_| (amp, rng.random_range(0.05..0.4), rng.random_range(0.0..2.0 * PI)))
            .collect();
        Self { comps }
    }

    fn at(&self, t: f64) -> f64 {
        self.comps.iter().map(|&(a, f, ph)| a * (2.0 * PI * f * t + ph).sin()).sum()
    }
}

fn dynamometer(p: &DynamometerParams, pad: &PadParams, rng: &mut ChaCha8Rng) -> Result<Generated, SimError> {
    at_least_one("n_trials", p.n_trials)?;
    positive("rest_s", p.rest_s)?;
    positive("hold_s", p.hold_s)?;
    positive("truth_rate_hz", p.truth_rate_hz)?;
    non_negative("rise_s", p.rise_s)?;
    non_negative("torque_noise_nm", p.torque_noise_nm)?;
    if p.rise_s >= p.hold_s || p.rise_s >= p.rest_s {
        return Err(SimError::BadParams("rise_s must be shorter than hold_s and rest_s".into()));
    }
    let (gain, disturbance_pa) = p.coupling();
    non_negative("gain_n_per_nm", gain)?;
    non_negative("disturbance_pa", disturbance_pa)?;
    let label = p.condition_label();
    let trial_s = 2.0 * p.rest_s + p.hold_s;

    let mut torque = Profile::start(0.0, 0.0);
    let mut events = Vec::new();
    for k in 0..p.n_trials {
        let t0 = k as f64 * trial_s;
        events.push(Event::new(us(t0), EventKind::TrialStart).condition(&label).cycle(k + 1));
        events.push(Event::new(us(t0), EventKind::RestStart).condition(&label).cycle(k + 1));
        events.push(Event::new(us(t0 + p.rest_s), EventKind::HoldStart).condition(&label).cycle(k + 1));
        events.push(Event::new(us(t0 + p.rest_s + p.hold_s), EventKind::HoldEnd).condition(&label).cycle(k + 1));
        events.push(Event::new(us(t0 + trial_s), EventKind::TrialStop).condition(&label).cycle(k + 1));
        torque
            .hold(p.rest_s)
            .to(p.rise_s, p.target_nm)
            .hold(p.hold_s - p.rise_s)
            .to(p.rise_s, 0.0)
            .hold(p.rest_s - p.rise_s);
    }
    let total = p.n_trials as f64 * trial_s;
    let disturbance = Disturbance::new(disturbance_pa, rng);

    let n_truth = (total * p.truth_rate_hz).round() as usize + 1;
    let tn = normal(p.torque_noise_nm);
    let truth_v: Vec<f64> = (0..n_truth)
        .map(|i| torque.at(i as f64 / p.truth_rate_hz) + if p.torque_noise_nm > 0.0 { tn.sample(rng) } else { 0.0 })
        .collect();
    let truth_ts = TimeSeries::uniform(0.0, p.truth_rate_hz, truth_v, Unit::NewtonMetre)?;

    let n_p = (total * PRESSURE_RATE_HZ).round() as usize + 1;
    let pressure: Vec<f64> = (0..n_p)
        .map(|k| {
            let t = k as f64 / PRESSURE_RATE_HZ;
            let f = (gain * torque.at(t)).max(0.0);
            measure(pad.raw_pressure(f, 0.0) + disturbance.at(t), pad, rng)
        })
        .collect();
    let mut truth = BTreeMap::new();
    truth.insert("torque".to_string(), truth_ts);
    Ok((pressure_series(pressure), truth, events))
}

fn validate_masses(masses: &[f64], table: &AngleForceTable) -> Result<(), SimError> {
    if masses.is_empty() {
        return Err(SimError::BadParams("at least one mass required".into()));
    }
    for &m in masses {
        table.force(table.angles_deg[0], m)?;
    }
    Ok(())
}

fn bicep_full(p: &BicepFullParams, pad: &PadParams, rng: &mut ChaCha8Rng) -> Result<Generated, SimError> {
    p.table.validate()?;
    validate_masses(&p.masses_kg, &p.table)?;
    at_least_one("n_cycles", p.n_cycles)?;
    positive("cycle_s", p.cycle_s)?;
    non_negative("rest_s", p.rest_s)?;
    non_negative("cycle_gain_sd", p.cycle_gain_sd)?;

    let mut angle = Profile::start(0.0, p.min_angle_deg);
    // (start, end, mass, gain)
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut events = Vec::new();
    let gn = normal(p.cycle_gain_sd);
    for &m in &p.masses_kg {
        events.push(Event::new(us(angle.end_time()), EventKind::RestStart).mass(m));
        angle.hold(p.rest_s);
        for c in 0..p.n_cycles {
            let t0 = angle.end_time();
            angle.to(p.cycle_s / 2.0, p.max_angle_deg).to(p.cycle_s / 2.0, p.min_angle_deg);
            let t1 = angle.end_time();
            let g = 1.0 + gn.sample(rng);
            blocks.push((t0, t1, m, g));
            events.push(Event::new(us(t0), EventKind::CycleStart).mass(m).cycle(c + 1));
            events.push(Event::new(us(t1), EventKind::CycleEnd).mass(m).cycle(c + 1));
        }
    }
    // short settle after the last cycle so it is fully inside the record
    angle.hold(0.5);
    let total = angle.end_time();
    let n = (total * PRESSURE_RATE_HZ).round() as usize + 1;
    let mut rest_mass = p.masses_kg[0];
    let mut angles = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / PRESSURE_RATE_HZ;
        let th = angle.at(t);
        let (m, g) = match blocks.iter().find(|b| t >= b.0 && t < b.1) {
            Some(b) => {
                rest_mass = b.2;
                (b.2, b.3)
            }
            None => (mass_at_rest(&events, t).unwrap_or(rest_mass), 1.0),
        };
        let f = g * p.table.force(th, m)?;
        angles.push(th);
        pressure.push(measure(pad.raw_pressure(f, 0.0), pad, rng));
    }
    let mut truth = BTreeMap::new();
    truth.insert("angle".to_string(), TimeSeries::uniform(0.0, PRESSURE_RATE_HZ, angles, Unit::Degree)?);
    Ok((pressure_series(pressure), truth, events))
}

fn mass_at_rest(events: &[Event], t: f64) -> Option<f64> {
    events
        .iter()
        .rev()
        .find(|e| e.kind == EventKind::RestStart && e.t_s() <= t + 1e-9)
        .and_then(|e| e.mass_kg)
}

fn bicep_stepwise(p: &BicepStepParams, pad: &PadParams, rng: &mut ChaCha8Rng) -> Result<Generated, SimError> {
    p.table.validate()?;
    validate_masses(&p.masses_kg, &p.table)?;
    at_least_one("n_cycles", p.n_cycles)?;
    positive("pause_s", p.pause_s)?;
    positive("move_s", p.move_s)?;
    non_negative("rest_s", p.rest_s)?;
    non_negative("rep_gain_sd", p.rep_gain_sd)?;
    non_negative("rep_offset_sd_pa", p.rep_offset_sd_pa)?;
    if p.pause_angles_deg.is_empty() {
        return Err(SimError::BadParams("pause_angles_deg is empty".into()));
    }

    let mut angle = Profile::start(0.0, p.min_angle_deg);
    let mut gain = Profile::start(0.0, 1.0);
    let mut offset = Profile::start(0.0, 0.0);
    // mass changes happen at block starts
    let mut mass_knots: Vec<(f64, f64)> = Vec::new();
    let mut events = Vec::new();
    let gn = normal(p.rep_gain_sd);
    let on = normal(p.rep_offset_sd_pa);
    for &m in &p.masses_kg {
        mass_knots.push((angle.end_time(), m));
        events.push(Event::new(us(angle.end_time()), EventKind::RestStart).mass(m));
        angle.hold(p.rest_s);
        gain.hold(p.rest_s);
        offset.hold(p.rest_s);
        for c in 0..p.n_cycles {
            let cyc = c + 1;
            events.push(Event::new(us(angle.end_time()), EventKind::CycleStart).mass(m).cycle(cyc));
            for &a in &p.pause_angles_deg {
                let g = 1.0 + gn.sample(rng);
                let o = on.sample(rng);
                angle.to(p.move_s, a);
                gain.to(p.move_s, g);
                offset.to(p.move_s, o);
                let t0 = angle.end_time();
                angle.hold(p.pause_s);
                gain.hold(p.pause_s);
                offset.hold(p.pause_s);
                events.push(Event::new(us(t0), EventKind::PauseStart).mass(m).angle(a).cycle(cyc));
                events.push(Event::new(us(angle.end_time()), EventKind::PauseEnd).mass(m).angle(a).cycle(cyc));
            }
            angle.to(p.move_s, p.min_angle_deg);
            gain.to(p.move_s, 1.0);
            offset.to(p.move_s, 0.0);
            events.push(Event::new(us(angle.end_time()), EventKind::CycleEnd).mass(m).cycle(cyc));
        }
    }
    angle.hold(0.5);
    let total = angle.end_time();
    let n = (total * PRESSURE_RATE_HZ).round() as usize + 1;
    let mut angles = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / PRESSURE_RATE_HZ;
        let th = angle.at(t);
        let i = mass_knots.partition_point(|&(tm, _)| tm <= t + 1e-9).max(1) - 1;
        let f = gain.at(t) * p.table.force(th, mass_knots[i].1)?;
        angles.push(th);
        pressure.push(measure(pad.raw_pressure(f, 0.0) + offset.at(t), pad, rng));
    }
    let mut truth = BTreeMap::new();
    truth.insert("angle".to_string(), TimeSeries::uniform(0.0, PRESSURE_RATE_HZ, angles, Unit::Degree)?);
    Ok((pressure_series(pressure), truth, events))
}

fn squats(p: &SquatParams, pad: &PadParams, rng: &mut ChaCha8Rng) -> Result<Generated, SimError> {
    p.table.validate()?;
    at_least_one("n_reps", p.n_reps)?;
    positive("cycle_s", p.cycle_s)?;
    non_negative("stand_s", p.stand_s)?;
    positive("max_knee_deg", p.max_knee_deg)?;
    non_negative("rep_gain_sd", p.rep_gain_sd)?;
    let mass = p.table.masses_kg[0];

    let mut angle = Profile::start(0.0, 0.0);
    let mut gain = Profile::start(0.0, 1.0);
    let mut events = vec![Event::new(0, EventKind::RestStart)];
    angle.hold(p.stand_s);
    gain.hold(p.stand_s);
    let gn = normal(p.rep_gain_sd);
    for c in 0..p.n_reps {
        let t0 = angle.end_time();
        let g = 1.0 + gn.sample(rng);
        angle.to(p.cycle_s / 2.0, p.max_knee_deg).to(p.cycle_s / 2.0, 0.0);
        gain.to(0.0, g).hold(p.cycle_s);
        events.push(Event::new(us(t0), EventKind::CycleStart).cycle(c + 1));
        events.push(Event::new(us(angle.end_time()), EventKind::CycleEnd).cycle(c + 1));
    }
    angle.hold(1.0);
    let total = angle.end_time();
    let n = (total * PRESSURE_RATE_HZ).round() as usize + 1;
    let mut angles = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / PRESSURE_RATE_HZ;
        let th = angle.at(t);
        let f = gain.at(t) * p.table.force(th, mass)?;
        angles.push(th);
        pressure.push(measure(pad.raw_pressure(f, 0.0), pad, rng));
    }
    let mut truth = BTreeMap::new();
    truth.insert("angle".to_string(), TimeSeries::uniform(0.0, PRESSURE_RATE_HZ, angles, Unit::Degree)?);
    Ok((pressure_series(pressure), truth, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::linfit;

    fn quiet() -> PadParams {
        PadParams { noise_sigma: 0.0, ..PadParams::default() }
    }

    fn run(name: ScenarioName, pad: &PadParams) -> SessionData {
        run_scenario(&Scenario::new(name, 11), pad).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert!(matches!("jumping".parse::<ScenarioName>(), Err(SimError::UnknownScenario(_))));
    }

    #[test]
    fn same_seed_same_output() {
        for n in ScenarioName::ALL {
            let a = run(n, &PadParams::default());
            let b = run(n, &PadParams::default());
            assert_eq!(a, b, "{n}");
            assert_eq!(a.pressure.sample_rate().unwrap().round(), 50.0);
        }
        let c = run_scenario(&Scenario::new(ScenarioName::Squats, 12), &PadParams::default()).unwrap();
        assert_ne!(c.pressure.values(), run(ScenarioName::Squats, &PadParams::default()).pressure.values());
    }

    #[test]
    fn pressure_is_linear_in_force() {
        let pad = quiet();
        let s = run(ScenarioName::RampHoldUnload, &pad);
        let force = &s.truth["force"];
        let f: Vec<f64> = force.values().iter().step_by(2).copied().collect();
        assert_eq!(f.len(), s.pressure.len());
        let fit = linfit(&f, s.pressure.values()).unwrap();
        assert!((fit.slope - pad.a).abs() / pad.a < 1e-9);
        assert!((fit.intercept - pad.b).abs() / pad.b < 1e-9);
    }

    #[test]
    fn ramp_reaches_peak_and_returns() {
        let s = run(ScenarioName::RampHoldUnload, &quiet());
        let peak = s.truth["force"].values().iter().cloned().fold(f64::MIN, f64::max);
        assert!((100.0..103.0).contains(&peak), "{peak}");
        let kinds: Vec<EventKind> = s.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            [EventKind::RestStart, EventKind::LoadStart, EventKind::HoldStart, EventKind::HoldEnd, EventKind::UnloadEnd]
        );
        let hold = windows(&s, EventKind::HoldStart, EventKind::HoldEnd);
        assert!((hold - 10.0).abs() < 0.011);
        assert_eq!(*s.pressure.values().last().unwrap(), 13.9);
    }

    fn windows(s: &SessionData, open: EventKind, close: EventKind) -> f64 {
        let w = crate::event::windows(&s.events, open, close);
        w[0].1 - w[0].0.t_s()
    }

    #[test]
    fn loading_loop_has_positive_area() {
        let s = run(ScenarioName::RampHoldUnload, &quiet());
        let f = s.truth["force"].values();
        let d = s.truth["displacement"].values();
        let area: f64 = (1..f.len()).map(|i| 0.5 * (f[i] + f[i - 1]) * (d[i] - d[i - 1])).sum();
        assert!(area > 0.0, "{area}");
    }

    #[test]
    fn hold_decays_by_one_over_e_after_tau() {
        let pad = quiet();
        let s = run(ScenarioName::StepHoldRelax, &pad);
        let hs = s.events.iter().find(|e| e.kind == EventKind::HoldStart).unwrap().t_s();
        let t0 = (hs * 50.0).ceil() / 50.0;
        let p0 = s.pressure.value_at(t0).unwrap();
        let p1 = s.pressure.value_at(t0 + pad.tau).unwrap();
        let d = s.truth["displacement"].value_at(t0).unwrap();
        let p_inf = pad.a * pad.r * pad.elastic_force(d) + pad.b;
        let expect = p_inf + (p0 - p_inf) / std::f64::consts::E;
        assert!((p1 - expect).abs() / expect < 1e-9, "{p1} vs {expect}");
    }

    #[test]
    fn high_force_saturates_at_ceiling() {
        let mut sc = Scenario::new(ScenarioName::RampHoldUnload, 1);
        if let ScenarioParams::RampHoldUnload(p) = &mut sc.params {
            p.peak_force_n = 120.0;
        }
        let s = run_scenario(&sc, &quiet()).unwrap();
        let max = s.pressure.values().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 3114.0);
    }

    #[test]
    fn toml_overrides_defaults() {
        let sc = Scenario::from_toml(
            "scenario = \"bicep_full_cycles\"\nseed = 3\n[params]\nmasses_kg = [0.0]\n[pad]\nnoise_sigma = 0.0\n",
        )
        .unwrap();
        assert_eq!(sc.seed, 3);
        assert_eq!(sc.pad.noise_sigma, 0.0);
        match &sc.params {
            ScenarioParams::BicepFullCycles(p) => {
                assert_eq!(p.masses_kg, vec![0.0]);
                assert_eq!(p.n_cycles, 5);
            }
            other => panic!("{other:?}"),
        }
        assert!(Scenario::from_toml("scenario = \"squats\"\n[params]\nbogus = 1\n").is_err());
        assert!(matches!(Scenario::from_toml("scenario = \"nope\"\n"), Err(SimError::UnknownScenario(_))));
    }

    #[test]
    fn bicep_cycles_peak_near_table() {
        let sc = Scenario::from_toml("scenario = \"bicep_full_cycles\"\n[params]\nmasses_kg = [0.0]\ncycle_gain_sd = 0.0\n").unwrap();
        let s = run_scenario(&sc, &quiet()).unwrap();
        let cycles = crate::event::windows(&s.events, EventKind::CycleStart, EventKind::CycleEnd);
        assert_eq!(cycles.len(), 5);
        let max = s.pressure.values().iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 2013.9).abs() < 1e-6, "{max}");
    }

    #[test]
    fn stepwise_events_cover_every_pause() {
        let s = run(ScenarioName::BicepStepwise, &PadParams::default());
        let pauses = crate::event::windows(&s.events, EventKind::PauseStart, EventKind::PauseEnd);
        assert_eq!(pauses.len(), 5 * 5 * 3);
        for (e, end) in pauses {
            assert!((end - e.t_s() - 4.0).abs() < 1e-9);
            assert!(e.mass_kg.is_some() && e.angle_deg.is_some() && e.cycle.is_some());
        }
    }

    #[test]
    fn dynamometer_labels_condition() {
        let s = run(ScenarioName::DynamometerTrial, &PadParams::default());
        assert_eq!(s.events.iter().filter(|e| e.kind == EventKind::TrialStart).count(), 4);
        assert!(s.events.iter().all(|e| e.condition.as_deref() == Some("above_knee_flexion")));
        let torque = &s.truth["torque"];
        assert_eq!(torque.sample_rate().unwrap().round(), 1000.0);
        assert!((torque.value_at(7.5).unwrap() - 10.0).abs() < 0.3);
    }

    #[test]
    fn rejects_bad_params() {
        let mut sc = Scenario::new(ScenarioName::Squats, 0);
        if let ScenarioParams::Squats(p) = &mut sc.params {
            p.n_reps = 0;
        }
        assert!(matches!(run_scenario(&sc, &PadParams::default()), Err(SimError::BadParams(_))));
        let bad_pad = PadParams { tau: -1.0, ..PadParams::default() };
        assert!(run_scenario(&Scenario::new(ScenarioName::Squats, 0), &bad_pad).is_err());
    }
}
