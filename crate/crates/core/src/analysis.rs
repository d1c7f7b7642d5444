//! Session-level pipelines shared by the command line and the test suites.
//! Every function reads the stored (quantized) pressure log, never the
//! simulator's internal values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycles::{self, CycleError, SteadyState};
use crate::dsp::{self, DspError};
use crate::event::{self, EventKind};
use crate::fit::{self, ExpFit, FitError, LinFit};
use crate::model::{merge_on_grid, ModelError, TimeSeries};
use crate::session::{Session, SessionError};
use crate::stats::{self, AnovaResult, Factor, FactorialTable, PosthocMethod, PosthocResult, StatsError};
use crate::telemetry::HealthSnapshot;

pub const DEFAULT_CUTOFF_HZ: f64 = 6.0;
pub const DEFAULT_REST_WINDOW: (f64, f64) = (0.5, 2.0);
pub const DEFAULT_N_POINTS: usize = 100;
pub const DEFAULT_STEADY_WINDOW_S: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("session has no ground-truth channel {0:?}")]
    MissingTruth(String),
    #[error("session has no {0} events")]
    MissingEvents(&'static str),
    #[error("{0}")]
    Inconsistent(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Cycles(#[from] CycleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

fn truth<'a>(s: &'a Session, name: &str) -> Result<&'a TimeSeries> {
    s.truth.get(name).ok_or_else(|| AnalysisError::MissingTruth(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    #[serde(flatten)]
    pub fit: LinFit,
    pub health: HealthSnapshot,
}

/// Pressure against reference force: the force channel is resampled to
/// 50 Hz and interpolated onto the pressure timestamps.
pub fn calibrate(s: &Session) -> Result<CalibrationReport> {
    let (pressure, health) = s.pressure()?;
    let force = dsp::resample(truth(s, "force")?, pressure.sample_rate().unwrap_or(50.0))?;
    let (lo, hi) = (force.start_s().unwrap_or(0.0), force.end_s().unwrap_or(0.0));
    let kept = pressure.slice_time(lo, hi + 1e-7);
    let table = merge_on_grid(&[&force], &kept.times_s())?;
    let fit = fit::linfit(&table.columns[0], kept.values())?;
    Ok(CalibrationReport { fit, health })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxReport {
    #[serde(flatten)]
    pub fit: ExpFit,
    pub hold_start_s: f64,
    pub hold_end_s: f64,
    pub n: usize,
}

/// Exponential fit over the first hold window; time is measured from the
/// hold start.
pub fn relax(s: &Session) -> Result<RelaxReport> {
    let (pressure, _) = s.pressure()?;
    let (open, end) = event::windows(&s.events, EventKind::HoldStart, EventKind::HoldEnd)
        .into_iter()
        .next()
        .ok_or(AnalysisError::MissingEvents("hold_start/hold_end"))?;
    let start = open.t_s();
    let w = pressure.slice_time(start, end);
    let t: Vec<f64> = w.times_s().iter().map(|t| t - start).collect();
    let fit = fit::expfit(&t, w.values())?;
    Ok(RelaxReport { fit, hold_start_s: start, hold_end_s: end, n: w.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(flatten)]
    pub fit: LinFit,
    pub rest_window: (f64, f64),
    pub cutoff_hz: f64,
}

pub fn condition(s: &Session, rest_window: (f64, f64), cutoff_hz: f64) -> Result<ConditionReport> {
    let (pressure, _) = s.pressure()?;
    let fit = fit::condition_correlation(truth(s, "torque")?, &pressure, rest_window, cutoff_hz)?;
    let condition = s.events.iter().find_map(|e| e.condition.clone());
    Ok(ConditionReport { condition, fit, rest_window, cutoff_hz })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleGroup {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    pub n_cycles: usize,
    pub grid_pct: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub peak_mean: f64,
    pub max_sd: f64,
    #[serde(skip)]
    pub set: Option<cycles::CycleSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclesReport {
    pub n_points: usize,
    pub groups: Vec<CycleGroup>,
}

fn group_key(m: Option<f64>) -> Option<u64> {
    m.map(f64::to_bits)
}

/// Cycles from `cycle_start`/`cycle_end` events, grouped by mass in order
/// of first appearance, normalized to `n_points`.
pub fn cycles(s: &Session, n_points: usize) -> Result<CyclesReport> {
    let (pressure, _) = s.pressure()?;
    let wins = event::windows(&s.events, EventKind::CycleStart, EventKind::CycleEnd);
    if wins.is_empty() {
        return Err(AnalysisError::MissingEvents("cycle_start/cycle_end"));
    }
    let mut order: Vec<Option<f64>> = Vec::new();
    for (e, _) in &wins {
        if !order.iter().any(|m| group_key(*m) == group_key(e.mass_kg)) {
            order.push(e.mass_kg);
        }
    }
    let mut groups = Vec::new();
    for m in order {
        let b: Vec<(f64, f64)> =
            wins.iter().filter(|(e, _)| group_key(e.mass_kg) == group_key(m)).map(|(e, end)| (e.t_s(), *end)).collect();
        let set = cycles::normalize_cycles(cycles::segment_cycles(&pressure, &b)?, n_points)?;
        let (mean, sd) = cycles::ensemble_stats(&set)?;
        groups.push(CycleGroup {
            mass_kg: m,
            n_cycles: set.len(),
            grid_pct: set.grid.clone(),
            peak_mean: mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            max_sd: sd.iter().cloned().fold(0.0, f64::max),
            mean,
            sd,
            set: Some(set),
        });
    }
    Ok(CyclesReport { n_points, groups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
    pub steady: SteadyState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub window_len_s: f64,
    pub rows: Vec<SteadyRow>,
}

/// Minimum-CoV steady value inside every pause window (or every cycle when
/// the session has no pauses).
pub fn steady(s: &Session, window_len_s: f64) -> Result<SteadyReport> {
    let (pressure, _) = s.pressure()?;
    let mut wins = event::windows(&s.events, EventKind::PauseStart, EventKind::PauseEnd);
    if wins.is_empty() {
        wins = event::windows(&s.events, EventKind::CycleStart, EventKind::CycleEnd);
    }
    if wins.is_empty() {
        return Err(AnalysisError::MissingEvents("pause or cycle"));
    }
    let rows = wins
        .into_iter()
        .map(|(e, end)| {
            let seg = pressure.slice_time(e.t_s(), end);
            Ok(SteadyRow {
                angle_deg: e.angle_deg,
                mass_kg: e.mass_kg,
                cycle: e.cycle,
                steady: cycles::steady_state_cov(&seg, window_len_s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SteadyReport { window_len_s, rows })
}

fn levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Angle x mass table of steady values, replicates ordered by cycle.
pub fn steady_table(report: &SteadyReport) -> Result<FactorialTable> {
    let mut rows: Vec<(f64, f64, u32, f64)> = Vec::with_capacity(report.rows.len());
    for r in &report.rows {
        match (r.angle_deg, r.mass_kg) {
            (Some(a), Some(m)) => rows.push((a, m, r.cycle.unwrap_or(0), r.steady.value)),
            _ => return Err(AnalysisError::Inconsistent("steady rows need angle and mass labels".into())),
        }
    }
    rows.sort_by_key(|r| r.2);
    let a_levels = levels(rows.iter().map(|r| r.0));
    let b_levels = levels(rows.iter().map(|r| r.1));
    let mut cells = vec![vec![Vec::new(); b_levels.len()]; a_levels.len()];
    for (a, m, _, v) in rows {
        let i = a_levels.iter().position(|&x| x == a).expect("level present");
        let j = b_levels.iter().position(|&x| x == m).expect("level present");
        cells[i][j].push(v);
    }
    Ok(FactorialTable::new("angle_deg", "mass_kg", a_levels, b_levels, cells)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub anova: AnovaResult,
    pub posthoc: Vec<PosthocResult>,
    pub cell_means: Vec<Vec<f64>>,
}

pub fn anova(table: &FactorialTable, method: PosthocMethod, alpha: f64) -> Result<AnovaReport> {
    let result = stats::anova2(table)?;
    let posthoc = [Factor::A, Factor::B]
        .into_iter()
        .map(|f| stats::posthoc(table, &result, f, method, alpha))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AnovaReport { cell_means: table.cell_means(), anova: result, posthoc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, PadParams, Scenario, ScenarioName};

    fn session(name: ScenarioName, pad: PadParams) -> Session {
        let data = run_scenario(&Scenario::new(name, 7), &pad).unwrap();
        Session::from_simulation(&data, 1).unwrap()
    }

    #[test]
    fn calibration_recovers_line() {
        let r = calibrate(&session(ScenarioName::RampHoldUnload, PadParams::default())).unwrap();
        assert!((r.fit.slope - 30.7).abs() < 0.3, "{:?}", r.fit);
        assert!((r.fit.intercept - 13.9).abs() < 2.0, "{:?}", r.fit);
        assert!(r.fit.r2 > 0.999);
    }

    #[test]
    fn relaxation_recovers_tau() {
        let pad = PadParams { noise_sigma: 0.0, ..PadParams::default() };
        let r = relax(&session(ScenarioName::StepHoldRelax, pad)).unwrap();
        assert!((r.fit.tau - 26.6).abs() / 26.6 < 5e-4, "{:?}", r.fit);
        assert!((r.hold_end_s - r.hold_start_s - 120.0).abs() < 0.02);
    }

    #[test]
    fn stepwise_pipeline_orders_angles() {
        let s = session(ScenarioName::BicepStepwise, PadParams::default());
        let st = steady(&s, 2.0).unwrap();
        assert_eq!(st.rows.len(), 75);
        let table = steady_table(&st).unwrap();
        assert_eq!(table.n_rep().unwrap(), 5);
        let rep = anova(&table, PosthocMethod::FisherLsd, 0.05).unwrap();
        assert_eq!((rep.anova.a.df, rep.anova.b.df, rep.anova.ab.df, rep.anova.df_error), (2, 4, 8, 60));
        assert!(rep.anova.a.p < 1e-3);
        for j in 0..5 {
            assert!(rep.cell_means[0][j] < rep.cell_means[1][j] && rep.cell_means[1][j] < rep.cell_means[2][j]);
        }
    }

    #[test]
    fn cycles_group_by_mass() {
        let r = cycles(&session(ScenarioName::BicepFullCycles, PadParams::default()), 100).unwrap();
        assert_eq!(r.groups.len(), 5);
        assert!(r.groups.iter().all(|g| g.n_cycles == 5 && g.mean.len() == 100));
        assert!(r.groups[0].max_sd < 25.0, "{}", r.groups[0].max_sd);
    }

    #[test]
    fn missing_truth_is_reported() {
        let s = session(ScenarioName::Squats, PadParams::default());
        assert!(matches!(calibrate(&s), Err(AnalysisError::MissingTruth(_))));
        assert!(matches!(relax(&s), Err(AnalysisError::MissingEvents(_))));
    }
}
