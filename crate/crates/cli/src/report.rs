//! `report`: every applicable analysis, aggregated as markdown and JSON.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use innervsense_core::analysis::{self, AnalysisError};
use innervsense_core::session::{write_derived, SessionSource};
use innervsense_core::stats::PosthocMethod;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::analyze::cycle_csvs;
use crate::read_session;

#[derive(Debug, Serialize)]
struct Skipped {
    analysis: &'static str,
    /// `not_applicable` when the session lacks the needed channels or events.
    status: &'static str,
    reason: String,
}

fn skip(name: &'static str, e: &AnalysisError) -> Skipped {
    let status = match e {
        AnalysisError::MissingTruth(_) | AnalysisError::MissingEvents(_) => "not_applicable",
        _ => "failed",
    };
    Skipped { analysis: name, status, reason: e.to_string() }
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

pub(crate) fn run(dir: &Path) -> Result<Value> {
    let s = read_session(dir)?;
    let (pressure, health) = s.pressure()?;
    let mut md = String::new();
    let mut out = Map::new();
    let mut skipped = Vec::new();

    writeln!(md, "# Session `{}`\n", s.manifest.id)?;
    match &s.manifest.source {
        SessionSource::Simulation { scenario } => {
            writeln!(md, "- Source: simulated `{}`, seed {}", scenario.name(), scenario.seed)?;
        }
        SessionSource::Device { address, .. } => writeln!(md, "- Source: device at `{address}`")?,
    }
    writeln!(md, "- Samples: {} over {:.2} s at {} Hz", pressure.len(), pressure.duration_s(), s.manifest.sample_rate_hz)?;
    writeln!(
        md,
        "- Stream health: {} frames ok, {} CRC failures, {} resyncs, {} gaps",
        health.frames_ok, health.frames_crc_fail, health.frames_resync, health.gaps
    )?;
    writeln!(md, "- Events: {}", s.events.len())?;
    out.insert("id".into(), json!(s.manifest.id));
    out.insert("samples".into(), json!(pressure.len()));
    out.insert("duration_s".into(), json!(pressure.duration_s()));
    out.insert("health".into(), serde_json::to_value(health)?);

    match analysis::calibrate(&s) {
        Ok(r) => {
            writeln!(md, "\n## Calibration\n")?;
            writeln!(md, "P = {} F + {} Pa (R² = {}, n = {})", f(r.fit.slope), f(r.fit.intercept), f(r.fit.r2), r.fit.n)?;
            out.insert("calibrate".into(), serde_json::to_value(r)?);
        }
        Err(e) => skipped.push(skip("calibrate", &e)),
    }

    match analysis::relax(&s) {
        Ok(r) => {
            writeln!(md, "\n## Relaxation\n")?;
            writeln!(
                md,
                "τ = {} s, amplitude {} Pa, asymptote {} Pa, RMSE {} Pa over {:.1} s",
                f(r.fit.tau),
                f(r.fit.amplitude),
                f(r.fit.y_inf),
                f(r.fit.rmse),
                r.hold_end_s - r.hold_start_s
            )?;
            out.insert("relax".into(), serde_json::to_value(r)?);
        }
        Err(e) => skipped.push(skip("relax", &e)),
    }

    let (rest, cutoff) = (analysis::DEFAULT_REST_WINDOW, analysis::DEFAULT_CUTOFF_HZ);
    match analysis::condition(&s, rest, cutoff) {
        Ok(r) => {
            writeln!(md, "\n## Torque correlation\n")?;
            writeln!(
                md,
                "Condition `{}`: slope {} Pa/(N·m), R² = {}",
                r.condition.as_deref().unwrap_or("unlabelled"),
                f(r.fit.slope),
                f(r.fit.r2)
            )?;
            out.insert("condition".into(), serde_json::to_value(r)?);
        }
        Err(e) => skipped.push(skip("condition", &e)),
    }

    match analysis::cycles(&s, analysis::DEFAULT_N_POINTS) {
        Ok(r) => {
            let csv = cycle_csvs(dir, &r)?;
            writeln!(md, "\n## Cycles\n")?;
            writeln!(md, "| mass (kg) | cycles | peak mean (Pa) | max SD (Pa) |")?;
            writeln!(md, "|---|---|---|---|")?;
            for g in &r.groups {
                let m = g.mass_kg.map_or_else(|| "-".to_string(), |m| m.to_string());
                writeln!(md, "| {m} | {} | {:.1} | {:.1} |", g.n_cycles, g.peak_mean, g.max_sd)?;
            }
            let mut v = serde_json::to_value(&r)?;
            v["csv"] = json!(csv);
            out.insert("cycles".into(), v);
        }
        Err(e) => skipped.push(skip("cycles", &e)),
    }

    match analysis::steady(&s, analysis::DEFAULT_STEADY_WINDOW_S) {
        Ok(st) => {
            writeln!(md, "\n## Steady state\n")?;
            writeln!(md, "{} windows of {} s", st.rows.len(), st.window_len_s)?;
            match analysis::steady_table(&st).and_then(|t| {
                let r = analysis::anova(&t, PosthocMethod::FisherLsd, analysis::DEFAULT_ALPHA)?;
                Ok((t, r))
            }) {
                Ok((t, r)) => {
                    write_derived(dir, "steady_table.csv", t.write_csv("pressure_pa").as_bytes())?;
                    writeln!(md, "\n### Cell means (Pa)\n")?;
                    let head: Vec<String> = t.b_levels.iter().map(|b| format!("{} {b}", t.factor_b)).collect();
                    writeln!(md, "| {} | {} |", t.factor_a, head.join(" | "))?;
                    writeln!(md, "|---|{}", "---|".repeat(head.len()))?;
                    for (a, row) in t.a_levels.iter().zip(&r.cell_means) {
                        let cells: Vec<String> = row.iter().map(|v| format!("{v:.1}")).collect();
                        writeln!(md, "| {a} | {} |", cells.join(" | "))?;
                    }
                    writeln!(md, "\n### Two-way ANOVA\n\n```\n{}```", r.anova.to_table_string())?;
                    for ph in &r.posthoc {
                        let letters: Vec<String> =
                            ph.groups.iter().map(|g| format!("{}={} ({:.1})", g.level, g.letters, g.mean)).collect();
                        let method = json!(ph.method);
                        writeln!(md, "\nPost-hoc {} on {}: {}", method.as_str().unwrap_or("?"), ph.factor, letters.join(", "))?;
                    }
                    out.insert("anova".into(), serde_json::to_value(r)?);
                }
                Err(e) => skipped.push(skip("anova", &e)),
            }
            out.insert("steady".into(), serde_json::to_value(st)?);
        }
        Err(e) => skipped.push(skip("steady", &e)),
    }

    if !skipped.is_empty() {
        writeln!(md, "\n## Not run\n")?;
        for sk in &skipped {
            writeln!(md, "- {} ({}): {}", sk.analysis, sk.status, sk.reason)?;
        }
    }
    out.insert("skipped".into(), serde_json::to_value(&skipped)?);
    let v = Value::Object(out);
    write_derived(dir, "report.md", md.as_bytes())?;
    write_derived(dir, "report.json", serde_json::to_string_pretty(&v)?.as_bytes())?;
    Ok(v)
}
