//! `analyze <kind>`: one analysis, JSON to stdout, artifacts under derived/.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use innervsense_core::analysis::{self, CyclesReport};
use innervsense_core::cycles::write_ensemble_csv;
use innervsense_core::session::write_derived;
use innervsense_core::stats::FactorialTable;
use serde::Serialize;
use serde_json::Value;

use crate::{read_session, AnalyzeCommand, Format};

fn to_json(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// Stores `text` as `derived/<name>` and echoes it to stdout.
fn emit(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = write_derived(dir, name, text.as_bytes())?;
    log::info!("wrote {}", p.display());
    crate::emit_stdout(&format!("{text}\n"))
}

pub(crate) fn cycle_csvs(dir: &Path, report: &CyclesReport) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (i, g) in report.groups.iter().enumerate() {
        let Some(set) = &g.set else { continue };
        let name = match g.mass_kg {
            Some(m) => format!("cycles_mass_{m}kg.csv"),
            None => format!("cycles_group_{i}.csv"),
        };
        let mut buf = Vec::new();
        write_ensemble_csv(set, &mut buf)?;
        write_derived(dir, &name, &buf)?;
        names.push(name);
    }
    Ok(names)
}

pub(crate) fn read_table(path: &Path) -> Result<FactorialTable> {
    let f = File::open(path).with_context(|| format!("cannot open table {}", path.display()))?;
    FactorialTable::read_csv(BufReader::new(f)).with_context(|| format!("reading table {}", path.display()))
}

pub(crate) fn run(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Calibrate(a) => {
            let r = analysis::calibrate(&read_session(&a.session)?)?;
            emit(&a.session, "calibration.json", &to_json(&r)?)
        }
        AnalyzeCommand::Relax(a) => {
            let r = analysis::relax(&read_session(&a.session)?)?;
            emit(&a.session, "relax.json", &to_json(&r)?)
        }
        AnalyzeCommand::Condition { s, rest_start, rest_end, cutoff } => {
            let r = analysis::condition(&read_session(&s.session)?, (rest_start, rest_end), cutoff)?;
            emit(&s.session, "condition.json", &to_json(&r)?)
        }
        AnalyzeCommand::Cycles { s, n_points } => {
            let r = analysis::cycles(&read_session(&s.session)?, n_points)?;
            let csv = cycle_csvs(&s.session, &r)?;
            let mut v = serde_json::to_value(&r)?;
            v["csv"] = Value::from(csv);
            emit(&s.session, "cycles.json", &to_json(&v)?)
        }
        AnalyzeCommand::Steady { s, window } => {
            let r = analysis::steady(&read_session(&s.session)?, window)?;
            // Labelled pauses also yield the ANOVA input table.
            if let Ok(t) = analysis::steady_table(&r) {
                write_derived(&s.session, "steady_table.csv", t.write_csv("pressure_pa").as_bytes())?;
            }
            emit(&s.session, "steady.json", &to_json(&r)?)
        }
        AnalyzeCommand::Anova { table, session, window, method, alpha, format } => {
            let t = match (&table, &session) {
                (Some(path), _) => read_table(path)?,
                (None, Some(dir)) => analysis::steady_table(&analysis::steady(&read_session(dir)?, window)?)?,
                (None, None) => unreachable!("clap requires --table or --session"),
            };
            let r = analysis::anova(&t, method, alpha)?;
            let json = to_json(&r)?;
            if let Some(dir) = &session {
                write_derived(dir, "anova.json", json.as_bytes())?;
            }
            match format {
                Format::Json => crate::emit_stdout(&format!("{json}\n")),
                Format::Table => crate::emit_stdout(&r.anova.to_table_string()),
            }
        }
    }
}
