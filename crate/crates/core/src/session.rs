//! On-disk session layout:
//!
//! ```text
//! <dir>/manifest.json    written last; its presence marks a complete session
//! <dir>/raw.bin          concatenated wire frames, exactly as received
//! <dir>/events.jsonl     one event per line
//! <dir>/truth/<name>.csv ground-truth channels (simulation only)
//! <dir>/derived/*        analysis outputs
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, EventKind};
use crate::model::{counts_to_pascals, pascals_to_counts_saturating, AdcCode, ModelError, TimeSeries, Unit, PA_PER_COUNT};
use crate::sim::{Scenario, SessionData};
use crate::telemetry::{decode_all, Frame, HealthSnapshot, MsgType, StreamDecoder};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const RAW: &str = "raw.bin";
pub const EVENTS: &str = "events.jsonl";
pub const TRUTH_DIR: &str = "truth";
pub const DERIVED_DIR: &str = "derived";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0} already exists (use overwrite to replace it)")]
    AlreadyExists(PathBuf),
    #[error("corrupt session at {path}: {reason}")]
    CorruptSession { path: PathBuf, reason: String },
    #[error("session schema version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("invalid artifact name {0:?}")]
    InvalidName(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T, E = SessionError> = std::result::Result<T, E>;

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io { path: path.to_path_buf(), source }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> SessionError {
    SessionError::CorruptSession { path: path.to_path_buf(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // one per session
pub enum SessionSource {
    Simulation { scenario: Scenario },
    Device {
        address: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub id: String,
    /// Wall-clock creation time; absent for simulated sessions so that they
    /// are byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at_unix_ms: Option<u64>,
    pub source: SessionSource,
    pub device_id: u16,
    pub sample_rate_hz: f64,
    pub pa_per_count: f64,
    #[serde(default)]
    pub truth: Vec<String>,
    #[serde(default)]
    pub derived: Vec<String>,
}

impl Manifest {
    pub fn for_device(id: impl Into<String>, address: impl Into<String>, device_id: u16) -> Self {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .ok();
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            created_at_unix_ms: now,
            source: SessionSource::Device { address: address.into(), meta: None },
            device_id,
            sample_rate_hz: crate::sim::PRESSURE_RATE_HZ,
            pa_per_count: PA_PER_COUNT,
            truth: Vec::new(),
            derived: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub manifest: Manifest,
    /// Frame log bytes, verbatim.
    pub raw: Vec<u8>,
    pub events: Vec<Event>,
    pub truth: BTreeMap<String, TimeSeries>,
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidName(name.to_string()))
    }
}

/// Encodes a pressure series as single-channel data frames (seq wraps).
pub fn encode_pressure(pressure: &TimeSeries, device_id: u16) -> Result<Vec<u8>, ModelError> {
    let mut raw = Vec::with_capacity(pressure.len() * crate::telemetry::frame::DATA_FRAME_LEN_1CH);
    for (k, (&t, &pa)) in pressure.times_us().iter().zip(pressure.values()).enumerate() {
        let t = u64::try_from(t).map_err(|_| ModelError::Csv(format!("negative timestamp {t}")))?;
        let code = pascals_to_counts_saturating(pa);
        Frame::data(device_id, k as u16, t, vec![code.counts()])
            .encode_into(&mut raw)
            .expect("single-channel data frame");
    }
    Ok(raw)
}

/// Pressure channel (Pa) from the data frames of a frame log. Repeated
/// timestamps keep the first arrival.
pub fn decode_pressure(raw: &[u8]) -> Result<(TimeSeries, HealthSnapshot), ModelError> {
    let (frames, health) = decode_all(raw);
    let samples = frames
        .iter()
        .filter_map(|f| {
            let s = f.samples()?;
            Some((f.timestamp_us as i64, counts_to_pascals(AdcCode(*s.first()?))))
        })
        .collect();
    Ok((TimeSeries::ingest(samples, Unit::Pascal)?, health))
}

impl Session {
    /// Wraps a simulator run; the raw log holds one data frame per sample.
    pub fn from_simulation(data: &SessionData, device_id: u16) -> Result<Self> {
        let sc = &data.scenario;
        Ok(Self {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                id: format!("sim-{}-{}", sc.name(), sc.seed),
                created_at_unix_ms: None,
                source: SessionSource::Simulation { scenario: sc.clone() },
                device_id,
                sample_rate_hz: crate::sim::PRESSURE_RATE_HZ,
                pa_per_count: PA_PER_COUNT,
                truth: data.truth.keys().cloned().collect(),
                derived: Vec::new(),
            },
            raw: encode_pressure(&data.pressure, device_id)?,
            events: data.events.clone(),
            truth: data.truth.clone(),
        })
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        match &self.manifest.source {
            SessionSource::Simulation { scenario } => Some(scenario),
            SessionSource::Device { .. } => None,
        }
    }

    pub fn pressure(&self) -> Result<(TimeSeries, HealthSnapshot)> {
        Ok(decode_pressure(&self.raw)?)
    }

    /// Writes the session; `manifest.json` goes last via rename.
    pub fn write(&self, dir: &Path, overwrite: bool) -> Result<()> {
        prepare_dir(dir, overwrite)?;
        let raw_path = dir.join(RAW);
        fs::write(&raw_path, &self.raw).map_err(io_at(&raw_path))?;
        let ev_path = dir.join(EVENTS);
        let mut events: Vec<&Event> = self.events.iter().collect();
        events.sort_by_key(|e| e.t_us);
        let mut w = BufWriter::new(File::create(&ev_path).map_err(io_at(&ev_path))?);
        for e in events {
            writeln!(w, "{}", serde_json::to_string(e).expect("event serializes")).map_err(io_at(&ev_path))?;
        }
        w.flush().map_err(io_at(&ev_path))?;
        let mut manifest = self.manifest.clone();
        manifest.truth = self.truth.keys().cloned().collect();
        if !self.truth.is_empty() {
            let tdir = dir.join(TRUTH_DIR);
            fs::create_dir_all(&tdir).map_err(io_at(&tdir))?;
            for (name, ts) in &self.truth {
                check_name(name)?;
                let p = tdir.join(format!("{name}.csv"));
                let mut w = BufWriter::new(File::create(&p).map_err(io_at(&p))?);
                ts.write_csv(&mut w)?;
                w.flush().map_err(io_at(&p))?;
            }
        }
        write_manifest(dir, &manifest)
    }

    /// Loads a finalized session. Frame-level corruption in `raw.bin` is
    /// reported through the returned health, not as an error.
    pub fn read(dir: &Path) -> Result<(Self, HealthSnapshot)> {
        let manifest = read_manifest(dir)?;
        let raw_path = dir.join(RAW);
        let raw = fs::read(&raw_path).map_err(|e| corrupt(&raw_path, e.to_string()))?;
        let events = read_events(dir)?;
        let mut truth = BTreeMap::new();
        for name in &manifest.truth {
            check_name(name)?;
            let p = dir.join(TRUTH_DIR).join(format!("{name}.csv"));
            let f = File::open(&p).map_err(|e| corrupt(&p, e.to_string()))?;
            let ts = TimeSeries::read_csv(BufReader::new(f)).map_err(|e| corrupt(&p, e.to_string()))?;
            truth.insert(name.clone(), ts);
        }
        let (_, health) = decode_all(&raw);
        Ok((Self { manifest, raw, events, truth }, health))
    }
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_at(dir))?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(SessionError::AlreadyExists(dir.to_path_buf()));
            }
            // drop the manifest first so an interrupted rewrite reads as corrupt
            let m = dir.join(MANIFEST);
            if m.exists() {
                fs::remove_file(&m).map_err(io_at(&m))?;
            }
            fs::remove_dir_all(dir).map_err(io_at(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&tmp, text + "\n").map_err(io_at(&tmp))?;
    let dst = dir.join(MANIFEST);
    fs::rename(&tmp, &dst).map_err(io_at(&dst))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = match fs::read_to_string(&p) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(corrupt(dir, "missing manifest.json")),
        Err(e) => return Err(SessionError::Io { path: p, source: e }),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(&p, e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt(&p, "schema_version missing"))?;
    if version > SCHEMA_VERSION as u64 {
        return Err(SessionError::VersionMismatch { found: version as u32, supported: SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| corrupt(&p, e.to_string()))
}

/// Events from `events.jsonl`, stably sorted by timestamp.
pub fn read_events(dir: &Path) -> Result<Vec<Event>> {
    let p = dir.join(EVENTS);
    let f = match File::open(&p) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(SessionError::Io { path: p, source: e }),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_at(&p))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|e| corrupt(&p, format!("line {}: {e}", i + 1)))?;
        events.push(e);
    }
    events.sort_by_key(|e| e.t_us);
    Ok(events)
}

/// Stores an analysis artifact under `derived/` and indexes it in the manifest.
pub fn write_derived(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    check_name(name)?;
    let mut manifest = read_manifest(dir)?;
    let ddir = dir.join(DERIVED_DIR);
    fs::create_dir_all(&ddir).map_err(io_at(&ddir))?;
    let p = ddir.join(name);
    fs::write(&p, bytes).map_err(io_at(&p))?;
    if !manifest.derived.iter().any(|d| d == name) {
        manifest.derived.push(name.to_string());
        manifest.derived.sort();
        write_manifest(dir, &manifest)?;
    }
    Ok(p)
}

/// Append-only writer for a live recording. Frame bytes go to `raw.bin`
/// verbatim; event frames and control events are also appended to
/// `events.jsonl`. The manifest is written by [`finish`](Self::finish).
#[derive(Debug)]
pub struct SessionRecorder {
    dir: PathBuf,
    raw: BufWriter<File>,
    events: BufWriter<File>,
    decoder: StreamDecoder,
    manifest: Manifest,
    saw_frame: bool,
}

impl SessionRecorder {
    pub fn create(dir: &Path, manifest: Manifest, overwrite: bool) -> Result<Self> {
        prepare_dir(dir, overwrite)?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            let f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_at(&p))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self { dir: dir.to_path_buf(), raw: open(RAW)?, events: open(EVENTS)?, decoder: StreamDecoder::new(), manifest, saw_frame: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn health(&self) -> HealthSnapshot {
        self.decoder.health().snapshot()
    }

    /// Appends received bytes and returns the frames they completed.
    pub fn append_raw(&mut self, bytes: &[u8]) -> Result<Vec<Frame>> {
        let raw_path = self.dir.join(RAW);
        self.raw.write_all(bytes).map_err(io_at(&raw_path))?;
        let frames = self.decoder.decode(bytes);
        for f in &frames {
            match f.msg_type {
                MsgType::Event => {
                    let text = f.text().unwrap_or_default();
                    let ev = serde_json::from_str::<Event>(text).unwrap_or_else(|_| {
                        Event::new(f.timestamp_us as i64, EventKind::Annotate).label(text)
                    });
                    let ev = if ev.source.is_none() { ev.source("device") } else { ev };
                    self.append_event(&ev)?;
                }
                MsgType::Meta => {
                    if let SessionSource::Device { meta, .. } = &mut self.manifest.source {
                        *meta = f.text().map(str::to_string);
                    }
                }
                MsgType::Data => {}
            }
            if !self.saw_frame {
                self.saw_frame = true;
                self.manifest.device_id = f.device_id;
            }
        }
        Ok(frames)
    }

    pub fn append_event(&mut self, e: &Event) -> Result<()> {
        let p = self.dir.join(EVENTS);
        writeln!(self.events, "{}", serde_json::to_string(e).expect("event serializes")).map_err(io_at(&p))?;
        self.events.flush().map_err(io_at(&p))
    }

    pub fn flush(&mut self) -> Result<()> {
        let p = self.dir.join(RAW);
        self.raw.flush().map_err(io_at(&p))
    }

    /// Flushes everything and writes the manifest.
    pub fn finish(mut self) -> Result<HealthSnapshot> {
        self.flush()?;
        self.decoder.finish();
        while self.decoder.next_frame().is_some() {}
        let p = self.dir.join(EVENTS);
        self.events.flush().map_err(io_at(&p))?;
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.decoder.health().snapshot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, PadParams, ScenarioName};
    use crate::telemetry::frame::DATA_FRAME_LEN_1CH;

    fn sim_session(name: ScenarioName) -> Session {
        let sc = Scenario::new(name, 5);
        let data = run_scenario(&sc, &PadParams::default()).unwrap();
        Session::from_simulation(&data, 1).unwrap()
    }

    #[test]
    fn round_trip_simulated() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        let s = sim_session(ScenarioName::RampHoldUnload);
        s.write(&dir, false).unwrap();
        let (back, health) = Session::read(&dir).unwrap();
        assert_eq!(back, s);
        assert_eq!(health.frames_ok as usize, s.raw.len() / DATA_FRAME_LEN_1CH);
        assert!(matches!(s.write(&dir, false), Err(SessionError::AlreadyExists(_))));
        s.write(&dir, true).unwrap();
    }

    #[test]
    fn raw_size_is_fixed_per_sample() {
        let p = TimeSeries::uniform(0.0, 50.0, vec![100.0; 500], Unit::Pascal).unwrap();
        assert_eq!(encode_pressure(&p, 1).unwrap().len(), 500 * 21);
    }

    #[test]
    fn missing_manifest_is_corrupt() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(Session::read(tmp.path()), Err(SessionError::CorruptSession { .. })));
    }

    #[test]
    fn future_schema_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        sim_session(ScenarioName::Squats).write(&dir, false).unwrap();
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        fs::write(&p, text).unwrap();
        assert!(matches!(Session::read(&dir), Err(SessionError::VersionMismatch { found: 2, supported: 1 })));
    }

    #[test]
    fn truncated_raw_drops_partial_frame() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        let s = sim_session(ScenarioName::Squats);
        s.write(&dir, false).unwrap();
        let raw = dir.join(RAW);
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 7]).unwrap();
        let (back, health) = Session::read(&dir).unwrap();
        let (p, _) = back.pressure().unwrap();
        assert_eq!(p.len(), s.raw.len() / 21 - 1);
        assert_eq!(health.frames_resync, 1);
    }

    #[test]
    fn derived_artifacts_are_indexed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        sim_session(ScenarioName::Squats).write(&dir, false).unwrap();
        write_derived(&dir, "calibrate.json", b"{}").unwrap();
        write_derived(&dir, "calibrate.json", b"{}").unwrap();
        assert_eq!(read_manifest(&dir).unwrap().derived, vec!["calibrate.json"]);
        assert!(write_derived(&dir, "../escape", b"").is_err());
    }

    #[test]
    fn recorder_persists_frames_and_events() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("rec");
        let mut r = SessionRecorder::create(&dir, Manifest::for_device("r1", "127.0.0.1:9", 1), false).unwrap();
        let mut bytes = Vec::new();
        Frame::meta(1, 0, 0, "{\"fw\":1}").encode_into(&mut bytes).unwrap();
        Frame::data(1, 1, 0, vec![139]).encode_into(&mut bytes).unwrap();
        let ev = Event::new(20_000, EventKind::TrialStart).condition("c");
        Frame::event(1, 2, 20_000, serde_json::to_string(&ev).unwrap()).encode_into(&mut bytes).unwrap();
        Frame::data(1, 3, 20_000, vec![140]).encode_into(&mut bytes).unwrap();
        let (a, b) = bytes.split_at(30);
        assert_eq!(r.append_raw(a).unwrap().len(), 1);
        assert_eq!(r.append_raw(b).unwrap().len(), 3);
        r.append_event(&Event::new(10_000, EventKind::Annotate).label("x").source("control")).unwrap();
        let h = r.finish().unwrap();
        assert_eq!(h.frames_ok, 4);
        let (s, _) = Session::read(&dir).unwrap();
        assert_eq!(s.raw, bytes);
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.events[0].label.as_deref(), Some("x"));
        assert_eq!(s.events[1].source.as_deref(), Some("device"));
        let (p, _) = s.pressure().unwrap();
        assert_eq!(p.values(), &[13.9, 14.0]);
        match &s.manifest.source {
            SessionSource::Device { meta, .. } => assert_eq!(meta.as_deref(), Some("{\"fw\":1}")),
            other => panic!("{other:?}"),
        }
    }
}
