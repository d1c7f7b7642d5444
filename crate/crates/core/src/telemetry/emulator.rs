//! Replays a pressure record as a device byte stream.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::TelemetryError;
use crate::event::Event;
use crate::model::{pascals_to_counts_saturating, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Frames leave at the wall-clock spacing of their timestamps.
    Realtime,
    /// As fast as the sink accepts.
    #[default]
    Max,
}

impl FromStr for Pacing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "realtime" => Ok(Self::Realtime),
            "max" => Ok(Self::Max),
            _ => Err(format!("unknown pacing {s:?} (expected realtime or max)")),
        }
    }
}

impl fmt::Display for Pacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Realtime => "realtime",
            Self::Max => "max",
        })
    }
}

/// What the emulated device sends: an optional meta document, then the
/// pressure samples with events interleaved by timestamp.
#[derive(Debug, Clone, Copy)]
pub struct DeviceStream<'a> {
    pub device_id: u16,
    pub meta: Option<&'a str>,
    pub pressure: &'a TimeSeries,
    pub events: &'a [Event],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmulatorReport {
    pub data_frames: u64,
    pub event_frames: u64,
    pub meta_frames: u64,
    pub bytes: u64,
    /// Samples clipped to the i16 ADC range.
    pub clipped_samples: u64,
    pub elapsed_s: f64,
}

fn to_u64(t_us: i64) -> Result<u64, TelemetryError> {
    u64::try_from(t_us).map_err(|_| TelemetryError::NegativeTimestamp(t_us))
}

struct Emitter<'w, W: Write> {
    sink: &'w mut W,
    buf: Vec<u8>,
    seq: u16,
    report: EmulatorReport,
    pacing: Pacing,
    start: Instant,
    t0_us: Option<u64>,
}

impl<W: Write> Emitter<'_, W> {
    fn send(&mut self, frame: Frame) -> Result<(), TelemetryError> {
        if self.pacing == Pacing::Realtime {
            let t0 = *self.t0_us.get_or_insert(frame.timestamp_us);
            let due = self.start + Duration::from_micros(frame.timestamp_us.saturating_sub(t0));
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.buf.clear();
        frame.encode_into(&mut self.buf)?;
        let io = self.sink.write_all(&self.buf).and_then(|_| match self.pacing {
            Pacing::Realtime => self.sink.flush(),
            Pacing::Max => Ok(()),
        });
        if let Err(source) = io {
            self.report.elapsed_s = self.start.elapsed().as_secs_f64();
            return Err(TelemetryError::SinkClosed { report: self.report.clone(), source });
        }
        self.seq = self.seq.wrapping_add(1);
        self.report.bytes += self.buf.len() as u64;
        Ok(())
    }
}

/// Streams `stream` into `sink`. A meta frame (if any) goes first, then one
/// data frame per sample; each event is sent just before the first sample at
/// or after its timestamp. Sequence numbers count every frame.
pub fn emulate_device<W: Write>(
    stream: DeviceStream<'_>,
    pacing: Pacing,
    sink: &mut W,
) -> Result<EmulatorReport, TelemetryError> {
    let mut events: Vec<&Event> = stream.events.iter().collect();
    events.sort_by_key(|e| e.t_us);
    let dev = stream.device_id;
    let mut em = Emitter {
        sink,
        buf: Vec::with_capacity(64),
        seq: 0,
        report: EmulatorReport::default(),
        pacing,
        start: Instant::now(),
        t0_us: None,
    };
    let first_t = stream.pressure.times_us().first().copied().unwrap_or(0);
    if let Some(meta) = stream.meta {
        let t = to_u64(first_t.min(events.first().map_or(first_t, |e| e.t_us)))?;
        em.send(Frame::meta(dev, em.seq, t, meta))?;
        em.report.meta_frames += 1;
    }
    let mut ev = events.into_iter().peekable();
    for (&t_us, &pa) in stream.pressure.times_us().iter().zip(stream.pressure.values()) {
        while let Some(e) = ev.next_if(|e| e.t_us <= t_us) {
            let text = serde_json::to_string(e).expect("event serializes");
            em.send(Frame::event(dev, em.seq, to_u64(e.t_us)?, text))?;
            em.report.event_frames += 1;
        }
        let code = pascals_to_counts_saturating(pa);
        if (code.pascals() - pa).abs() > 0.05 + 1e-9 {
            em.report.clipped_samples += 1;
        }
        em.send(Frame::data(dev, em.seq, to_u64(t_us)?, vec![code.counts()]))?;
        em.report.data_frames += 1;
    }
    for e in ev {
        let text = serde_json::to_string(e).expect("event serializes");
        em.send(Frame::event(dev, em.seq, to_u64(e.t_us)?, text))?;
        em.report.event_frames += 1;
    }
    if let Err(source) = em.sink.flush() {
        return Err(TelemetryError::SinkClosed { report: em.report.clone(), source });
    }
    em.report.elapsed_s = em.start.elapsed().as_secs_f64();
    Ok(em.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventKind;
    use crate::model::Unit;
    use crate::telemetry::decoder::decode_all;
    use crate::telemetry::frame::MsgType;

    fn ten_seconds() -> TimeSeries {
        TimeSeries::uniform(0.0, 50.0, (0..500).map(|i| i as f64 * 0.5).collect(), Unit::Pascal).unwrap()
    }

    #[test]
    fn max_pacing_sends_every_sample() {
        let p = ten_seconds();
        let ev = vec![
            Event::new(2_000_000, EventKind::Annotate).label("a"),
            Event::new(30_000, EventKind::Annotate),
            Event::new(9_990_000, EventKind::TrialStop),
        ];
        let mut out = Vec::new();
        let s = DeviceStream { device_id: 4, meta: Some("{}"), pressure: &p, events: &ev };
        let r = emulate_device(s, Pacing::Max, &mut out).unwrap();
        assert_eq!(r.data_frames, 500);
        assert_eq!(r.event_frames, 3);
        assert_eq!(r.bytes as usize, out.len());
        let (frames, h) = decode_all(&out);
        assert_eq!(h.gaps, 0);
        assert_eq!(frames[0].msg_type, MsgType::Meta);
        let kinds: Vec<(MsgType, u64)> = frames.iter().map(|f| (f.msg_type, f.timestamp_us)).collect();
        let events: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i].0 == MsgType::Event).collect();
        assert_eq!(events.len(), 3);
        for &i in &events {
            if let Some(next) = kinds.get(i + 1) {
                assert!(next.1 >= kinds[i].1, "event precedes its sample");
            }
            assert!(kinds[i - 1].1 <= kinds[i].1);
        }
        let data: Vec<i16> = frames.iter().filter_map(|f| f.samples()).map(|s| s[0]).collect();
        assert_eq!(data[3], 15);
    }

    #[test]
    fn realtime_pacing_tracks_timestamps() {
        let p = TimeSeries::uniform(0.0, 50.0, vec![0.0; 26], Unit::Pascal).unwrap();
        let mut out = Vec::new();
        let s = DeviceStream { device_id: 1, meta: None, pressure: &p, events: &[] };
        let r = emulate_device(s, Pacing::Realtime, &mut out).unwrap();
        assert!((r.elapsed_s - 0.5).abs() < 0.02, "{}", r.elapsed_s);
    }

    struct Closing(usize);
    impl Write for Closing {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            if self.0 == 0 {
                return Err(std::io::ErrorKind::BrokenPipe.into());
            }
            self.0 -= 1;
            Ok(b.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn closed_sink_reports_partial_progress() {
        let p = ten_seconds();
        let s = DeviceStream { device_id: 1, meta: None, pressure: &p, events: &[] };
        match emulate_device(s, Pacing::Max, &mut Closing(7)) {
            Err(TelemetryError::SinkClosed { report, .. }) => assert_eq!(report.data_frames, 7),
            other => panic!("{other:?}"),
        }
    }
}
