use serde::{Deserialize, Serialize};

use crate::model::micros_to_secs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RestStart,
    LoadStart,
    HoldStart,
    HoldEnd,
    UnloadEnd,
    TrialStart,
    TrialStop,
    CycleStart,
    CycleEnd,
    PauseStart,
    PauseEnd,
    Annotate,
}

/// A timestamped annotation carrying the experiment structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_us: i64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
    /// Where the event originated ("scenario", "device", "control").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Host wall-clock receipt time, for events entered by an operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_unix_ms: Option<u64>,
}

impl Event {
    pub fn new(t_us: i64, kind: EventKind) -> Self {
        Self {
            t_us,
            kind,
            label: None,
            condition: None,
            mass_kg: None,
            angle_deg: None,
            cycle: None,
            source: None,
            host_unix_ms: None,
        }
    }

    pub fn t_s(&self) -> f64 {
        micros_to_secs(self.t_us)
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn condition(mut self, c: impl Into<String>) -> Self {
        self.condition = Some(c.into());
        self
    }

    pub fn mass(mut self, kg: f64) -> Self {
        self.mass_kg = Some(kg);
        self
    }

    pub fn angle(mut self, deg: f64) -> Self {
        self.angle_deg = Some(deg);
        self
    }

    pub fn cycle(mut self, k: u32) -> Self {
        self.cycle = Some(k);
        self
    }

    pub fn source(mut self, s: impl Into<String>) -> Self {
        self.source = Some(s.into());
        self
    }
}

/// Pairs each `open` event with the next `close` event, returning `(open, close_t_s)`.
pub fn windows(events: &[Event], open: EventKind, close: EventKind) -> Vec<(&Event, f64)> {
    let mut out = Vec::new();
    let mut pending: Option<&Event> = None;
    for e in events {
        if e.kind == open {
            pending = Some(e);
        } else if e.kind == close {
            if let Some(o) = pending.take() {
                out.push((o, e.t_s()));
            }
        }
    }
    out
}
