//! JSON documents exchanged with dashboard clients.

use innervsense_core::event::{Event, EventKind};
use innervsense_core::telemetry::HealthSnapshot;
use serde::{Deserialize, Serialize};

/// One message on the sample stream. Times are device-timeline seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Sample {
        t_s: f64,
        pa: f64,
        device_id: u16,
        seq: u16,
    },
    Event {
        t_s: f64,
        #[serde(flatten)]
        event: Event,
    },
    Health {
        t_s: f64,
        #[serde(flatten)]
        health: HealthSnapshot,
        /// Messages this client lost to queue overflow.
        dropped: u64,
        clients: usize,
        /// True once the ingest source has ended.
        source_ended: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Annotate,
    TrialStart,
    TrialStop,
}

impl From<ControlAction> for EventKind {
    fn from(a: ControlAction) -> Self {
        match a {
            ControlAction::Annotate => EventKind::Annotate,
            ControlAction::TrialStart => EventKind::TrialStart,
            ControlAction::TrialStop => EventKind::TrialStop,
        }
    }
}

/// Operator request on the control channel. `id` is echoed in the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRequest {
    #[serde(rename = "type")]
    pub action: ControlAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlReply {
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        event: Event,
        /// False when the host has no session to write to.
        persisted: bool,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_shape() {
        let m = StreamMessage::Sample { t_s: 1.5, pa: 307.2, device_id: 1, seq: 9 };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "sample");
        assert_eq!(v["t_s"], 1.5);
        assert_eq!(v["pa"], 307.2);
    }

    #[test]
    fn event_and_health_round_trip() {
        let e = Event::new(2_000_000, EventKind::TrialStart).label("a").mass(2.27);
        let msgs = [
            StreamMessage::Event { t_s: e.t_s(), event: e },
            StreamMessage::Health {
                t_s: 3.0,
                health: HealthSnapshot { frames_ok: 5, last_seq: Some(4), ..Default::default() },
                dropped: 2,
                clients: 1,
                source_ended: false,
            },
        ];
        for m in msgs {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<StreamMessage>(&s).unwrap(), m, "{s}");
        }
    }

    #[test]
    fn control_request_parses_minimal_and_full() {
        let r: ControlRequest = serde_json::from_str(r#"{"type":"trial_stop"}"#).unwrap();
        assert_eq!(r.action, ControlAction::TrialStop);
        let r: ControlRequest = serde_json::from_str(
            r#"{"type":"trial_start","id":7,"label":"t1","condition":"above_flex","mass_kg":2.27,"angle_deg":120}"#,
        )
        .unwrap();
        assert_eq!(r.mass_kg, Some(2.27));
        assert_eq!(r.id, Some(7));
        assert!(serde_json::from_str::<ControlRequest>(r#"{"type":"explode"}"#).is_err());
    }
}
