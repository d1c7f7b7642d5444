use std::collections::BTreeMap;

use innervsense_core::event::{Event, EventKind};
use innervsense_core::model::{TimeSeries, Unit};
use innervsense_core::session::{encode_pressure, Manifest, Session, SessionSource, SCHEMA_VERSION};
use innervsense_core::sim::{PadParams, Scenario, ScenarioName};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = EventKind> {
    prop_oneof![
        Just(EventKind::TrialStart),
        Just(EventKind::TrialStop),
        Just(EventKind::PauseStart),
        Just(EventKind::Annotate),
        Just(EventKind::CycleEnd),
    ]
}

fn event() -> impl Strategy<Value = Event> {
    (
        0i64..10_000_000,
        kind(),
        proptest::option::of("[a-z ]{0,12}"),
        proptest::option::of(prop_oneof![Just(0.0), Just(0.5), Just(2.27), Just(4.54)]),
        proptest::option::of(-180.0f64..180.0),
        proptest::option::of(0u32..50),
    )
        .prop_map(|(t, k, label, mass, angle, cycle)| Event {
            t_us: t,
            kind: k,
            label,
            condition: None,
            mass_kg: mass,
            angle_deg: angle,
            cycle,
            source: Some("test".into()),
            host_unix_ms: None,
        })
}

fn series(unit: Unit) -> impl Strategy<Value = TimeSeries> {
    proptest::collection::vec(-1e6f64..1e6, 1..200).prop_map(move |v| TimeSeries::uniform(0.0, 100.0, v, unit).unwrap())
}

fn session() -> impl Strategy<Value = Session> {
    (
        proptest::collection::vec(-3000.0f64..3000.0, 0..300),
        proptest::collection::vec(event(), 0..20),
        proptest::option::of(series(Unit::Newton)),
        proptest::option::of(series(Unit::Degree)),
        any::<u64>(),
        0usize..6,
        any::<u16>(),
    )
        .prop_map(|(p, mut events, force, angle, seed, which, dev)| {
            events.sort_by_key(|e| e.t_us);
            let pressure = TimeSeries::uniform(0.0, 50.0, p, Unit::Pascal).unwrap();
            let mut truth = BTreeMap::new();
            if let Some(f) = force {
                truth.insert("force".to_string(), f);
            }
            if let Some(a) = angle {
                truth.insert("angle".to_string(), a);
            }
            let scenario = Scenario::new(ScenarioName::ALL[which], seed);
            Session {
                manifest: Manifest {
                    schema_version: SCHEMA_VERSION,
                    id: format!("gen-{seed}"),
                    created_at_unix_ms: if seed % 2 == 0 { None } else { Some(seed >> 20) },
                    source: if which == 5 && seed % 3 == 0 {
                        SessionSource::Device { address: "127.0.0.1:7000".into(), meta: Some("{}".into()) }
                    } else {
                        SessionSource::Simulation { scenario: Scenario { pad: PadParams { noise_sigma: 0.0, ..scenario.pad.clone() }, ..scenario } }
                    },
                    device_id: dev,
                    sample_rate_hz: 50.0,
                    pa_per_count: 0.1,
                    truth: truth.keys().cloned().collect(),
                    derived: Vec::new(),
                },
                raw: encode_pressure(&pressure, dev).unwrap(),
                events,
                truth,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn write_then_read_is_identity(s in session()) {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        s.write(&dir, false).unwrap();
        let (back, health) = Session::read(&dir).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(health.frames_ok as usize, s.raw.len() / 21);
        prop_assert_eq!(health.frames_crc_fail, 0);
    }
}
