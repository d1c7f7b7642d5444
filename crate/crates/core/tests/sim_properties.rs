use innervsense_core::fit::linfit;
use innervsense_core::sim::{measure, run_scenario, step_pad, PadInput, PadParams, PadState, Scenario, ScenarioName};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pressure_above_ceiling_reads_exactly_ceiling(
        excess in 1e-6f64..1e5,
        sigma in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let pad = PadParams { noise_sigma: sigma, ..PadParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // far enough above the ceiling that noise cannot pull it back under
        let raw = pad.p_sat + 10.0 * sigma + excess;
        prop_assert_eq!(measure(raw, &pad, &mut rng), 3114.0);
    }

    #[test]
    fn stepping_past_ceiling_saturates(d in 9.0f64..40.0, seed in any::<u64>()) {
        let pad = PadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = PadState { d, f_relax: 0.0, t: 0.0 };
        let (_, r) = step_pad(&s, PadInput { d_next: d, bend: 0.0 }, 0.01, &pad, &mut rng).unwrap();
        prop_assume!(pad.raw_pressure(r.force, 0.0) > pad.p_sat + 60.0);
        prop_assert_eq!(r.pressure, 3114.0);
    }

    #[test]
    fn measured_pressure_never_exceeds_ceiling(raw in -1e4f64..1e4, seed in any::<u64>()) {
        let pad = PadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(measure(raw, &pad, &mut rng) <= 3114.0);
    }
}

#[test]
fn noiseless_pressure_is_affine_in_force_for_every_bench_scenario() {
    let pad = PadParams { noise_sigma: 0.0, ..PadParams::default() };
    for name in [ScenarioName::RampHoldUnload, ScenarioName::StepHoldRelax] {
        let d = run_scenario(&Scenario::new(name, 0), &pad).unwrap();
        let f: Vec<f64> = d.truth["force"].values().iter().step_by(2).copied().collect();
        let fit = linfit(&f, d.pressure.values()).unwrap();
        assert!((fit.slope / 30.7 - 1.0).abs() < 1e-9, "{name}: {fit:?}");
        assert!((fit.intercept / 13.9 - 1.0).abs() < 1e-9, "{name}: {fit:?}");
    }
}

#[test]
fn hold_decay_is_log_affine() {
    let pad = PadParams { noise_sigma: 0.0, ..PadParams::default() };
    let d = run_scenario(&Scenario::new(ScenarioName::StepHoldRelax, 0), &pad).unwrap();
    let hold = innervsense_core::event::windows(&d.events, innervsense_core::event::EventKind::HoldStart, innervsense_core::event::EventKind::HoldEnd);
    let (start, end) = (hold[0].0.t_s(), hold[0].1);
    let w = d.pressure.slice_time(start, end);
    let dmm = d.truth["displacement"].value_at(start).unwrap();
    let p_inf = pad.a * pad.r * pad.elastic_force(dmm) + pad.b;
    let t = w.times_s();
    let y: Vec<f64> = w.values().iter().map(|p| (p - p_inf).ln()).collect();
    let fit = linfit(&t, &y).unwrap();
    assert!(fit.r2 >= 0.9999, "{fit:?}");
    assert!((-1.0 / fit.slope - pad.tau).abs() / pad.tau < 1e-9);
}

#[test]
fn every_scenario_is_seed_deterministic() {
    for name in ScenarioName::ALL {
        let a = run_scenario(&Scenario::new(name, 99), &PadParams::default()).unwrap();
        let b = run_scenario(&Scenario::new(name, 99), &PadParams::default()).unwrap();
        assert_eq!(a.pressure, b.pressure, "{name}");
        assert_eq!(a.truth, b.truth, "{name}");
        assert_eq!(a.events, b.events, "{name}");
    }
}
