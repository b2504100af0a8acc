use std::f64::consts::TAU;

use netadjust::fieldbook::{self, ObservationKind, SigmaPolicy};
use netadjust::synth::SyntheticNetwork;
use proptest::prelude::*;

fn networks() -> impl Strategy<Value = SyntheticNetwork> {
    prop_oneof![
        Just(SyntheticNetwork::traverse()),
        Just(SyntheticNetwork::braced()),
        Just(SyntheticNetwork::square())
    ]
}

proptest! {
    #[test]
    fn text_round_trip_compiles_identically(net in networks(), seed in 0u64..1000) {
        let policy = SigmaPolicy::default();
        let ds = net.noisy_dataset(&policy, seed);
        let book = ds.to_fieldbook().unwrap();
        let again = fieldbook::parse_fieldbook(&book.to_text()).unwrap();
        let ds2 = fieldbook::compile(&again, &policy).unwrap();
        prop_assert_eq!(ds.len(), ds2.len());
        for (a, b) in ds.observations().iter().zip(ds2.observations()) {
            prop_assert_eq!(a.tag(), b.tag());
            prop_assert!((a.value - b.value).abs() < 1e-9);
        }
        // a second pass starts from compiled sigmas and must reproduce them
        let ds3 = fieldbook::compile(&fieldbook::parse_fieldbook(&ds2.to_fieldbook().unwrap().to_text()).unwrap(), &policy).unwrap();
        for (b, c) in ds2.observations().iter().zip(ds3.observations()) {
            prop_assert!((b.value - c.value).abs() < 1e-9);
            prop_assert!((b.sigma - c.sigma).abs() < 1e-12 * b.sigma.max(1.0));
        }
    }

    #[test]
    fn compiled_values_in_range(net in networks(), seed in 0u64..1000) {
        let ds = net.noisy_dataset(&SigmaPolicy::default(), seed);
        for o in ds.observations() {
            match o.kind {
                ObservationKind::Angle => prop_assert!((0.0..TAU).contains(&o.value)),
                ObservationKind::Distance => prop_assert!(o.value > 0.0),
            }
            prop_assert!(o.sigma > 0.0);
        }
    }

    #[test]
    fn repeated_rounds_shrink_sigma(k in 1usize..6, ppm in 0.0f64..10.0, arcsec in 0.5f64..20.0) {
        let net = SyntheticNetwork::traverse();
        let policy = SigmaPolicy { distance_const_m: 0.002, distance_ppm: ppm, angle_arcsec: arcsec };
        let single = net.dataset(&policy);
        let mut book = net.fieldbook();
        for s in &mut book.setups {
            let once = s.rounds.clone();
            for _ in 1..k {
                s.rounds.extend(once.iter().cloned());
            }
        }
        let many = fieldbook::compile(&book, &policy).unwrap();
        prop_assert_eq!(single.len(), many.len());
        for (a, b) in single.observations().iter().zip(many.observations()) {
            prop_assert!((a.value - b.value).abs() < 1e-9);
            prop_assert!((b.sigma * (k as f64).sqrt() - a.sigma).abs() < 1e-12 * a.sigma.max(1.0));
        }
    }
}

#[test]
fn distance_sigma_is_constant_plus_ppm() {
    let p = SigmaPolicy {
        distance_const_m: 0.003,
        distance_ppm: 2.0,
        angle_arcsec: 5.0,
    };
    assert!((p.distance_sigma(500.0) - 0.004).abs() < 1e-15);
    assert!((p.angle_sigma() - 5.0 / 206_264.806_247_096_36).abs() < 1e-15);
}

#[test]
fn parse_error_reports_line() {
    let text = "STN A\nOBS B 0 0 0\nOBS C 12 61 0 10\n";
    let err = fieldbook::parse_fieldbook(text).unwrap_err();
    assert!(matches!(err, fieldbook::FieldBookError::Parse { line: 3, .. }), "{err}");
}
