use kljn_core::attacks::{eve_invasive_injection, Waveform};
use kljn_core::circuit::*;
use kljn_core::noise::*;
use kljn_core::protocol::*;
use kljn_core::rng::{stream, Party, SessionRngs};

fn base(n_bits: usize) -> SessionConfig {
    SessionConfig { n_bits, ..SessionConfig::default() }
}

#[test]
fn ideal_session_sifts_half_with_low_ber() {
    let r = run_session(&base(2000), SessionRngs::new(1, 0, 0)).unwrap();
    assert!((r.sift_fraction - 0.5).abs() <= 0.05, "sift {}", r.sift_fraction);
    assert!(r.ber <= 1e-3, "ber {}", r.ber);
    assert!(r.alarms.is_empty());
    assert_eq!(r.shared_key_alice.len(), r.sifted_indices.len());
    assert_eq!(r.shared_key_bob.len(), r.sifted_indices.len());
}

#[test]
fn sifting_and_key_convention() {
    let r = run_session(&base(1000), SessionRngs::new(2, 0, 0)).unwrap();
    let mut sifted = r.sifted_indices.iter().peekable();
    for k in 0..r.bits_run {
        if sifted.peek() == Some(&&k) {
            sifted.next();
            assert_ne!(r.alice_choices[k], r.bob_choices[k]);
        }
    }
    for (j, &k) in r.sifted_indices.iter().enumerate() {
        // Bob's resistor choice, H -> 1.
        assert_eq!(r.shared_key_bob.bits()[j], r.bob_choices[k]);
        assert_eq!(r.shared_key_alice.bits()[j], !r.alice_choices[k]);
    }
}

#[test]
fn misclassification_rate_is_small() {
    let cfg = base(1);
    let levels = cfg.expected_levels();
    let mut src = JohnsonSource::new(&cfg.noise).unwrap();
    let mut rng = stream(3, 0, 0, Party::Harness);
    let r = cfg.resistors;
    let (mut wrong, mut total) = (0usize, 0usize);
    for k in 0..10_000 {
        let (a_high, b_high) = (k % 2 == 1, k % 4 >= 2);
        let (r_a, r_b) = (r.pick(a_high), r.pick(b_high));
        let ua = src.period(r_a, &mut rng).unwrap();
        let ub = src.period(r_b, &mut rng).unwrap();
        let t = solve_ideal(&ua, &ub, r_a, r_b, cfg.noise.dt()).unwrap();
        let want = match (a_high, b_high) {
            (false, false) => Band::Low,
            (true, true) => Band::High,
            _ => Band::Mixed,
        };
        let (ms_u, ms_i) = end_statistics(&t.u_ch, &t.i_ch, 0);
        let got = party_band(ms_u, ms_i, &levels, DecisionStat::Voltage).unwrap();
        wrong += (got != Some(want)) as usize;
        total += 1;
    }
    assert!((wrong as f64) / (total as f64) < 1e-3, "{wrong} of {total}");
}

#[test]
fn clean_sessions_never_alarm() {
    let cfg = SessionConfig { abort_on_alarm: false, ..base(10_000) };
    let r = run_session(&cfg, SessionRngs::new(4, 0, 0)).unwrap();
    assert_eq!(r.bits_run, 10_000);
    assert!(r.alarms.is_empty());

    let strict = SessionConfig { alarm_tol_rel: 1e-6, ..base(500) };
    assert!(run_session(&strict, SessionRngs::new(5, 0, 0)).unwrap().alarms.is_empty());
}

#[test]
fn injected_current_alarms_within_first_period() {
    let cfg = base(1);
    let m = cfg.noise.samples_per_bit;
    for trial in 0..1000 {
        let t = eve_invasive_injection(&cfg, 0.1, Waveform::Gaussian, SessionRngs::new(6, 0, trial))
            .unwrap();
        let first = t.session.alarms.first().expect("alarm");
        assert_eq!(first.bit, 0);
        assert!(first.sample < m);
        assert_eq!(t.bits_extracted_before_alarm, 0);
    }
}

#[test]
fn every_waveform_is_caught() {
    for w in [Waveform::Gaussian, Waveform::Constant, Waveform::Sine] {
        let t = eve_invasive_injection(&base(4), 0.1, w, SessionRngs::new(7, 0, 0)).unwrap();
        assert_eq!(t.session.alarms.len(), 1, "{w:?}");
        assert_eq!(t.session.aborted_at, Some(0));
    }
}

#[test]
fn alarm_rate_rises_across_the_tolerance() {
    let cfg = base(1);
    let rate = |amp: f64| {
        let hits = (0..100)
            .filter(|&k| {
                let t = eve_invasive_injection(&cfg, amp, Waveform::Gaussian, SessionRngs::new(8, 0, k))
                    .unwrap();
                !t.session.alarms.is_empty()
            })
            .count();
        hits as f64 / 100.0
    };
    let curve: Vec<f64> = [0.0, 5e-4, 2e-3, 3e-3, 5e-3, 2e-2].into_iter().map(rate).collect();
    assert_eq!(curve[0], 0.0);
    assert_eq!(*curve.last().unwrap(), 1.0);
    assert!(curve.windows(2).all(|w| w[1] >= w[0]), "{curve:?}");
}

#[test]
fn alarm_on_nonideal_wire_stays_silent_when_clean() {
    let wire = WireModel { r_wire: 50.0, c_cable: 0.0, killer_on: false };
    let cfg = SessionConfig { wire, ..base(300) };
    let r = run_session(&cfg, SessionRngs::new(9, 0, 0)).unwrap();
    assert!(r.alarms.is_empty());

    let cap = WireModel { r_wire: 50.0, c_cable: 1e-6, killer_on: false };
    let cfg = SessionConfig { wire: cap, ..base(300) };
    let r = run_session(&cfg, SessionRngs::new(9, 0, 0)).unwrap();
    assert!(r.alarms.is_empty());
    assert!(r.ber <= 1e-2);
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = SessionConfig { wire: WireModel { r_wire: 3.0, c_cable: 1e-9, killer_on: true }, ..base(7) };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SessionConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let result = run_session(&cfg, SessionRngs::new(10, 0, 0)).unwrap();
    let text = serde_json::to_string(&result).unwrap();
    let back: SessionResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, result);
}
