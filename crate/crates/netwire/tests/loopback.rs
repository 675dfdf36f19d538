use std::net::{SocketAddr, TcpListener};
use std::thread;

use kljn_core::attacks::Waveform;
use kljn_core::circuit::WireModel;
use kljn_core::protocol::{run_session, SessionConfig, SessionResult};
use kljn_core::rng::SessionRngs;
use kljn_netwire::{
    run_channel, run_eve, run_party, ChannelMode, ChannelReport, CompareEndpoint, EveLog, EveMode,
    NetConfig, NetError, Role,
};

const KEY: &[u8] = b"shared authentication key";

struct Outcome {
    channel: Result<ChannelReport, NetError>,
    alice: Result<SessionResult, NetError>,
    bob: Result<SessionResult, NetError>,
    eve: Option<Result<EveLog, NetError>>,
}

fn local() -> (TcpListener, SocketAddr) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let a = l.local_addr().unwrap();
    (l, a)
}

fn run_net(cfg: &NetConfig, seed: u64, mode: ChannelMode, eve: Option<EveMode>, bob_key: &[u8]) -> Outcome {
    let (chan_l, chan) = local();
    let (cmp_l, cmp) = local();
    thread::scope(|s| {
        let expect_eve = eve.is_some();
        let ch = s.spawn(move || run_channel(&chan_l, cfg, mode, expect_eve));
        let a = s.spawn(move || run_party(Role::Alice, chan, CompareEndpoint::Listen(cmp_l), cfg, seed, KEY));
        let b = s.spawn(move || run_party(Role::Bob, chan, CompareEndpoint::Connect(cmp), cfg, seed, bob_key));
        let e = eve.map(|m| s.spawn(move || run_eve(chan, cfg, m, seed)));
        Outcome {
            channel: ch.join().unwrap(),
            alice: a.join().unwrap(),
            bob: b.join().unwrap(),
            eve: e.map(|h| h.join().unwrap()),
        }
    })
}

fn assert_matches_in_process(session: SessionConfig, seed: u64) {
    let reference = run_session(&session, SessionRngs::new(seed, 0, 0)).unwrap();
    let cfg = NetConfig::new(session, 7);
    let out = run_net(&cfg, seed, ChannelMode::Wire, None, KEY);
    let report = out.channel.unwrap();
    let alice = out.alice.unwrap();
    let bob = out.bob.unwrap();
    assert_eq!(report.bits, reference.bits_run);
    assert!(reference.alarms.is_empty());
    for view in [&alice, &bob] {
        assert_eq!(view.sifted_indices, reference.sifted_indices);
        assert!(view.alarms.is_empty());
    }
    // each party knows its own choices; the peer's are only inferred
    assert_eq!(alice.alice_choices, reference.alice_choices);
    assert_eq!(alice.shared_key_alice, reference.shared_key_alice);
    assert_eq!(bob.bob_choices, reference.bob_choices);
    assert_eq!(bob.shared_key_bob, reference.shared_key_bob);
    assert!(!reference.sifted_indices.is_empty());
}

#[test]
fn ideal_wire_matches_in_process_session() {
    assert_matches_in_process(SessionConfig { n_bits: 100, ..SessionConfig::default() }, 11);
}

#[test]
fn nonideal_wire_matches_in_process_session() {
    let session = SessionConfig {
        n_bits: 100,
        wire: WireModel { r_wire: 50.0, c_cable: 1e-7, killer_on: false },
        ..SessionConfig::default()
    };
    assert_matches_in_process(session, 12);
}

#[test]
fn corrupt_frames_are_retransmitted() {
    let session = SessionConfig { n_bits: 50, ..SessionConfig::default() };
    let reference = run_session(&session, SessionRngs::new(3, 0, 0)).unwrap();
    let cfg = NetConfig { fault_rate: 0.05, fault_seed: 99, ..NetConfig::new(session, 1) };
    let out = run_net(&cfg, 3, ChannelMode::Wire, None, KEY);
    let report = out.channel.unwrap();
    assert!(report.retransmissions > 0);
    assert_eq!(report.bits, 50);
    let alice = out.alice.unwrap();
    assert_eq!(alice.shared_key_alice, reference.shared_key_alice);
    assert_eq!(out.bob.unwrap().shared_key_bob, reference.shared_key_bob);
}

#[test]
fn thousand_bits_survive_one_percent_faults() {
    let session = SessionConfig { n_bits: 1000, ..SessionConfig::default() };
    let cfg = NetConfig { fault_rate: 0.01, fault_seed: 5, ..NetConfig::new(session, 2) };
    let out = run_net(&cfg, 4, ChannelMode::Wire, None, KEY);
    let report = out.channel.unwrap();
    assert_eq!(report.bits, 1000);
    assert_eq!(report.aborted_at, None);
    assert!(report.retransmissions > 0);
    let (alice, bob) = (out.alice.unwrap(), out.bob.unwrap());
    assert_eq!(alice.bits_run, 1000);
    assert_eq!(alice.aborted_at, None);
    assert_eq!(alice.shared_key_alice, bob.shared_key_alice);
    assert!(alice.ber <= 1e-2);
}

#[test]
fn wrong_auth_key_aborts_at_first_compare_frame() {
    let cfg = NetConfig::new(SessionConfig { n_bits: 20, ..SessionConfig::default() }, 3);
    let out = run_net(&cfg, 8, ChannelMode::Wire, None, b"not the key");
    for r in [out.alice, out.bob] {
        match r {
            Err(NetError::Authentication { bit, block }) => assert_eq!((bit, block), (0, 0)),
            other => panic!("expected authentication failure, got {other:?}"),
        }
    }
    assert_eq!(out.channel.unwrap().aborted_at, Some(0));
}

#[test]
fn splitter_alarms_before_first_sifted_bit() {
    let cfg = NetConfig::new(SessionConfig { n_bits: 100, ..SessionConfig::default() }, 4);
    let out = run_net(&cfg, 21, ChannelMode::Splitter { seed: 77 }, None, KEY);
    for view in [out.alice.unwrap(), out.bob.unwrap()] {
        assert_eq!(view.alarms.first().map(|a| a.bit), Some(0));
        assert!(view.sifted_indices.is_empty());
        assert_eq!(view.bits_before_first_alarm(), 0);
        assert_eq!(view.aborted_at, Some(0));
    }
    assert_eq!(out.channel.unwrap().aborted_at, Some(0));
}

#[test]
fn ten_percent_injection_alarms_within_one_period() {
    let session = SessionConfig { n_bits: 100, ..SessionConfig::default() };
    let m = session.noise.samples_per_bit;
    let cfg = NetConfig::new(session, 5);
    let mode = EveMode::Inject { amplitude: 0.1, waveform: Waveform::Gaussian };
    let out = run_net(&cfg, 31, ChannelMode::Wire, Some(mode), KEY);
    for view in [out.alice.unwrap(), out.bob.unwrap()] {
        let first = view.alarms.first().expect("injection must alarm");
        assert_eq!(first.bit, 0);
        assert!(first.sample < m);
    }
    let eve = out.eve.unwrap().unwrap();
    assert_eq!(eve.aborted_at, Some(1));
}

#[test]
fn passive_tap_sees_every_period_without_alarms() {
    let cfg = NetConfig::new(SessionConfig { n_bits: 20, ..SessionConfig::default() }, 6);
    let out = run_net(&cfg, 41, ChannelMode::Wire, Some(EveMode::Passive), KEY);
    let alice = out.alice.unwrap();
    assert!(alice.alarms.is_empty());
    let eve = out.eve.unwrap().unwrap();
    assert_eq!(eve.periods.len(), 20);
    assert!(eve.periods.iter().all(|t| t.u_ch.len() == cfg.session.noise.samples_per_bit));
}
