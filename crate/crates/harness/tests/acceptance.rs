//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Run with `cargo test -p kljn-harness --test acceptance`.

use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use kljn_core::attacks::*;
use kljn_core::circuit::*;
use kljn_core::noise::*;
use kljn_core::privacy::*;
use kljn_core::protocol::*;
use kljn_core::qkd::*;
use kljn_core::rng::{stream, Party, SessionRngs, StreamRng};
use kljn_netwire::{run_channel, run_party, ChannelMode, CompareEndpoint, NetConfig, Role};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs one criterion; exceeding `limit_s` is a failure in itself.
fn criterion(name: &str, limit_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(d) if secs <= limit_s => (true, d),
        Ok(d) => (false, format!("{d}; over the {limit_s:.0} s budget")),
        Err(d) => (false, d),
    };
    println!("{} {name}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
    pass
}

const R_L: f64 = 2.0;
const R_H: f64 = 3.0;

fn sources(seed: u64) -> (JohnsonSource, StreamRng, StreamRng) {
    (
        JohnsonSource::new(&NoiseConfig::default()).unwrap(),
        stream(seed, 0, 0, Party::Alice),
        stream(seed, 0, 0, Party::Bob),
    )
}

fn spectral_identities() -> Outcome {
    let noise = NoiseConfig::default();
    let (mut src, mut ra, mut rb) = sources(1);
    let zero = vec![0.0; noise.samples_per_bit];
    let (mut u, mut i, mut u_l, mut u_h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    while u.len() < 1 << 22 {
        let ua = src.period(R_L, &mut ra).unwrap();
        let ub = src.period(R_H, &mut rb).unwrap();
        let t = solve_ideal(&ua, &ub, R_L, R_H, noise.dt()).unwrap();
        u.extend(t.u_ch);
        i.extend(t.i_ch);
        u_l.extend(solve_ideal(&ua, &zero, R_L, R_H, noise.dt()).unwrap().u_ch);
        u_h.extend(solve_ideal(&zero, &ub, R_L, R_H, noise.dt()).unwrap().u_ch);
    }
    let in_band = |x: &[f64]| {
        let p = estimate_psd(x, noise.sample_rate_hz, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP).unwrap();
        p.band_mean(p.resolution_hz, noise.bandwidth_hz - 2.0 * p.resolution_hz).unwrap()
    };
    let got = [in_band(&u), in_band(&i), in_band(&u_l), in_band(&u_h)];
    let want = [1.2, 0.2, R_L * (R_H / (R_L + R_H)).powi(2), R_H * (R_L / (R_L + R_H)).powi(2)];
    let ok = got.iter().zip(&want).all(|(g, w)| (g / w - 1.0).abs() < 0.1);
    check(
        ok,
        format!(
            "S_u {:.3}/1.2, S_i {:.4}/0.2, S_L {:.4}/{:.4}, S_H {:.4}/{:.4} over {} samples",
            got[0], got[1], got[2], want[2], got[3], want[3], u.len()
        ),
    )
}

fn second_law() -> Outcome {
    let noise = NoiseConfig::default();
    let (mut src, mut ra, mut rb) = sources(2);
    let periods = 2600;
    let diffs: Vec<f64> = (0..periods)
        .map(|_| {
            let ua = src.period(R_L, &mut ra).unwrap();
            let ub = src.period(R_H, &mut rb).unwrap();
            let p = power_flows(&ua, &ub, R_L, R_H).unwrap();
            p.p_a_to_b - p.p_b_to_a
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let se = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let n_eff = periods * 2 * noise.band_bins();
    check(
        n_eff >= 1_000_000 && mean.abs() < 4.0 * se,
        format!("P_LH - P_HL = {mean:.3} W, SE {se:.3}, {n_eff} effective samples"),
    )
}

/// Raw bits giving at least 10^4 sifted bits with overwhelming probability.
const BITS_FOR_1E4: usize = 21_000;

fn passive_null() -> Outcome {
    let cfg = SessionConfig { n_bits: BITS_FOR_1E4, ..SessionConfig::default() };
    let reports: Vec<(AttackKind, AttackReport)> = [AttackKind::CrossCorrelation, AttackKind::PassiveMs]
        .into_par_iter()
        .enumerate()
        .map(|(k, kind)| {
            let t = run_attack(&AttackConfig::new(kind), &cfg, SessionRngs::new(700 + k as u64, 0, 0)).unwrap();
            (kind, pool_trials([&t]).unwrap())
        })
        .collect();
    let ok = reports.iter().all(|(_, r)| r.n_trials >= 10_000 && r.ci_contains(0.5));
    let detail = reports
        .iter()
        .map(|(k, r)| format!("{} p = {:.4} ± {:.4} (n = {})", k.name(), r.success_rate, r.ci95, r.n_trials))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, detail)
}

fn wire_resistance_leak() -> Outcome {
    let r_l = ResistorPair::default().r_low();
    let grid = [0.001, 0.01, 0.05, 0.1];
    let reports: Vec<AttackReport> = grid
        .par_iter()
        .map(|frac| {
            let cfg = SessionConfig {
                n_bits: BITS_FOR_1E4,
                wire: WireModel { r_wire: frac * r_l, ..WireModel::ideal() },
                ..SessionConfig::default()
            };
            // same seed at every point: common random numbers
            let t = run_attack(&AttackConfig::new(AttackKind::WireResistance), &cfg, SessionRngs::new(201, 0, 0));
            pool_trials([&t.unwrap()]).unwrap()
        })
        .collect();
    let monotone = reports.windows(2).all(|w| w[0].success_rate <= w[1].success_rate);
    let enough = reports.iter().all(|r| r.n_trials >= 10_000);
    let last = reports.last().unwrap();
    let detail = grid
        .iter()
        .zip(&reports)
        .map(|(f, r)| format!("{f}: {:.4} ± {:.4}", r.success_rate, r.ci95))
        .collect::<Vec<_>>()
        .join(", ");
    check(monotone && enough && last.ci_low > 0.5, format!("p by r_wire/R_L {detail}"))
}

fn alarm_soundness() -> Outcome {
    let clean = SessionConfig { n_bits: 10_000, abort_on_alarm: false, ..SessionConfig::default() };
    let r = run_session(&clean, SessionRngs::new(800, 0, 0)).unwrap();
    let false_alarms = r.alarms.len();
    let one = SessionConfig { n_bits: 1, ..SessionConfig::default() };
    let m = one.noise.samples_per_bit;
    let trials = 1000;
    let latencies: Vec<Option<usize>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            eve_invasive_injection(&one, 0.1, Waveform::Gaussian, SessionRngs::new(801, 0, k))
                .unwrap()
                .first_alarm_sample
        })
        .collect();
    let detected = latencies.iter().filter(|l| matches!(l, Some(s) if *s < m)).count();
    let worst = latencies.iter().flatten().max().copied().unwrap_or(0);
    check(
        r.bits_run == 10_000 && false_alarms == 0 && detected == trials as usize,
        format!(
            "{false_alarms} false alarms in {} clean periods; {detected}/{trials} injections caught, latest at sample {worst} of {m}",
            r.bits_run
        ),
    )
}

fn mitm_single_bit() -> Outcome {
    let cfg = SessionConfig { n_bits: 20, ..SessionConfig::default() };
    let trials: Vec<AttackTrial> = (0..100)
        .into_par_iter()
        .map(|k| eve_mitm_splitter(&cfg, MitmMode::Active, SessionRngs::new(900, 0, k)).unwrap())
        .collect();
    let extracted: usize = trials.iter().map(|t| t.bits_extracted_before_alarm).sum();
    let alarmed = trials.iter().filter(|t| !t.session.alarms.is_empty()).count();
    check(
        extracted == 0 && alarmed == 100,
        format!("{extracted} bits extracted before the alarm, {alarmed}/100 sessions alarmed"),
    )
}

fn privacy_amplification() -> Outcome {
    let bits = 1_000_000;
    let mut worst: f64 = 0.0;
    for (k, p) in [0.6, 0.75, 0.9].into_iter().enumerate() {
        let mut rng = stream(1000 + k as u64, 0, 0, Party::Harness);
        let key: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
        let guesses: Vec<bool> = key.iter().map(|&b| if rng.random::<f64>() < p { b } else { !b }).collect();
        let measured = empirical_leak(&key, &guesses, 1).unwrap();
        let predicted = predict_leak(p, 1, LeakModel::Advantage).unwrap();
        let q = predicted_guess_probability(p, 1);
        let se = 2.0 * (q * (1.0 - q) / amplified_len(bits, 1) as f64).sqrt();
        worst = worst.max((measured - predicted).abs() / se);
    }
    let certainty = predict_leak(0.0019, 2, LeakModel::Certainty).unwrap();
    let key = vec![false; 74_497];
    let ratio = key.len() as f64 / amplify(&key, 2).unwrap().len() as f64;
    check(
        worst < 3.0 && certainty < 1e-8 && (certainty / 1.3e-11 - 1.0).abs() < 0.01 && (ratio - 4.0).abs() < 1e-3,
        format!("worst deviation {worst:.2} SE; 0.0019^4 = {certainty:.3e}; length ratio {ratio:.4}"),
    )
}

fn bb84_oracle() -> Outcome {
    let trials = 100_000;
    let worst = (1..=10usize)
        .into_par_iter()
        .map(|n| {
            let mut rng = stream(1100, n as u64, 0, Party::Harness);
            let p = detection_probability(n as i64).unwrap();
            let got = simulate_intercept_resend(n, trials, EveBasis::Random, &mut rng).unwrap();
            (got - p).abs() / (p * (1.0 - p) / trials as f64).sqrt()
        })
        .reduce(|| 0.0, f64::max);
    let mut rng = stream(1101, 0, 0, Party::Harness);
    let escape = 1.0 - simulate_intercept_resend(1, trials, EveBasis::Random, &mut rng).unwrap();
    check(
        worst < 4.0 && (escape - 0.75).abs() <= 0.005,
        format!("worst deviation {worst:.2} SE over N = 1..10; single-bit escape {escape:.4}"),
    )
}

fn networked(session: SessionConfig, seed: u64) -> (SessionResult, SessionResult) {
    let chan_l = TcpListener::bind("127.0.0.1:0").unwrap();
    let cmp_l = TcpListener::bind("127.0.0.1:0").unwrap();
    let (chan, cmp) = (chan_l.local_addr().unwrap(), cmp_l.local_addr().unwrap());
    let cfg = NetConfig::new(session, seed);
    let key = b"acceptance";
    std::thread::scope(|s| {
        let c = s.spawn(|| run_channel(&chan_l, &cfg, ChannelMode::Wire, false));
        let a = s.spawn(|| run_party(Role::Alice, chan, CompareEndpoint::Listen(cmp_l), &cfg, seed, key));
        let b = s.spawn(|| run_party(Role::Bob, chan, CompareEndpoint::Connect(cmp), &cfg, seed, key));
        c.join().unwrap().unwrap();
        (a.join().unwrap().unwrap(), b.join().unwrap().unwrap())
    })
}

fn netwire_equivalence() -> Outcome {
    let cases = [
        ("ideal", WireModel::ideal()),
        ("non-ideal", WireModel { r_wire: 50.0, c_cable: 1e-7, killer_on: false }),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (k, (name, wire)) in cases.into_iter().enumerate() {
        let session = SessionConfig { n_bits: 100, wire, ..SessionConfig::default() };
        let seed = 1200 + k as u64;
        let reference = run_session(&session, SessionRngs::new(seed, 0, 0)).unwrap();
        let (alice, bob) = networked(session, seed);
        let same = alice.sifted_indices == reference.sifted_indices
            && bob.sifted_indices == reference.sifted_indices
            && alice.shared_key_alice == reference.shared_key_alice
            && bob.shared_key_bob == reference.shared_key_bob
            && !reference.sifted_indices.is_empty();
        ok &= same;
        details.push(format!("{name}: {} sifted bits {}", reference.sifted_indices.len(), if same { "identical" } else { "differ" }));
    }
    check(ok, details.join(", "))
}

fn main() -> ExitCode {
    let results = [
        criterion("spectral identities", 60.0, spectral_identities),
        criterion("second-law power balance", 60.0, second_law),
        criterion("passive security null", 120.0, passive_null),
        criterion("wire-resistance leak", 600.0, wire_resistance_leak),
        criterion("alarm soundness and latency", 120.0, alarm_soundness),
        criterion("MITM single-bit security", 120.0, mitm_single_bit),
        criterion("privacy amplification", 60.0, privacy_amplification),
        criterion("BB84 oracle", 60.0, bb84_oracle),
        criterion("netwire equivalence", 120.0, netwire_equivalence),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
