//! Eve's attack catalog and leak accounting.
//!
//! Passive attacks only ever see the published end data of a period (plus
//! whatever Eve measures at her own tap, which on a resistive wire is a linear
//! function of the same data). Each attack turns one period into a guess of
//! the key bit (Bob's resistor choice). Undecidable periods are resolved with
//! a fair coin from Eve's own random stream.
//!
//! Decision signs come from the superposition model in
//! [`crate::circuit::loop_moments`]; the constants below are the resulting
//! conventions and are checked against an independent brute-force oracle in
//! the test suite.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::circuit::{loop_moments, solve_ideal, LoopMoments, ResistorPair, TapPoint, Trace, TraceEnds};
use crate::error::{invalid, Error, Result};
use crate::noise::{mean_square, JohnsonSource, NoiseConfig};
use crate::protocol::{
    run_session_with, AlarmEvent, PeriodInputs, SessionConfig, SessionResult,
    Wiretap,
};
use crate::rng::{SessionRngs, StreamRng};

/// A positive `MS(u_end_a) - MS(u_end_b)` means Alice holds the larger
/// resistor (state HL).
pub const WIRE_RESISTANCE_SIGN: f64 = 1.0;

/// A positive midpoint `<u i>`, with current counted from A toward B, means
/// Alice holds the larger resistor (state HL).
pub const CROSS_CORRELATION_SIGN: f64 = 1.0;

pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    PassiveMs,
    CrossCorrelation,
    WireResistance,
    TemperatureMismatch,
    ResistorInaccuracy,
    InvasiveInjection,
    MitmSplitter,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::PassiveMs => "passive_ms",
            AttackKind::CrossCorrelation => "cross_correlation",
            AttackKind::WireResistance => "wire_resistance",
            AttackKind::TemperatureMismatch => "temperature_mismatch",
            AttackKind::ResistorInaccuracy => "resistor_inaccuracy",
            AttackKind::InvasiveInjection => "invasive_injection",
            AttackKind::MitmSplitter => "mitm_splitter",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    /// White Gaussian current, RMS = amplitude.
    #[default]
    Gaussian,
    /// DC current equal to the amplitude.
    Constant,
    /// Sine at half the noise bandwidth, RMS = amplitude.
    Sine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitmMode {
    /// Wire cut; Eve terminates each side with her own KLJN generator.
    #[default]
    Active,
    /// Eve is attached but leaves the wire untouched.
    Passive,
    /// Eve cuts the wire and relays the loop faithfully.
    Relay,
}

/// Kind-specific parameters; unused fields are ignored by other kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackParams {
    /// Bob's temperature relative to Alice's, in (0, 100].
    pub temperature_ratio: f64,
    /// Relative resistor errors, |δ| <= 0.05.
    pub alice_resistor_error: f64,
    pub bob_resistor_error: f64,
    /// Injected current as a fraction of the mixed-state current RMS, in [0, 10].
    pub injection_amplitude: f64,
    pub waveform: Waveform,
    pub mitm_mode: MitmMode,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            temperature_ratio: 1.0,
            alice_resistor_error: 0.0,
            bob_resistor_error: 0.0,
            injection_amplitude: 0.0,
            waveform: Waveform::Gaussian,
            mitm_mode: MitmMode::Active,
        }
    }
}

pub const MAX_RESISTOR_ERROR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default)]
    pub tap_point: TapPoint,
    #[serde(default)]
    pub params: AttackParams,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self { kind, tap_point: TapPoint::Mid, params: AttackParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if !(p.temperature_ratio > 0.0 && p.temperature_ratio <= 100.0) {
            return Err(invalid(format!("temperature_ratio {} outside (0, 100]", p.temperature_ratio)));
        }
        for e in [p.alice_resistor_error, p.bob_resistor_error] {
            if !(e.abs() <= MAX_RESISTOR_ERROR) {
                return Err(invalid(format!("resistor error {e} outside [-0.05, 0.05]")));
            }
        }
        if !(0.0..=10.0).contains(&p.injection_amplitude) {
            return Err(invalid(format!(
                "injection_amplitude {} outside [0, 10]",
                p.injection_amplitude
            )));
        }
        Ok(())
    }

    /// The session physics this attack assumes.
    pub fn session(&self, base: &SessionConfig) -> SessionConfig {
        let mut cfg = base.clone();
        match self.kind {
            AttackKind::TemperatureMismatch => {
                cfg.imperfections.bob_temperature_ratio = self.params.temperature_ratio;
            }
            AttackKind::ResistorInaccuracy => {
                cfg.imperfections.alice_resistor_error = self.params.alice_resistor_error;
                cfg.imperfections.bob_resistor_error = self.params.bob_resistor_error;
            }
            _ => {}
        }
        cfg
    }
}

/// Eve's guess about the sifted state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Guess {
    /// Alice L, Bob H: key bit 1.
    Lh,
    /// Alice H, Bob L: key bit 0.
    Hl,
}

impl Guess {
    pub fn key_bit(self) -> bool {
        matches!(self, Guess::Lh)
    }

    fn from_signed(stat: f64) -> Option<Guess> {
        if stat > 0.0 {
            Some(Guess::Hl)
        } else if stat < 0.0 {
            Some(Guess::Lh)
        } else {
            None
        }
    }
}

/// A guess with the statistic behind it; `guess` is `None` on a tie.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub guess: Option<Guess>,
    pub statistic: f64,
}

/// Sign of `<u i>` against a zero threshold.
pub fn eve_cross_correlation(trace: &Trace) -> Result<Decision> {
    eve_cross_correlation_with_threshold(trace, 0.0, CROSS_CORRELATION_SIGN)
}

/// `<u i>` compared to `threshold`; `direction` is +1 when larger values
/// point to HL.
pub fn eve_cross_correlation_with_threshold(
    trace: &Trace,
    threshold: f64,
    direction: f64,
) -> Result<Decision> {
    if trace.is_empty() {
        return Err(Error::EmptyInput);
    }
    let statistic =
        trace.u_ch.iter().zip(&trace.i_ch).map(|(u, i)| u * i).sum::<f64>() / trace.len() as f64;
    Ok(Decision { guess: Guess::from_signed((statistic - threshold) * direction), statistic })
}

/// Difference of the end mean-square voltages.
pub fn eve_wire_resistance(ends: &TraceEnds) -> Result<Decision> {
    if ends.is_empty() {
        return Err(Error::EmptyInput);
    }
    let statistic = mean_square(&ends.u_end_a) - mean_square(&ends.u_end_b);
    Ok(Decision { guess: Guess::from_signed(statistic * WIRE_RESISTANCE_SIGN), statistic })
}

/// Expected tap moments under each hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypothesisLevels {
    pub lh: LoopMoments,
    pub hl: LoopMoments,
}

impl HypothesisLevels {
    /// Predictions for a session as Eve models it: per-party resistances and
    /// temperatures are taken from `cfg.imperfections`, capacitance ignored.
    pub fn for_session(cfg: &SessionConfig, tap: TapPoint) -> Self {
        let alice_var = cfg.noise.four_kt() * cfg.noise.bandwidth_hz;
        let bob_var = alice_var * cfg.imperfections.bob_temperature_ratio;
        let moments = |a_high: bool, b_high: bool| {
            let r_a = cfg.alice_resistance(a_high);
            let r_b = cfg.bob_resistance(b_high);
            loop_moments(tap, r_a, r_b, cfg.wire.r_wire, alice_var * r_a, bob_var * r_b)
        };
        Self { lh: moments(false, true), hl: moments(true, false) }
    }

    fn indistinguishable(&self) -> bool {
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        same(self.lh.ms_u, self.hl.ms_u) && same(self.lh.ms_i, self.hl.ms_i)
    }
}

/// Nearest hypothesis in log mean-square space (voltage and current).
///
/// The statistic is `d(LH) - d(HL)`: positive means HL fits better.
pub fn eve_level_match(trace: &Trace, hyp: &HypothesisLevels) -> Result<Decision> {
    if trace.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ms_u = mean_square(&trace.u_ch).ln();
    let ms_i = mean_square(&trace.i_ch).ln();
    let dist = |m: &LoopMoments| (ms_u - m.ms_u.ln()).powi(2) + (ms_i - m.ms_i.ln()).powi(2);
    let statistic = dist(&hyp.lh) - dist(&hyp.hl);
    let guess = if hyp.indistinguishable() || !statistic.is_finite() {
        None
    } else {
        Guess::from_signed(statistic)
    };
    Ok(Decision { guess, statistic })
}

/// Level matching against hypotheses built from per-party temperatures.
pub fn eve_temperature_mismatch(trace: &Trace, assumed: &HypothesisLevels) -> Result<Decision> {
    eve_level_match(trace, assumed)
}

/// Level matching against hypotheses built from the actual per-party
/// resistances (ideal wire, equal temperatures).
pub fn eve_resistor_inaccuracy(
    trace: &Trace,
    nominal: &ResistorPair,
    alice_error: f64,
    bob_error: f64,
    noise: &NoiseConfig,
) -> Result<Decision> {
    let var = noise.four_kt() * noise.bandwidth_hz;
    let moments = |a_high: bool, b_high: bool| {
        let r_a = nominal.pick(a_high) * (1.0 + alice_error);
        let r_b = nominal.pick(b_high) * (1.0 + bob_error);
        loop_moments(TapPoint::Mid, r_a, r_b, 0.0, var * r_a, var * r_b)
    };
    eve_level_match(trace, &HypothesisLevels { lh: moments(false, true), hl: moments(true, false) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub n_trials: usize,
    /// Fraction of correct LH/HL guesses.
    pub success_rate: f64,
    /// Half-width of the Wilson 95 % interval.
    pub ci95: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `max(0, 2p - 1)`
    pub leak_fraction: f64,
    /// `1 - H2(p)` bits per bit.
    pub leak_mutual_info: f64,
    pub alarms_triggered: usize,
    /// Sifted bits produced before the first alarm, summed over sessions.
    pub bits_extracted_before_alarm: usize,
    /// Sample index of the first alarm, counted from the session start, per
    /// alarmed session.
    pub alarm_latencies: Vec<usize>,
}

impl AttackReport {
    /// Whether `p` lies inside the Wilson interval.
    pub fn ci_contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }

    fn no_information() -> Self {
        Self {
            n_trials: 0,
            success_rate: 0.5,
            ci95: 0.5,
            ci_low: 0.0,
            ci_high: 1.0,
            leak_fraction: 0.0,
            leak_mutual_info: 0.0,
            alarms_triggered: 0,
            bits_extracted_before_alarm: 0,
            alarm_latencies: Vec::new(),
        }
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    h(p) + h(1.0 - p)
}

/// Wilson score interval `(low, high)` at 95 %.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn summarize(guesses: &[bool], truth: &[bool]) -> Result<AttackReport> {
    if guesses.len() != truth.len() {
        return Err(Error::LengthMismatch { left: guesses.len(), right: truth.len() });
    }
    if guesses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = guesses.len();
    let hits = guesses.iter().zip(truth).filter(|(g, t)| g == t).count();
    let p = hits as f64 / n as f64;
    let (ci_low, ci_high) = wilson_interval(hits, n);
    Ok(AttackReport {
        n_trials: n,
        success_rate: p,
        ci95: 0.5 * (ci_high - ci_low),
        ci_low,
        ci_high,
        leak_fraction: (2.0 * p - 1.0).max(0.0),
        leak_mutual_info: 1.0 - binary_entropy(p.clamp(0.0, 1.0)),
        alarms_triggered: 0,
        bits_extracted_before_alarm: 0,
        alarm_latencies: Vec::new(),
    })
}

/// `len` samples of an injected current with the given RMS. `cycles_per_sample`
/// sets the sine frequency.
pub fn injection_waveform(
    waveform: Waveform,
    rms: f64,
    cycles_per_sample: f64,
    len: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    match waveform {
        Waveform::Gaussian => (0..len).map(|_| rms * rng.sample::<f64, _>(StandardNormal)).collect(),
        Waveform::Constant => vec![rms; len],
        Waveform::Sine => {
            let w = 2.0 * std::f64::consts::PI * cycles_per_sample;
            (0..len).map(|n| rms * std::f64::consts::SQRT_2 * (w * n as f64).sin()).collect()
        }
    }
}

/// Injection RMS for an amplitude given relative to the mixed-state current.
pub fn injection_rms(session: &SessionConfig, amplitude: f64) -> f64 {
    amplitude * session.expected_levels().ms_i[1].sqrt()
}

/// Eve attached to a running session.
pub struct Eve {
    attack: AttackConfig,
    hyps: HypothesisLevels,
    rng: StreamRng,
    samples_per_bit: usize,
    injection_rms: f64,
    injection_freq: f64,
    dt: f64,
    mitm: Option<Splitter>,
    guesses: Vec<Guess>,
}

struct Splitter {
    toward_alice: JohnsonSource,
    toward_bob: JohnsonSource,
    resistors: ResistorPair,
    var_scale: f64,
    inferred_bob_high: Option<bool>,
}

impl Eve {
    pub fn new(attack: &AttackConfig, session: &SessionConfig, rng: StreamRng) -> Result<Self> {
        attack.validate()?;
        let mitm = if attack.kind == AttackKind::MitmSplitter
            && attack.params.mitm_mode == MitmMode::Active
        {
            Some(Splitter {
                toward_alice: JohnsonSource::new(&session.noise)?,
                toward_bob: JohnsonSource::new(&session.noise)?,
                resistors: session.resistors,
                var_scale: session.noise.four_kt() * session.noise.bandwidth_hz,
                inferred_bob_high: None,
            })
        } else {
            None
        };
        Ok(Self {
            attack: *attack,
            hyps: HypothesisLevels::for_session(session, attack.tap_point),
            rng,
            samples_per_bit: session.noise.samples_per_bit,
            injection_rms: injection_rms(session, attack.params.injection_amplitude),
            injection_freq: session.noise.bandwidth_hz / 2.0,
            dt: session.noise.dt(),
            mitm,
            guesses: Vec::new(),
        })
    }

    /// Guesses, one per observed period.
    pub fn guesses(&self) -> &[Guess] {
        &self.guesses
    }

    fn resolve(&mut self, d: Option<Guess>) -> Guess {
        d.unwrap_or_else(|| if self.rng.random::<bool>() { Guess::Lh } else { Guess::Hl })
    }

    fn cross_correlation(&self, trace: &Trace) -> Result<Decision> {
        let (lh, hl) = (self.hyps.lh.cross_ui, self.hyps.hl.cross_ui);
        let direction = if hl > lh {
            1.0
        } else if hl < lh {
            -1.0
        } else {
            CROSS_CORRELATION_SIGN
        };
        eve_cross_correlation_with_threshold(trace, 0.5 * (lh + hl), direction)
    }

    fn decide(&mut self, public: &TraceEnds, alarm: Option<&AlarmEvent>) -> Result<Option<Guess>> {
        let trace = || public.tap(self.attack.tap_point);
        Ok(match self.attack.kind {
            AttackKind::PassiveMs
            | AttackKind::TemperatureMismatch
            | AttackKind::ResistorInaccuracy => eve_level_match(&trace(), &self.hyps)?.guess,
            AttackKind::CrossCorrelation => self.cross_correlation(&trace())?.guess,
            AttackKind::WireResistance => eve_wire_resistance(public)?.guess,
            AttackKind::InvasiveInjection => {
                let end = alarm.map_or(public.len(), |a| a.sample);
                if end < 2 {
                    None
                } else {
                    eve_level_match(&trace().slice(0..end), &self.hyps)?.guess
                }
            }
            AttackKind::MitmSplitter => match self.mitm.as_mut().and_then(|m| m.inferred_bob_high.take()) {
                Some(bob_high) => Some(if bob_high { Guess::Lh } else { Guess::Hl }),
                None => eve_level_match(&trace(), &self.hyps)?.guess,
            },
        })
    }
}

impl Wiretap for Eve {
    fn injection(&mut self, _bit: usize, len: usize) -> Option<Vec<f64>> {
        if self.attack.kind != AttackKind::InvasiveInjection || self.injection_rms == 0.0 {
            return None;
        }
        let (w, rms) = (self.attack.params.waveform, self.injection_rms);
        Some(injection_waveform(w, rms, self.injection_freq * self.dt, len, &mut self.rng))
    }

    fn intercept(&mut self, _bit: usize, inputs: &PeriodInputs<'_>) -> Result<Option<TraceEnds>> {
        let Some(split) = self.mitm.as_mut() else {
            return Ok(None);
        };
        let m = self.samples_per_bit;
        let e1_high: bool = self.rng.random();
        let e2_high: bool = self.rng.random();
        let r_e1 = split.resistors.pick(e1_high);
        let r_e2 = split.resistors.pick(e2_high);
        let mut u_e1 = vec![0.0; m];
        let mut u_e2 = vec![0.0; m];
        split.toward_alice.fill_period(r_e1, &mut self.rng, &mut u_e1)?;
        split.toward_bob.fill_period(r_e2, &mut self.rng, &mut u_e2)?;

        let alice_loop = solve_ideal(inputs.u_a, &u_e1, inputs.r_a, r_e1, inputs.dt)?;
        let bob_loop = solve_ideal(&u_e2, inputs.u_b, r_e2, inputs.r_b, inputs.dt)?;

        // Eve knows her own resistor, so each loop's level reveals the party's.
        let var = split.var_scale;
        let level = |r_x: f64, r_e: f64| var * r_x * r_e / (r_x + r_e);
        let lo = level(split.resistors.r_low(), r_e2);
        let hi = level(split.resistors.r_high(), r_e2);
        let ms_bob = mean_square(&bob_loop.u_ch);
        split.inferred_bob_high = Some(ms_bob > (lo * hi).sqrt());

        let ends = TraceEnds {
            u_end_b: bob_loop.u_ch.clone(),
            i_b: bob_loop.i_ch.iter().map(|i| -i).collect(),
            u_mid: alice_loop.u_ch.clone(),
            u_end_a: alice_loop.u_ch,
            i_a: alice_loop.i_ch,
            dt: inputs.dt,
        };
        Ok(Some(ends))
    }

    fn observe(&mut self, _bit: usize, public: &TraceEnds, alarm: Option<&AlarmEvent>) {
        // Errors only arise on empty traces, which the session never produces.
        let d = self.decide(public, alarm).unwrap_or(None);
        let g = self.resolve(d);
        self.guesses.push(g);
    }
}

/// One attacked session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTrial {
    pub session: SessionResult,
    /// Eve's key-bit guesses on the sifted periods.
    pub guesses: Vec<bool>,
    /// Bob's key bits on the sifted periods.
    pub truth: Vec<bool>,
    pub first_alarm_sample: Option<usize>,
    pub bits_extracted_before_alarm: usize,
}

/// Runs a session under attack and pairs Eve's guesses with the key.
pub fn run_attack(attack: &AttackConfig, base: &SessionConfig, rngs: SessionRngs) -> Result<AttackTrial> {
    let cfg = attack.session(base);
    let mut eve = Eve::new(attack, &cfg, rngs.eve.clone())?;
    let session = run_session_with(&cfg, rngs, &mut eve)?;
    let guesses = session.sifted_indices.iter().map(|&k| eve.guesses()[k].key_bit()).collect();
    let truth = session.shared_key_bob.bits().to_vec();
    let first_alarm_sample =
        session.alarms.first().map(|a| a.bit * cfg.noise.samples_per_bit + a.sample);
    let bits_extracted_before_alarm = session.bits_before_first_alarm();
    Ok(AttackTrial { session, guesses, truth, first_alarm_sample, bits_extracted_before_alarm })
}

/// Pools trials into one report. With no sifted bits at all, the report
/// carries no information (p = 0.5, full-width interval).
pub fn pool_trials<'a>(trials: impl IntoIterator<Item = &'a AttackTrial>) -> Result<AttackReport> {
    let mut guesses = Vec::new();
    let mut truth = Vec::new();
    let mut alarms = 0;
    let mut extracted = 0;
    let mut latencies = Vec::new();
    for t in trials {
        guesses.extend_from_slice(&t.guesses);
        truth.extend_from_slice(&t.truth);
        if let Some(s) = t.first_alarm_sample {
            alarms += 1;
            latencies.push(s);
        }
        extracted += t.bits_extracted_before_alarm;
    }
    let mut report = match summarize(&guesses, &truth) {
        Ok(r) => r,
        Err(Error::EmptyInput) => AttackReport::no_information(),
        Err(e) => return Err(e),
    };
    report.alarms_triggered = alarms;
    report.bits_extracted_before_alarm = extracted;
    report.alarm_latencies = latencies;
    Ok(report)
}

/// Current injection at the tap for one session.
pub fn eve_invasive_injection(
    base: &SessionConfig,
    amplitude: f64,
    waveform: Waveform,
    rngs: SessionRngs,
) -> Result<AttackTrial> {
    let mut attack = AttackConfig::new(AttackKind::InvasiveInjection);
    attack.params.injection_amplitude = amplitude;
    attack.params.waveform = waveform;
    run_attack(&attack, base, rngs)
}

/// Man-in-the-middle splitter for one session.
pub fn eve_mitm_splitter(base: &SessionConfig, mode: MitmMode, rngs: SessionRngs) -> Result<AttackTrial> {
    let mut attack = AttackConfig::new(AttackKind::MitmSplitter);
    attack.params.mitm_mode = mode;
    run_attack(&attack, base, rngs)
}
