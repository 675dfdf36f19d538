//! The Alice/Bob key-exchange session.
//!
//! Every clock period each party draws a fair bit, connects `R_H` (bit 1) or
//! `R_L` (bit 0) with its noise generator, and measures the mean-square
//! voltage and current at its own end. The three possible levels reveal
//! whether the period was LL, mixed (LH/HL) or HH; only mixed periods are
//! kept. The shared key bit is Bob's choice: Bob records his own bit and
//! Alice records the complement of hers.
//!
//! Both ends publish their instantaneous voltage and current, and each sample
//! is checked against the wire model (see [`AlarmMonitor`]). A period with an
//! alarm is never sifted.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{EndSample, LoopSolver, ResistorPair, TraceEnds, WireModel};
use crate::error::{invalid, Error, Result};
use crate::key::BitKey;
use crate::noise::{mean_square, JohnsonSource, NoiseConfig};
use crate::rng::{SessionRngs, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitState {
    LL,
    LH,
    HL,
    HH,
}

impl BitState {
    /// `true` means the party connected `R_H`.
    pub fn from_choices(alice_high: bool, bob_high: bool) -> Self {
        match (alice_high, bob_high) {
            (false, false) => BitState::LL,
            (false, true) => BitState::LH,
            (true, false) => BitState::HL,
            (true, true) => BitState::HH,
        }
    }

    pub fn is_secure(self) -> bool {
        matches!(self, BitState::LH | BitState::HL)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStat {
    #[default]
    Voltage,
    Current,
    /// Voltage and current must agree, otherwise the period is erased.
    Both,
}

/// Deviations from the ideal parties, used by the mismatch attacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Imperfections {
    /// Bob's effective temperature relative to Alice's.
    pub bob_temperature_ratio: f64,
    /// Relative error of both of Alice's resistors.
    pub alice_resistor_error: f64,
    pub bob_resistor_error: f64,
}

impl Default for Imperfections {
    fn default() -> Self {
        Self { bob_temperature_ratio: 1.0, alice_resistor_error: 0.0, bob_resistor_error: 0.0 }
    }
}

impl Imperfections {
    pub fn validate(&self) -> Result<()> {
        if !(self.bob_temperature_ratio > 0.0) || !self.bob_temperature_ratio.is_finite() {
            return Err(invalid("bob_temperature_ratio must be positive"));
        }
        for e in [self.alice_resistor_error, self.bob_resistor_error] {
            if !(e.abs() < 1.0) {
                return Err(invalid(format!("resistor error {e} out of range (-1, 1)")));
            }
        }
        Ok(())
    }
}

/// Uniform quantizer applied to all published samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quantizer {
    pub bits: u32,
    /// Full scale as a multiple of the mixed-state RMS level.
    pub full_scale_rms: f64,
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { bits: 12, full_scale_rms: 5.0 }
    }
}

impl Quantizer {
    pub fn quantize(&self, x: f64, rms: f64) -> f64 {
        let range = self.full_scale_rms * rms;
        let step = 2.0 * range / (1u64 << self.bits) as f64;
        (x.clamp(-range, range) / step).round() * step
    }
}

fn default_tol() -> f64 {
    DEFAULT_ALARM_TOL
}

fn default_true() -> bool {
    true
}

/// Default alarm tolerance relative to the channel RMS. Sits well above the
/// 12-bit quantizer's error and well below a 10 % injected current.
pub const DEFAULT_ALARM_TOL: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub n_bits: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub resistors: ResistorPair,
    #[serde(default)]
    pub wire: WireModel,
    #[serde(default = "default_tol")]
    pub alarm_tol_rel: f64,
    #[serde(default)]
    pub decision_stat: DecisionStat,
    #[serde(default)]
    pub imperfections: Imperfections,
    #[serde(default)]
    pub quantizer: Option<Quantizer>,
    #[serde(default = "default_true")]
    pub abort_on_alarm: bool,
    /// Test hook: classify from the exact expected levels instead of the
    /// measured mean squares.
    #[serde(default)]
    pub level_oracle: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_bits: 1000,
            noise: NoiseConfig::default(),
            resistors: ResistorPair::default(),
            wire: WireModel::default(),
            alarm_tol_rel: DEFAULT_ALARM_TOL,
            decision_stat: DecisionStat::default(),
            imperfections: Imperfections::default(),
            quantizer: None,
            abort_on_alarm: true,
            level_oracle: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bits == 0 {
            return Err(invalid("n_bits must be at least 1"));
        }
        if !(self.alarm_tol_rel > 0.0) {
            return Err(invalid("alarm_tol_rel must be positive"));
        }
        self.noise.validate()?;
        self.wire.validate()?;
        self.imperfections.validate()?;
        if let Some(q) = self.quantizer {
            if q.bits == 0 || q.bits > 52 || !(q.full_scale_rms > 0.0) {
                return Err(invalid("quantizer needs 1..=52 bits and a positive full scale"));
            }
        }
        // LL has the shortest time constant, HH the longest warm-up.
        let worst = self.imperfections.alice_resistor_error.abs().max(self.imperfections.bob_resistor_error.abs());
        let r_min = self.resistors.r_low() * (1.0 - worst);
        let r_max = self.resistors.r_high() * (1.0 + worst);
        LoopSolver::new(r_min, r_min, &self.wire, self.noise.dt())?;
        let solver = LoopSolver::new(r_max, r_max, &self.wire, self.noise.dt())?;
        if solver.warmup_samples() >= self.noise.samples_per_bit {
            return Err(invalid(format!(
                "capacitor warm-up of {} samples does not fit a {}-sample bit period",
                solver.warmup_samples(),
                self.noise.samples_per_bit
            )));
        }
        Ok(())
    }

    /// Actual resistance connected by a party.
    pub fn alice_resistance(&self, high: bool) -> f64 {
        self.resistors.pick(high) * (1.0 + self.imperfections.alice_resistor_error)
    }

    pub fn bob_resistance(&self, high: bool) -> f64 {
        self.resistors.pick(high) * (1.0 + self.imperfections.bob_resistor_error)
    }

    pub fn expected_levels(&self) -> ExpectedLevels {
        expected_levels(&self.resistors, &self.noise)
    }
}

/// Expected mean squares for LL, mixed and HH (ideal loop, nominal values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLevels {
    /// Ascending, V².
    pub ms_u: [f64; 3],
    /// Descending, A².
    pub ms_i: [f64; 3],
}

impl ExpectedLevels {
    pub fn for_state(&self, state: BitState) -> (f64, f64) {
        let k = match state {
            BitState::LL => 0,
            BitState::LH | BitState::HL => 1,
            BitState::HH => 2,
        };
        (self.ms_u[k], self.ms_i[k])
    }
}

pub fn expected_levels(resistors: &ResistorPair, noise: &NoiseConfig) -> ExpectedLevels {
    let scale = noise.four_kt() * noise.bandwidth_hz;
    let (l, h) = (resistors.r_low(), resistors.r_high());
    let pairs = [(l, l), (l, h), (h, h)];
    ExpectedLevels {
        ms_u: pairs.map(|(a, b)| scale * a * b / (a + b)),
        ms_i: pairs.map(|(a, b)| scale / (a + b)),
    }
}

/// Resistor configuration a mean-square level points to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// LL
    Low,
    /// LH or HL
    Mixed,
    /// HH
    High,
}

/// Classifies a measured mean square against three expected levels.
///
/// Levels may be ascending (voltage) or descending (current); thresholds are
/// the geometric means of adjacent levels.
pub fn classify_level(ms: f64, levels: &[f64; 3]) -> Result<Band> {
    if !ms.is_finite() {
        return Err(Error::NonFinite(ms));
    }
    let ascending = levels[0] < levels[2];
    if !(levels.iter().all(|l| *l > 0.0)
        && (ascending && levels[0] < levels[1] && levels[1] < levels[2]
            || !ascending && levels[0] > levels[1] && levels[1] > levels[2]))
    {
        return Err(invalid(format!("levels not strictly monotone: {levels:?}")));
    }
    let t_low = (levels[0] * levels[1]).sqrt();
    let t_high = (levels[1] * levels[2]).sqrt();
    let band = if ascending {
        if ms < t_low {
            Band::Low
        } else if ms < t_high {
            Band::Mixed
        } else {
            Band::High
        }
    } else if ms > t_low {
        Band::Low
    } else if ms > t_high {
        Band::Mixed
    } else {
        Band::High
    };
    Ok(band)
}

/// A party's decision for one period; `None` is an erasure.
pub fn party_band(
    ms_u: f64,
    ms_i: f64,
    levels: &ExpectedLevels,
    stat: DecisionStat,
) -> Result<Option<Band>> {
    Ok(match stat {
        DecisionStat::Voltage => Some(classify_level(ms_u, &levels.ms_u)?),
        DecisionStat::Current => Some(classify_level(ms_i, &levels.ms_i)?),
        DecisionStat::Both => {
            let v = classify_level(ms_u, &levels.ms_u)?;
            let c = classify_level(ms_i, &levels.ms_i)?;
            (v == c).then_some(v)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    /// First offending sample within the period.
    pub sample: usize,
    /// Deviation relative to the channel RMS.
    pub deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub bit: usize,
    pub sample: usize,
    pub deviation: f64,
}

/// Reference RMS values that alarm deviations are measured against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlarmScale {
    pub u_rms: f64,
    pub i_rms: f64,
}

impl AlarmScale {
    /// RMS of Alice's end of the given trace.
    pub fn from_trace(ends: &TraceEnds) -> Self {
        Self { u_rms: mean_square(&ends.u_end_a).sqrt(), i_rms: mean_square(&ends.i_a).sqrt() }
    }

    /// RMS of the mixed-state levels; known before any sample arrives.
    pub fn from_levels(levels: &ExpectedLevels) -> Self {
        Self { u_rms: levels.ms_u[1].sqrt(), i_rms: levels.ms_i[1].sqrt() }
    }
}

/// Per-sample consistency check of the two published end measurements.
///
/// Both ends must imply the same capacitor-node voltage
/// (`u_end - i_end * r_wire / 2`), and the currents must satisfy Kirchhoff's
/// current law at that node: `i_a + i_b = 0` without capacitance, or the
/// trapezoidal capacitor current otherwise. Only the current sample (and the
/// previous one, for the capacitor) are ever used.
#[derive(Clone, Debug)]
pub struct AlarmMonitor {
    half_wire: f64,
    two_c_over_dt: f64,
    tol: f64,
    scale: AlarmScale,
    prev: Option<(f64, f64)>,
    index: usize,
}

impl AlarmMonitor {
    pub fn new(wire: &WireModel, dt: f64, tol: f64, scale: AlarmScale) -> Self {
        Self {
            half_wire: wire.r_wire / 2.0,
            two_c_over_dt: 2.0 * wire.effective_capacitance() / dt,
            tol,
            scale,
            prev: None,
            index: 0,
        }
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.index = 0;
    }

    /// Relative deviation of one sample.
    pub fn deviation(&mut self, s: &EndSample) -> f64 {
        let v_a = s.u_end_a - s.i_a * self.half_wire;
        let v_b = s.u_end_b - s.i_b * self.half_wire;
        let dv = (v_a - v_b).abs() / self.scale.u_rms;
        let v = 0.5 * (v_a + v_b);
        let i_sum = s.i_a + s.i_b;
        let di = if self.two_c_over_dt == 0.0 {
            i_sum.abs()
        } else {
            match self.prev {
                // the capacitor current of the first sample is unconstrained
                None => 0.0,
                Some((v_prev, i_prev)) => {
                    0.5 * (i_sum + i_prev - self.two_c_over_dt * (v - v_prev)).abs()
                }
            }
        } / self.scale.i_rms;
        self.prev = Some((v, i_sum));
        let d = dv.max(di);
        if d.is_nan() {
            0.0
        } else {
            d
        }
    }

    pub fn push(&mut self, s: &EndSample) -> Option<AlarmEvent> {
        let deviation = self.deviation(s);
        let sample = self.index;
        self.index += 1;
        (deviation > self.tol).then_some(AlarmEvent { sample, deviation })
    }
}

/// First alarm in one period of published end data, or `None`.
pub fn check_alarm(ends: &TraceEnds, wire: &WireModel, tol_rel: f64) -> Option<AlarmEvent> {
    check_alarm_scaled(ends, wire, tol_rel, AlarmScale::from_trace(ends))
}

pub fn check_alarm_scaled(
    ends: &TraceEnds,
    wire: &WireModel,
    tol_rel: f64,
    scale: AlarmScale,
) -> Option<AlarmEvent> {
    let mut monitor = AlarmMonitor::new(wire, ends.dt, tol_rel, scale);
    (0..ends.len()).find_map(|n| monitor.push(&ends.sample(n)))
}

/// The physical inputs of one period, handed to a [`Wiretap`] that replaces
/// the wire.
#[derive(Clone, Copy, Debug)]
pub struct PeriodInputs<'a> {
    pub u_a: &'a [f64],
    pub u_b: &'a [f64],
    pub r_a: f64,
    pub r_b: f64,
    pub dt: f64,
}

/// Hook for an eavesdropper attached to the wire.
///
/// `observe` only receives the published end data, which is everything Eve
/// can know.
pub trait Wiretap {
    /// Current injected into the cable midpoint during a period.
    fn injection(&mut self, _bit: usize, _len: usize) -> Option<Vec<f64>> {
        None
    }

    /// Replace the wire for a period (man-in-the-middle).
    fn intercept(&mut self, _bit: usize, _inputs: &PeriodInputs<'_>) -> Result<Option<TraceEnds>> {
        Ok(None)
    }

    fn observe(&mut self, _bit: usize, _public: &TraceEnds, _alarm: Option<&AlarmEvent>) {}
}

/// No eavesdropper.
pub struct NoTap;

impl Wiretap for NoTap {}

/// One party's generator side: draws the bit and its noise period.
pub struct PartyEngine {
    source: JohnsonSource,
    resistors: ResistorPair,
    resistor_error: f64,
    rng: StreamRng,
}

impl PartyEngine {
    pub fn alice(cfg: &SessionConfig, rng: StreamRng) -> Result<Self> {
        Ok(Self {
            source: JohnsonSource::new(&cfg.noise)?,
            resistors: cfg.resistors,
            resistor_error: cfg.imperfections.alice_resistor_error,
            rng,
        })
    }

    pub fn bob(cfg: &SessionConfig, rng: StreamRng) -> Result<Self> {
        Ok(Self {
            source: JohnsonSource::with_temperature_ratio(
                &cfg.noise,
                cfg.imperfections.bob_temperature_ratio,
            )?,
            resistors: cfg.resistors,
            resistor_error: cfg.imperfections.bob_resistor_error,
            rng,
        })
    }

    /// Draw the next bit (`true` = H) and fill `out` with the generator voltage.
    pub fn next_period(&mut self, out: &mut [f64]) -> Result<(bool, f64)> {
        let high: bool = self.rng.random();
        let r = self.resistors.pick(high) * (1.0 + self.resistor_error);
        self.source.fill_period(r, &mut self.rng, out)?;
        Ok((high, r))
    }
}

/// Mean squares of one party's end, after the capacitor warm-up.
pub fn end_statistics(u: &[f64], i: &[f64], warmup: usize) -> (f64, f64) {
    let start = warmup.min(u.len());
    (mean_square(&u[start..]), mean_square(&i[start..]))
}

pub fn quantize_ends(ends: &mut TraceEnds, q: &Quantizer, scale: AlarmScale) {
    for v in ends.u_end_a.iter_mut().chain(&mut ends.u_end_b).chain(&mut ends.u_mid) {
        *v = q.quantize(*v, scale.u_rms);
    }
    for v in ends.i_a.iter_mut().chain(&mut ends.i_b) {
        *v = q.quantize(*v, scale.i_rms);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    /// `true` = the party connected `R_H`.
    pub alice_choices: Vec<bool>,
    pub bob_choices: Vec<bool>,
    pub sifted_indices: Vec<usize>,
    pub shared_key_alice: BitKey,
    pub shared_key_bob: BitKey,
    pub ber: f64,
    pub sift_fraction: f64,
    pub alarms: Vec<AlarmRecord>,
    /// Periods actually run (less than `n_bits` after an abort).
    pub bits_run: usize,
    pub aborted_at: Option<usize>,
}

impl SessionResult {
    /// Sifted bits completed strictly before the first alarm.
    pub fn bits_before_first_alarm(&self) -> usize {
        match self.alarms.first() {
            Some(a) => self.sifted_indices.iter().filter(|&&k| k < a.bit).count(),
            None => self.sifted_indices.len(),
        }
    }
}

/// Accumulates per-period decisions into a [`SessionResult`].
#[derive(Debug, Default)]
pub struct SessionLedger {
    alice_choices: Vec<bool>,
    bob_choices: Vec<bool>,
    sifted: Vec<usize>,
    key_alice: Vec<bool>,
    key_bob: Vec<bool>,
    alarms: Vec<AlarmRecord>,
    aborted_at: Option<usize>,
}

impl SessionLedger {
    pub fn record(
        &mut self,
        bit: usize,
        alice_high: bool,
        bob_high: bool,
        alice_band: Option<Band>,
        bob_band: Option<Band>,
        alarm: Option<AlarmEvent>,
    ) {
        self.alice_choices.push(alice_high);
        self.bob_choices.push(bob_high);
        if let Some(a) = alarm {
            self.alarms.push(AlarmRecord { bit, sample: a.sample, deviation: a.deviation });
            return;
        }
        if alice_band == Some(Band::Mixed) && bob_band == Some(Band::Mixed) {
            self.sifted.push(bit);
            self.key_alice.push(!alice_high);
            self.key_bob.push(bob_high);
        }
    }

    pub fn abort(&mut self, bit: usize) {
        self.aborted_at = Some(bit);
    }

    pub fn finish(self) -> SessionResult {
        let bits_run = self.alice_choices.len();
        let errors = self.key_alice.iter().zip(&self.key_bob).filter(|(a, b)| a != b).count();
        let ber = if self.sifted.is_empty() { 0.0 } else { errors as f64 / self.sifted.len() as f64 };
        let sift_fraction = if bits_run == 0 { 0.0 } else { self.sifted.len() as f64 / bits_run as f64 };
        SessionResult {
            alice_choices: self.alice_choices,
            bob_choices: self.bob_choices,
            sifted_indices: self.sifted,
            shared_key_alice: BitKey(self.key_alice),
            shared_key_bob: BitKey(self.key_bob),
            ber,
            sift_fraction,
            alarms: self.alarms,
            bits_run,
            aborted_at: self.aborted_at,
        }
    }
}

pub fn run_session(cfg: &SessionConfig, rngs: SessionRngs) -> Result<SessionResult> {
    run_session_with(cfg, rngs, &mut NoTap)
}

pub fn run_session_with(
    cfg: &SessionConfig,
    rngs: SessionRngs,
    tap: &mut dyn Wiretap,
) -> Result<SessionResult> {
    cfg.validate()?;
    let m = cfg.noise.samples_per_bit;
    let dt = cfg.noise.dt();
    let levels = cfg.expected_levels();
    let level_scale = AlarmScale::from_levels(&levels);
    let mut alice = PartyEngine::alice(cfg, rngs.alice)?;
    let mut bob = PartyEngine::bob(cfg, rngs.bob)?;
    let (mut u_a, mut u_b) = (vec![0.0; m], vec![0.0; m]);
    let mut ledger = SessionLedger::default();

    for bit in 0..cfg.n_bits {
        let (a_high, r_a) = alice.next_period(&mut u_a)?;
        let (b_high, r_b) = bob.next_period(&mut u_b)?;
        let inputs = PeriodInputs { u_a: &u_a, u_b: &u_b, r_a, r_b, dt };
        let solver = LoopSolver::new(r_a, r_b, &cfg.wire, dt)?;
        let warmup = solver.warmup_samples();
        let mut ends = match tap.intercept(bit, &inputs)? {
            Some(ends) => ends,
            None => {
                let injection = tap.injection(bit, m);
                crate::circuit::solve_nonideal_injected(
                    &u_a,
                    &u_b,
                    r_a,
                    r_b,
                    &cfg.wire,
                    dt,
                    injection.as_deref(),
                )?
            }
        };
        if let Some(q) = &cfg.quantizer {
            quantize_ends(&mut ends, q, level_scale);
        }
        let alarm = check_alarm(&ends, &cfg.wire, cfg.alarm_tol_rel);
        tap.observe(bit, &ends, alarm.as_ref());

        let state = BitState::from_choices(a_high, b_high);
        let (a_stats, b_stats) = if cfg.level_oracle {
            let l = levels.for_state(state);
            (l, l)
        } else {
            (
                end_statistics(&ends.u_end_a, &ends.i_a, warmup),
                end_statistics(&ends.u_end_b, &ends.i_b, warmup),
            )
        };
        let a_band = party_band(a_stats.0, a_stats.1, &levels, cfg.decision_stat)?;
        let b_band = party_band(b_stats.0, b_stats.1, &levels, cfg.decision_stat)?;
        ledger.record(bit, a_high, b_high, a_band, b_band, alarm);
        if alarm.is_some() && cfg.abort_on_alarm {
            ledger.abort(bit);
            break;
        }
    }
    Ok(ledger.finish())
}
