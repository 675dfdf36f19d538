//! Kirchhoff loop solvers.
//!
//! Sign convention, used everywhere in the crate: a current is positive when
//! it flows from a party's generator into the wire. For the ideal loop the
//! channel current `i_ch` is Alice's current, i.e. positive from A toward B.
//!
//! The non-ideal loop is
//!
//! ```text
//! U_a -- r_a -- [A] -- r_wire/2 -- [mid] -- r_wire/2 -- [B] -- r_b -- U_b
//!                                    |
//!                                  c_eff
//!                                    |
//!                                   gnd
//! ```
//!
//! with a single capacitor state integrated by the trapezoidal rule, starting
//! from zero at the beginning of every bit period.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawPair")]
pub struct ResistorPair {
    r_low: f64,
    r_high: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    r_low: f64,
    r_high: f64,
}

impl TryFrom<RawPair> for ResistorPair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        ResistorPair::new(raw.r_low, raw.r_high)
    }
}

impl ResistorPair {
    pub fn new(r_low: f64, r_high: f64) -> Result<Self> {
        if !(r_low > 0.0 && r_low < r_high && r_high.is_finite()) {
            return Err(invalid(format!(
                "resistors must satisfy 0 < r_low < r_high, got {r_low} and {r_high}"
            )));
        }
        Ok(Self { r_low, r_high })
    }

    pub fn r_low(&self) -> f64 {
        self.r_low
    }

    pub fn r_high(&self) -> f64 {
        self.r_high
    }

    /// Resistance for a bit choice (`true` = H).
    pub fn pick(&self, high: bool) -> f64 {
        if high {
            self.r_high
        } else {
            self.r_low
        }
    }
}

impl Default for ResistorPair {
    fn default() -> Self {
        Self { r_low: 1e3, r_high: 1e4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireModel {
    /// Total series wire resistance, Ω.
    #[serde(default)]
    pub r_wire: f64,
    /// Total lumped cable capacitance to ground, F.
    #[serde(default)]
    pub c_cable: f64,
    /// Capacitor killer: a driven shield nulls the effective capacitance.
    #[serde(default)]
    pub killer_on: bool,
}

impl WireModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_wire >= 0.0) || !self.r_wire.is_finite() {
            return Err(invalid(format!("r_wire must be non-negative, got {}", self.r_wire)));
        }
        if !(self.c_cable >= 0.0) || !self.c_cable.is_finite() {
            return Err(invalid(format!("c_cable must be non-negative, got {}", self.c_cable)));
        }
        Ok(())
    }

    pub fn effective_capacitance(&self) -> f64 {
        if self.killer_on {
            0.0
        } else {
            self.c_cable
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.r_wire == 0.0 && self.effective_capacitance() == 0.0
    }
}

/// Channel voltage and current of the ideal loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub u_ch: Vec<f64>,
    pub i_ch: Vec<f64>,
    pub dt: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.u_ch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_ch.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Trace {
        Trace { u_ch: self.u_ch[range.clone()].to_vec(), i_ch: self.i_ch[range].to_vec(), dt: self.dt }
    }
}

/// Where along the cable a trace is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    EndA,
    #[default]
    Mid,
    EndB,
}

/// Voltages and currents at both ends of the (possibly non-ideal) wire.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceEnds {
    pub u_end_a: Vec<f64>,
    pub u_end_b: Vec<f64>,
    /// Alice's current into the wire.
    pub i_a: Vec<f64>,
    /// Bob's current into the wire.
    pub i_b: Vec<f64>,
    /// Capacitor node voltage.
    pub u_mid: Vec<f64>,
    pub dt: f64,
}

impl TraceEnds {
    pub fn with_capacity(n: usize, dt: f64) -> Self {
        Self {
            u_end_a: Vec::with_capacity(n),
            u_end_b: Vec::with_capacity(n),
            i_a: Vec::with_capacity(n),
            i_b: Vec::with_capacity(n),
            u_mid: Vec::with_capacity(n),
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.u_end_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_end_a.is_empty()
    }

    pub fn push(&mut self, s: EndSample) {
        self.u_end_a.push(s.u_end_a);
        self.u_end_b.push(s.u_end_b);
        self.i_a.push(s.i_a);
        self.i_b.push(s.i_b);
        self.u_mid.push(s.u_mid);
    }

    pub fn sample(&self, n: usize) -> EndSample {
        EndSample {
            u_end_a: self.u_end_a[n],
            u_end_b: self.u_end_b[n],
            i_a: self.i_a[n],
            i_b: self.i_b[n],
            u_mid: self.u_mid[n],
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> TraceEnds {
        TraceEnds {
            u_end_a: self.u_end_a[range.clone()].to_vec(),
            u_end_b: self.u_end_b[range.clone()].to_vec(),
            i_a: self.i_a[range.clone()].to_vec(),
            i_b: self.i_b[range.clone()].to_vec(),
            u_mid: self.u_mid[range].to_vec(),
            dt: self.dt,
        }
    }

    /// Voltage and A→B current as seen at a tap point.
    ///
    /// At the midpoint the current is the mean of the currents on either side
    /// of the capacitor node.
    pub fn tap(&self, point: TapPoint) -> Trace {
        let (u_ch, i_ch) = match point {
            TapPoint::EndA => (self.u_end_a.clone(), self.i_a.clone()),
            TapPoint::EndB => (self.u_end_b.clone(), self.i_b.iter().map(|i| -i).collect()),
            TapPoint::Mid => (
                self.u_mid.clone(),
                self.i_a.iter().zip(&self.i_b).map(|(a, b)| 0.5 * (a - b)).collect(),
            ),
        };
        Trace { u_ch, i_ch, dt: self.dt }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EndSample {
    pub u_end_a: f64,
    pub u_end_b: f64,
    pub i_a: f64,
    pub i_b: f64,
    pub u_mid: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// Power delivered by A's generator into B's resistor, W.
    pub p_a_to_b: f64,
    pub p_b_to_a: f64,
}

fn check_pair(u_a: &[f64], u_b: &[f64]) -> Result<()> {
    if u_a.len() != u_b.len() {
        return Err(Error::LengthMismatch { left: u_a.len(), right: u_b.len() });
    }
    Ok(())
}

fn check_resistance(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(invalid(format!("resistance must be non-negative, got {r}")));
    }
    Ok(())
}

/// Exact solution of the ideal loop.
pub fn solve_ideal(u_a: &[f64], u_b: &[f64], r_a: f64, r_b: f64, dt: f64) -> Result<Trace> {
    check_pair(u_a, u_b)?;
    check_resistance(r_a)?;
    check_resistance(r_b)?;
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let total = r_a + r_b;
    if total <= 0.0 {
        return Err(Error::ZeroResistance);
    }
    let (u_ch, i_ch) = u_a
        .iter()
        .zip(u_b)
        .map(|(a, b)| ((a * r_b + b * r_a) / total, (a - b) / total))
        .unzip();
    Ok(Trace { u_ch, i_ch, dt })
}

/// Sample-by-sample stepper for the non-ideal loop.
///
/// Stepping a bit period in several chunks gives bit-identical results to
/// stepping it in one go, which the networked channel relies on.
#[derive(Clone, Debug)]
pub struct LoopSolver {
    r_a: f64,
    r_b: f64,
    half_wire: f64,
    r1: f64,
    r2: f64,
    g: f64,
    c_eff: f64,
    dt: f64,
    decay: f64,
    gain: f64,
    denom: f64,
    prev: Option<(f64, f64)>,
}

impl LoopSolver {
    pub fn new(r_a: f64, r_b: f64, wire: &WireModel, dt: f64) -> Result<Self> {
        check_resistance(r_a)?;
        check_resistance(r_b)?;
        wire.validate()?;
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        let half_wire = wire.r_wire / 2.0;
        if !(half_wire + r_a.min(r_b) > 0.0) {
            return Err(Error::ZeroResistance);
        }
        let r1 = r_a + half_wire;
        let r2 = r_b + half_wire;
        let g = 1.0 / r1 + 1.0 / r2;
        let c_eff = wire.effective_capacitance();
        let (decay, gain, denom) = if c_eff > 0.0 {
            let tau = c_eff / g;
            if !(dt < tau) {
                return Err(Error::Unstable { dt, tau });
            }
            let k = dt / (2.0 * c_eff);
            (1.0 - k * g, k, 1.0 + k * g)
        } else {
            (0.0, 0.0, 1.0)
        };
        Ok(Self { r_a, r_b, half_wire, r1, r2, g, c_eff, dt, decay, gain, denom, prev: None })
    }

    /// Thevenin resistance seen by the capacitor.
    pub fn thevenin_resistance(&self) -> f64 {
        1.0 / self.g
    }

    pub fn time_constant(&self) -> f64 {
        self.c_eff / self.g
    }

    /// Samples to discard at the start of a period: five time constants.
    pub fn warmup_samples(&self) -> usize {
        if self.c_eff > 0.0 {
            (5.0 * self.time_constant() / self.dt).ceil() as usize
        } else {
            0
        }
    }

    /// Forget the capacitor state (start of a new bit period).
    pub fn reset(&mut self) {
        self.prev = None;
    }

    /// Advance one sample. `inject` is an external current into the midpoint.
    pub fn step(&mut self, u_a: f64, u_b: f64, inject: f64) -> EndSample {
        if self.c_eff == 0.0 {
            return self.step_resistive(u_a, u_b, inject);
        }
        let drive = u_a / self.r1 + u_b / self.r2 + inject;
        let v = match self.prev {
            None => 0.0,
            Some((v_prev, drive_prev)) => {
                (v_prev * self.decay + self.gain * (drive_prev + drive)) / self.denom
            }
        };
        self.prev = Some((v, drive));
        let i_a = (u_a - v) / self.r1;
        let i_b = (u_b - v) / self.r2;
        EndSample {
            u_end_a: v + i_a * self.half_wire,
            u_end_b: v + i_b * self.half_wire,
            i_a,
            i_b,
            u_mid: v,
        }
    }

    fn step_resistive(&self, u_a: f64, u_b: f64, inject: f64) -> EndSample {
        let total = self.r1 + self.r2;
        if inject == 0.0 {
            // Same expressions as the ideal solver, so r_wire = 0 reduces exactly.
            let v = (u_a * self.r2 + u_b * self.r1) / total;
            let i = (u_a - u_b) / total;
            return EndSample {
                u_end_a: v + i * self.half_wire,
                u_end_b: v - i * self.half_wire,
                i_a: i,
                i_b: -i,
                u_mid: v,
            };
        }
        let v = (u_a * self.r2 + u_b * self.r1 + inject * self.r1 * self.r2) / total;
        let i_a = (u_a - v) / self.r1;
        let i_b = (u_b - v) / self.r2;
        EndSample {
            u_end_a: v + i_a * self.half_wire,
            u_end_b: v + i_b * self.half_wire,
            i_a,
            i_b,
            u_mid: v,
        }
    }

    pub fn resistances(&self) -> (f64, f64) {
        (self.r_a, self.r_b)
    }
}

/// Solves one bit period of the non-ideal loop from a zero capacitor state.
pub fn solve_nonideal(
    u_a: &[f64],
    u_b: &[f64],
    r_a: f64,
    r_b: f64,
    wire: &WireModel,
    dt: f64,
) -> Result<TraceEnds> {
    solve_nonideal_injected(u_a, u_b, r_a, r_b, wire, dt, None)
}

/// As [`solve_nonideal`], with an optional current injected into the midpoint.
pub fn solve_nonideal_injected(
    u_a: &[f64],
    u_b: &[f64],
    r_a: f64,
    r_b: f64,
    wire: &WireModel,
    dt: f64,
    injection: Option<&[f64]>,
) -> Result<TraceEnds> {
    check_pair(u_a, u_b)?;
    if let Some(inj) = injection {
        check_pair(u_a, inj)?;
    }
    let mut solver = LoopSolver::new(r_a, r_b, wire, dt)?;
    let mut ends = TraceEnds::with_capacity(u_a.len(), dt);
    for n in 0..u_a.len() {
        let inj = injection.map_or(0.0, |x| x[n]);
        ends.push(solver.step(u_a[n], u_b[n], inj));
    }
    Ok(ends)
}

/// Superposition power flows between the two generators.
pub fn power_flows(u_a: &[f64], u_b: &[f64], r_a: f64, r_b: f64) -> Result<PowerReport> {
    check_pair(u_a, u_b)?;
    if u_a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let zeros = vec![0.0; u_a.len()];
    let only_a = solve_ideal(u_a, &zeros, r_a, r_b, 1.0)?;
    let only_b = solve_ideal(&zeros, u_b, r_a, r_b, 1.0)?;
    let n = u_a.len() as f64;
    let p_a_to_b = only_a.i_ch.iter().map(|i| i * i).sum::<f64>() / n * r_b;
    let p_b_to_a = only_b.i_ch.iter().map(|i| i * i).sum::<f64>() / n * r_a;
    Ok(PowerReport { p_a_to_b, p_b_to_a })
}

/// Second moments of a resistive loop (no capacitance), from superposition.
///
/// Every measured quantity is `alpha * U_a + beta * U_b`; with independent
/// sources of variance `var_a`, `var_b` the moments follow directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopMoments {
    pub ms_u: f64,
    pub ms_i: f64,
    pub cross_ui: f64,
}

#[derive(Clone, Copy, Debug)]
struct Gains {
    alpha: f64,
    beta: f64,
}

fn tap_gains(point: TapPoint, r_a: f64, r_b: f64, r_wire: f64) -> (Gains, Gains) {
    let h = r_wire / 2.0;
    let (r1, r2) = (r_a + h, r_b + h);
    let t = r1 + r2;
    let current = Gains { alpha: 1.0 / t, beta: -1.0 / t };
    let voltage = match point {
        TapPoint::EndA => Gains { alpha: (r2 + h) / t, beta: r_a / t },
        TapPoint::Mid => Gains { alpha: r2 / t, beta: r1 / t },
        TapPoint::EndB => Gains { alpha: r_b / t, beta: (r1 + h) / t },
    };
    (voltage, current)
}

/// Expected mean squares at a tap of the resistive loop.
pub fn loop_moments(
    point: TapPoint,
    r_a: f64,
    r_b: f64,
    r_wire: f64,
    var_a: f64,
    var_b: f64,
) -> LoopMoments {
    let (u, i) = tap_gains(point, r_a, r_b, r_wire);
    LoopMoments {
        ms_u: u.alpha * u.alpha * var_a + u.beta * u.beta * var_b,
        ms_i: i.alpha * i.alpha * var_a + i.beta * i.beta * var_b,
        cross_ui: u.alpha * i.alpha * var_a + u.beta * i.beta * var_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_divider() {
        let t = solve_ideal(&[1.0], &[0.0], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(t.u_ch, vec![0.5]);
        assert_eq!(t.i_ch, vec![0.5]);
    }

    #[test]
    fn swapping_parties_negates_current() {
        let ua = [0.3, -1.2, 2.0];
        let ub = [1.1, 0.4, -0.7];
        let t1 = solve_ideal(&ua, &ub, 2.0, 3.0, 1.0).unwrap();
        let t2 = solve_ideal(&ub, &ua, 3.0, 2.0, 1.0).unwrap();
        for k in 0..3 {
            assert!((t1.u_ch[k] - t2.u_ch[k]).abs() < 1e-15);
            assert!((t1.i_ch[k] + t2.i_ch[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn ideal_errors() {
        assert_eq!(
            solve_ideal(&[1.0], &[1.0, 2.0], 1.0, 1.0, 1.0),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(solve_ideal(&[1.0], &[1.0], 0.0, 0.0, 1.0), Err(Error::ZeroResistance));
    }

    #[test]
    fn resistor_pair_invariant() {
        assert!(ResistorPair::new(2.0, 2.0).is_err());
        assert!(ResistorPair::new(0.0, 2.0).is_err());
        assert!(ResistorPair::new(3.0, 2.0).is_err());
        let p: std::result::Result<ResistorPair, _> =
            serde_json::from_str(r#"{"r_low": 5.0, "r_high": 5.0}"#);
        assert!(p.is_err());
        let p: ResistorPair = serde_json::from_str(r#"{"r_low": 2.0, "r_high": 3.0}"#).unwrap();
        assert_eq!(p.pick(true), 3.0);
    }

    #[test]
    fn nonideal_reduces_to_ideal_exactly() {
        let ua = [0.3, -1.2, 2.0, 0.01];
        let ub = [1.1, 0.4, -0.7, -3.0];
        let t = solve_ideal(&ua, &ub, 2.0, 3.0, 1e-3).unwrap();
        let e = solve_nonideal(&ua, &ub, 2.0, 3.0, &WireModel::ideal(), 1e-3).unwrap();
        assert_eq!(e.u_end_a, t.u_ch);
        assert_eq!(e.u_end_b, t.u_ch);
        assert_eq!(e.u_mid, t.u_ch);
        assert_eq!(e.i_a, t.i_ch);
        assert!(e.i_a.iter().zip(&e.i_b).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn killer_nulls_capacitance() {
        let ua = [0.3, -1.2, 2.0, 0.01];
        let ub = [1.1, 0.4, -0.7, -3.0];
        let killed = WireModel { r_wire: 10.0, c_cable: 1e-6, killer_on: true };
        let bare = WireModel { r_wire: 10.0, c_cable: 0.0, killer_on: false };
        let a = solve_nonideal(&ua, &ub, 100.0, 300.0, &killed, 1e-3).unwrap();
        let b = solve_nonideal(&ua, &ub, 100.0, 300.0, &bare, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_guard_rejects_coarse_steps() {
        let wire = WireModel { r_wire: 100.0, c_cable: 1e-9, killer_on: false };
        // tau = 1050/2 * 1 nF = 525 ns
        assert!(matches!(
            LoopSolver::new(1e3, 1e3, &wire, 1e-6),
            Err(Error::Unstable { .. })
        ));
        assert!(LoopSolver::new(1e3, 1e3, &wire, 1e-7).is_ok());
        assert!(LoopSolver::new(0.0, 0.0, &WireModel::ideal(), 1.0).is_err());
    }

    #[test]
    fn chunked_stepping_matches_whole_period() {
        let wire = WireModel { r_wire: 50.0, c_cable: 1e-9, killer_on: false };
        let ua: Vec<f64> = (0..100).map(|k| (k as f64 * 0.37).sin()).collect();
        let ub: Vec<f64> = (0..100).map(|k| (k as f64 * 0.11).cos()).collect();
        let whole = solve_nonideal(&ua, &ub, 1e3, 2e3, &wire, 1e-7).unwrap();
        let mut s = LoopSolver::new(1e3, 2e3, &wire, 1e-7).unwrap();
        let mut chunked = TraceEnds::with_capacity(100, 1e-7);
        for chunk in (0..100).collect::<Vec<_>>().chunks(7) {
            for &n in chunk {
                chunked.push(s.step(ua[n], ub[n], 0.0));
            }
        }
        assert_eq!(whole, chunked);
    }

    #[test]
    fn no_source_no_power() {
        let ua = [1.0, -2.0, 0.5];
        let p = power_flows(&ua, &[0.0; 3], 2.0, 3.0).unwrap();
        assert_eq!(p.p_b_to_a, 0.0);
        assert!((p.p_a_to_b - (1.0 + 4.0 + 0.25) / 3.0 / 25.0 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn taps_agree_on_ideal_wire() {
        let e = solve_nonideal(&[1.0, 2.0], &[0.5, -1.0], 2.0, 3.0, &WireModel::ideal(), 1.0)
            .unwrap();
        let a = e.tap(TapPoint::EndA);
        assert_eq!(a, e.tap(TapPoint::Mid));
        assert_eq!(a, e.tap(TapPoint::EndB));
    }
}
