use std::net::TcpListener;

use kljn_core::circuit::{solve_ideal, EndSample, LoopSolver, ResistorPair};
use kljn_core::noise::JohnsonSource;
use kljn_core::rng::{stream, Party, StreamRng};
use rand::Rng;

use crate::frame::{ControlKind, Incoming, Role};
use crate::link::Link;
use crate::{accept_within, blocks, interleave, NetConfig, NetError};

/// What sits between the two parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    /// The wire emulator.
    Wire,
    /// Eve cuts the wire and terminates each side with her own KLJN party.
    Splitter { seed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelReport {
    pub bits: usize,
    pub aborted_at: Option<usize>,
    /// Corrupt frames received and re-requested.
    pub retransmissions: usize,
}

struct Endpoints {
    alice: Link,
    bob: Link,
    eve: Option<Link>,
}

impl Endpoints {
    fn abort_all(&mut self, bit: usize) {
        self.alice.send_abort(bit);
        self.bob.send_abort(bit);
        if let Some(e) = self.eve.as_mut() {
            e.send_abort(bit);
        }
    }

    fn retransmissions(&self) -> usize {
        self.alice.retransmissions
            + self.bob.retransmissions
            + self.eve.as_ref().map_or(0, |e| e.retransmissions)
    }
}

enum Wire {
    Loop(LoopSolver),
    Split(Box<SplitPeriod>),
}

struct SplitPeriod {
    u_e1: Vec<f64>,
    u_e2: Vec<f64>,
    r_e1: f64,
    r_e2: f64,
}

struct Splitter {
    source: JohnsonSource,
    resistors: ResistorPair,
    rng: StreamRng,
}

impl Splitter {
    fn period(&mut self) -> Result<SplitPeriod, NetError> {
        let r_e1 = self.resistors.pick(self.rng.random());
        let r_e2 = self.resistors.pick(self.rng.random());
        let u_e1 = self.source.period(r_e1, &mut self.rng)?;
        let u_e2 = self.source.period(r_e2, &mut self.rng)?;
        Ok(SplitPeriod { u_e1, u_e2, r_e1, r_e2 })
    }
}

/// Accepts Alice, Bob and optionally Eve on `listener`, then runs the
/// session until both parties finish or anyone aborts.
pub fn run_channel(
    listener: &TcpListener,
    cfg: &NetConfig,
    mode: ChannelMode,
    expect_eve: bool,
) -> Result<ChannelReport, NetError> {
    let mut ends = accept_all(listener, cfg, expect_eve)?;
    let mut report = ChannelReport::default();
    let outcome = serve(&mut ends, cfg, mode, &mut report);
    report.retransmissions = ends.retransmissions();
    match outcome {
        Ok(()) => Ok(report),
        Err(NetError::Aborted { bit }) => {
            ends.abort_all(bit);
            report.aborted_at = Some(bit);
            Ok(report)
        }
        Err(e) => {
            ends.abort_all(report.bits);
            Err(e)
        }
    }
}

fn accept_all(listener: &TcpListener, cfg: &NetConfig, expect_eve: bool) -> Result<Endpoints, NetError> {
    let (mut alice, mut bob, mut eve) = (None, None, None);
    let wanted = 2 + expect_eve as usize;
    let mut lane = 10;
    while [alice.is_some(), bob.is_some(), eve.is_some()].iter().filter(|x| **x).count() < wanted {
        let stream = accept_within(listener, cfg.timeout)?;
        let mut link = Link::new(stream, Role::Channel, cfg.session_id, cfg.timeout)?
            .with_faults(cfg.faults(lane));
        lane += 1;
        let hello = match link.recv()? {
            Incoming::Control(c) if c.kind == ControlKind::Hello => c,
            other => return Err(NetError::Protocol(format!("expected hello, got {other:?}"))),
        };
        let slot = match hello.role {
            Role::Alice => &mut alice,
            Role::Bob => &mut bob,
            Role::Eve if expect_eve => &mut eve,
            r => return Err(NetError::Protocol(format!("unexpected {r:?} on the channel"))),
        };
        if slot.is_some() {
            return Err(NetError::Protocol(format!("{:?} connected twice", hello.role)));
        }
        *slot = Some(link);
    }
    let mut ends = Endpoints { alice: alice.unwrap(), bob: bob.unwrap(), eve };
    ends.alice.send_control(ControlKind::Hello, 0, 0.0)?;
    ends.bob.send_control(ControlKind::Hello, 0, 0.0)?;
    if let Some(e) = ends.eve.as_mut() {
        e.send_control(ControlKind::Hello, 0, 0.0)?;
    }
    Ok(ends)
}

enum Request {
    Start(f64),
    Done,
}

fn period_request(link: &mut Link, bit: usize) -> Result<Request, NetError> {
    match link.recv()? {
        Incoming::Control(c) if c.kind == ControlKind::Start && c.bit_index as usize == bit => {
            Ok(Request::Start(c.value))
        }
        Incoming::Control(c) if c.kind == ControlKind::Done => Ok(Request::Done),
        Incoming::Control(c) if c.kind == ControlKind::Abort => Err(NetError::Aborted { bit: c.bit_index as usize }),
        other => Err(NetError::Protocol(format!("expected start of bit {bit}, got {other:?}"))),
    }
}

fn serve(ends: &mut Endpoints, cfg: &NetConfig, mode: ChannelMode, report: &mut ChannelReport) -> Result<(), NetError> {
    let s = &cfg.session;
    let dt = s.noise.dt();
    let m = s.noise.samples_per_bit;
    let mut splitter = match mode {
        ChannelMode::Wire => None,
        ChannelMode::Splitter { seed } => Some(Splitter {
            source: JohnsonSource::new(&s.noise)?,
            resistors: s.resistors,
            rng: stream(seed, 0, 0, Party::Eve),
        }),
    };

    for bit in 0.. {
        let a = period_request(&mut ends.alice, bit)?;
        let b = period_request(&mut ends.bob, bit)?;
        let (r_a, r_b) = match (a, b) {
            (Request::Done, Request::Done) => {
                ends.alice.send_control(ControlKind::Done, bit, 0.0)?;
                ends.bob.send_control(ControlKind::Done, bit, 0.0)?;
                return Ok(());
            }
            (Request::Start(r_a), Request::Start(r_b)) => (r_a, r_b),
            _ => return Err(NetError::Protocol(format!("parties disagree on the end at bit {bit}"))),
        };
        let (mut wire, warmup) = match splitter.as_mut() {
            None => {
                let solver = LoopSolver::new(r_a, r_b, &s.wire, dt)?;
                let w = solver.warmup_samples();
                (Wire::Loop(solver), w)
            }
            Some(sp) => (Wire::Split(Box::new(sp.period()?)), 0),
        };
        ends.alice.send_control(ControlKind::Period, bit, warmup as f64)?;
        ends.bob.send_control(ControlKind::Period, bit, warmup as f64)?;

        for (block, range) in blocks(m) {
            let ua = ends.alice.recv_sample(bit, block)?.payload;
            let ub = ends.bob.recv_sample(bit, block)?.payload;
            if ua.len() != range.len() || ub.len() != range.len() {
                return Err(NetError::Protocol(format!("short block {block} of bit {bit}")));
            }
            let inj = match ends.eve.as_mut() {
                Some(e) => e.recv_sample(bit, block)?.payload,
                None => Vec::new(),
            };
            let samples: Vec<EndSample> = match &mut wire {
                Wire::Loop(solver) => (0..ua.len())
                    .map(|n| solver.step(ua[n], ub[n], inj.get(n).copied().unwrap_or(0.0)))
                    .collect(),
                Wire::Split(p) => split_block(p, &ua, &ub, r_a, r_b, range, dt)?,
            };
            let col = |f: fn(&EndSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
            let (u_a, i_a, u_b, i_b) = (col(|s| s.u_end_a), col(|s| s.i_a), col(|s| s.u_end_b), col(|s| s.i_b));
            ends.alice.send_sample(bit, block, interleave(&u_a, &i_a))?;
            ends.bob.send_sample(bit, block, interleave(&u_b, &i_b))?;
            if let Some(e) = ends.eve.as_mut() {
                let u_mid = col(|s| s.u_mid);
                let i_mid: Vec<f64> = samples.iter().map(|s| 0.5 * (s.i_a - s.i_b)).collect();
                e.send_sample(bit, block, interleave(&u_mid, &i_mid))?;
            }
        }
        report.bits = bit + 1;
    }
    unreachable!()
}

/// Two separate ideal loops: Alice against Eve's first termination, Eve's
/// second termination against Bob.
fn split_block(
    p: &SplitPeriod,
    ua: &[f64],
    ub: &[f64],
    r_a: f64,
    r_b: f64,
    range: std::ops::Range<usize>,
    dt: f64,
) -> Result<Vec<EndSample>, NetError> {
    let left = solve_ideal(ua, &p.u_e1[range.clone()], r_a, p.r_e1, dt)?;
    let right = solve_ideal(&p.u_e2[range], ub, p.r_e2, r_b, dt)?;
    Ok((0..ua.len())
        .map(|n| EndSample {
            u_end_a: left.u_ch[n],
            u_end_b: right.u_ch[n],
            i_a: left.i_ch[n],
            i_b: -right.i_ch[n],
            u_mid: left.u_ch[n],
        })
        .collect())
}
